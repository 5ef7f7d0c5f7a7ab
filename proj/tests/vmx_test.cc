// Copyright 2026 The irisim Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "iris/vmx.h"

#include <set>

#include <gtest/gtest.h>

#include "iris/rng.h"
#include "test_util.h"

namespace iris {
namespace {

// Mode table written out bit by bit, independent of classify_cr0_mode's
// branch order.
CpuMode mode_oracle(std::uint64_t v) {
  const bool pe = v & 1, ts = (v >> 3) & 1, am = (v >> 18) & 1, nw = (v >> 29) & 1,
             cd = (v >> 30) & 1, pg = (v >> 31) & 1;
  if (!pe) return CpuMode::kMode1;
  if (!pg) return CpuMode::kMode2;
  if (!am) return CpuMode::kMode3;
  if (ts && cd) return CpuMode::kMode7;
  if (ts) return CpuMode::kMode5;
  if (!cd && !nw) return CpuMode::kMode6;
  return CpuMode::kMode4;
}

Vmcs launched() {
  Vmcs m;
  m.clear();
  m.launch();
  return m;
}

TEST(VmcsLifecycle, ClearFromInactiveZeroesEverything) {
  Vmcs m;
  EXPECT_EQ(m.launch_state(), LaunchState::kInactive);
  m.mutable_values()[5] = 42;
  m.clear();
  EXPECT_EQ(m.launch_state(), LaunchState::kActiveCurrentClear);
  for (auto v : m.values()) EXPECT_EQ(v, 0u);
  EXPECT_EQ(m.read(Field::kGuestCr0), 0u);
}

TEST(VmcsLifecycle, ReclearAfterLaunch) {
  Vmcs m = launched();
  EXPECT_EQ(m.launch_state(), LaunchState::kActiveCurrentLaunched);
  m.clear();
  EXPECT_EQ(m.launch_state(), LaunchState::kActiveCurrentClear);
}

TEST(VmcsLifecycle, LaunchRequiresClearState) {
  Vmcs m;
  EXPECT_THROW(m.launch(), VmxError);
  m.load();
  EXPECT_EQ(m.launch_state(), LaunchState::kActiveCurrentClear);
  m.launch();
  EXPECT_THROW(m.launch(), VmxError);
  m.load();
  EXPECT_EQ(m.launch_state(), LaunchState::kActiveCurrentLaunched);
}

TEST(VmcsAccess, ReadYourWrite) {
  Vmcs m = launched();
  m.write(Field::kGuestCr0, 0x1);
  EXPECT_EQ(m.read(Field::kGuestCr0), 0x1u);
  m.write(Field::kGuestRip, 0x7C00);
  EXPECT_EQ(m.read(Field::kGuestRip), 0x7C00u);
}

TEST(VmcsAccess, UnknownEncodings) {
  Vmcs m = launched();
  try {
    m.read(200u);
    FAIL() << "read of encoding 200 succeeded";
  } catch (const VmxError& e) {
    EXPECT_EQ(e.code(), VmxErrc::kUnknownField);
  }
  EXPECT_EQ(find_field(146), nullptr);
  EXPECT_THROW(m.read(146u), VmxError);
  EXPECT_THROW(m.write(146u, 1), VmxError);
}

TEST(VmcsAccess, ExitInfoIsReadOnly) {
  Vmcs m = launched();
  try {
    m.write(Field::kExitQualification, 5);
    FAIL() << "write to EXIT_QUALIFICATION succeeded";
  } catch (const VmxError& e) {
    EXPECT_EQ(e.code(), VmxErrc::kReadOnlyField);
  }
}

TEST(VmcsAccess, ShadowIsIndependentOfCr0) {
  Vmcs m = launched();
  m.write(Field::kGuestCr0, 0x10);
  m.write(Field::kCr0ReadShadow, 0x1);
  EXPECT_EQ(m.read(Field::kCr0ReadShadow), 0x1u);
  EXPECT_EQ(m.read(Field::kGuestCr0), 0x10u);
}

TEST(VmcsAccess, HooksSeeEventsButRawAccessIsSilent) {
  Vmcs m = launched();
  testing::EventLog log;
  m.attach_hook(&log);
  m.write(Field::kGuestRsp, 9);
  (void)m.read(Field::kGuestRsp);
  m.set_raw(Field::kGuestRsp, 10);
  (void)m.raw(Field::kGuestRsp);
  ASSERT_EQ(log.writes.size(), 1u);
  ASSERT_EQ(log.reads.size(), 1u);
  EXPECT_EQ(log.reads[0].second, 9u);
  m.detach_hook(&log);
  (void)m.read(Field::kGuestRsp);
  EXPECT_EQ(log.reads.size(), 1u);
}

TEST(VmcsAccess, CopiesDropHooksAndAssignmentKeepsThem) {
  Vmcs a = launched();
  testing::EventLog log;
  a.attach_hook(&log);
  Vmcs b(a);
  EXPECT_TRUE(b.hooks().empty());
  Vmcs c = launched();
  c.set_raw(Field::kGuestRip, 77);
  a = c;
  EXPECT_EQ(a.hooks().size(), 1u);
  EXPECT_EQ(a.raw(Field::kGuestRip), 77u);
}

TEST(VmcsProperty, RoundTripEveryReadWriteField) {
  Rng rng(3);
  Vmcs m = launched();
  for (int i = 0; i < 5000; ++i) {
    const auto fields = vmcs_field_table();
    const auto& spec = fields[rng.below(fields.size())];
    const auto f = static_cast<Field>(spec.compact_encoding);
    const std::uint64_t v = rng.next();
    if (spec.access == FieldAccess::kReadOnly) {
      EXPECT_THROW(m.write(f, v), VmxError);
    } else {
      m.write(f, v);
      ASSERT_EQ(m.read(f), v) << spec.name;
    }
  }
}

TEST(FieldTable, EncodingsAreUniqueAndTotal) {
  std::set<unsigned> seen;
  for (const auto& spec : vmcs_field_table()) {
    EXPECT_TRUE(seen.insert(spec.compact_encoding).second);
    EXPECT_LT(spec.compact_encoding, kVmcsEncodingSpace);
    const VmcsFieldSpec* found = find_field(spec.compact_encoding);
    ASSERT_NE(found, nullptr);
    EXPECT_EQ(found->name, spec.name);
    EXPECT_EQ(encoding_of(field_from_encoding(spec.compact_encoding)), spec.compact_encoding);
  }
  for (unsigned e = 0; e < seen.size(); ++e) EXPECT_TRUE(seen.contains(e)) << e;
  for (unsigned e = static_cast<unsigned>(seen.size()); e < 256; ++e) {
    EXPECT_EQ(find_field(e), nullptr) << e;
  }
}

TEST(FieldTable, ExitInfoExactlyReadOnly) {
  for (const auto& spec : vmcs_field_table()) {
    EXPECT_EQ(spec.area == VmcsArea::kExitInfo, spec.access == FieldAccess::kReadOnly)
        << spec.name;
  }
}

TEST(FieldTable, HashIsFnvOfCsv) {
  const std::string csv = field_table_csv();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : csv) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  EXPECT_EQ(field_table_hash(), h);
  EXPECT_EQ(csv.rfind("compact_encoding,name,area,access\n", 0), 0u);
}

TEST(GprFile, FifteenRegisters) {
  GprFile g;
  EXPECT_EQ(g.values().size(), 15u);
  g[GprId::kR15] = 9;
  EXPECT_EQ(g.at(14), 9u);
  EXPECT_THROW(g.at(15), std::out_of_range);
  EXPECT_EQ(gpr_name(GprId::kRax), "RAX");
}

TEST(ExitReasons, CodeTable) {
  const std::pair<ExitReason, unsigned> expected[] = {
      {ExitReason::kExternalInterrupt, 1}, {ExitReason::kTripleFault, 2},
      {ExitReason::kInterruptWindow, 7},   {ExitReason::kCpuid, 10},
      {ExitReason::kHlt, 12},              {ExitReason::kRdtsc, 16},
      {ExitReason::kVmcall, 18},           {ExitReason::kCrAccess, 28},
      {ExitReason::kIoInstruction, 30},    {ExitReason::kRdmsr, 31},
      {ExitReason::kWrmsr, 32},            {ExitReason::kEptViolation, 48},
      {ExitReason::kPreemptionTimer, 52}};
  EXPECT_EQ(named_exit_reasons().size(), std::size(expected));
  for (const auto& [r, code] : expected) {
    EXPECT_EQ(code_of(r), code);
    ExitReason parsed{};
    ASSERT_TRUE(parse_exit_reason(exit_reason_name(r), parsed));
    EXPECT_EQ(parsed, r);
  }
  EXPECT_FALSE(is_named(static_cast<ExitReason>(63)));
}

TEST(CpuModes, Examples) {
  EXPECT_EQ(classify_cr0_mode(0x0), CpuMode::kMode1);
  EXPECT_EQ(classify_cr0_mode(0x1), CpuMode::kMode2);
  EXPECT_EQ(classify_cr0_mode(0x80000001), CpuMode::kMode3);
}

TEST(CpuModes, MatchesBitOracleAndCoversSevenClasses) {
  Rng rng(11);
  std::set<CpuMode> seen;
  const std::uint64_t interesting = cr0::kPe | cr0::kTs | cr0::kAm | cr0::kNw | cr0::kCd | cr0::kPg;
  for (std::uint64_t bits = 0; bits < 64; ++bits) {
    std::uint64_t v = 0;
    int k = 0;
    for (std::uint64_t b = interesting; b; b &= b - 1, ++k) {
      if (bits >> k & 1) v |= b & -b;
    }
    ASSERT_EQ(classify_cr0_mode(v), mode_oracle(v)) << std::hex << v;
    seen.insert(classify_cr0_mode(v));
  }
  for (int i = 0; i < 20000; ++i) {
    const std::uint64_t v = rng.next();
    ASSERT_EQ(classify_cr0_mode(v), mode_oracle(v)) << std::hex << v;
  }
  EXPECT_EQ(seen.size(), 7u);
}

class EntryChecks : public ::testing::Test {
 protected:
  Vcpu v = testing::booted_vcpu();
  Vmcs& m = v.vmcs;

  std::vector<EntryViolation> kinds() {
    std::vector<EntryViolation> out;
    for (const auto& r : vm_entry_check(m).violations) out.push_back(r.kind);
    return out;
  }
};

TEST_F(EntryChecks, BootedStateIsValid) { EXPECT_TRUE(vm_entry_check(m).ok()); }

TEST_F(EntryChecks, PagingWithoutProtection) {
  m.set_raw(Field::kGuestCr0, cr0::kPg | cr0::kEt);
  m.set_raw(Field::kGuestRip, 0x1000);
  m.set_raw(Field::kGuestCsSelector, 0);
  const auto k = kinds();
  ASSERT_FALSE(k.empty());
  EXPECT_EQ(k.front(), EntryViolation::kCr0PgWithoutPe);
}

TEST_F(EntryChecks, BadRipInRealMode) {
  m.set_raw(Field::kGuestCr0, cr0::kEt);
  m.set_raw(Field::kGuestRip, 1ull << 32);
  const CheckResult r = vm_entry_check(m);
  ASSERT_FALSE(r.ok());
  EXPECT_EQ(r.violations.front().kind, EntryViolation::kBadRipForMode);
  EXPECT_EQ(r.first_log(), "bad RIP for mode 0");
}

TEST_F(EntryChecks, ReservedNwAndGdtr) {
  m.set_raw(Field::kGuestCr0, m.raw(Field::kGuestCr0) | (1ull << 40));
  EXPECT_EQ(kinds(), std::vector{EntryViolation::kCr0ReservedBits});
  m.set_raw(Field::kGuestCr0, (m.raw(Field::kGuestCr0) & ~(1ull << 40)) | cr0::kNw);
  EXPECT_EQ(kinds(), std::vector{EntryViolation::kCr0NwWithoutCd});
  m.set_raw(Field::kGuestCr0, m.raw(Field::kGuestCr0) | cr0::kCd);
  EXPECT_TRUE(kinds().empty());
  m.set_raw(Field::kGuestGdtrLimit, 0x10000);
  const auto k = kinds();
  EXPECT_NE(std::find(k.begin(), k.end(), EntryViolation::kGdtrLimitTooLarge), k.end());
}

TEST_F(EntryChecks, CsSelectorRules) {
  m.set_raw(Field::kGuestCsSelector, 0x0B);  // RPL 3
  EXPECT_EQ(kinds(), std::vector{EntryViolation::kBadCsForMode});
  m.set_raw(Field::kGuestCr0, cr0::kEt);
  m.set_raw(Field::kGuestCsSelector, 0xFFFF);
  m.set_raw(Field::kGuestRip, 0x10);
  EXPECT_EQ(kinds(), std::vector{EntryViolation::kBadCsForMode});
  m.set_raw(Field::kGuestCsSelector, 0xF000);
  m.set_raw(Field::kGuestRip, 0xFFF0);
  EXPECT_TRUE(kinds().empty());
}

TEST_F(EntryChecks, InactiveVmcsIsAnError) {
  Vmcs inactive;
  EXPECT_THROW(vm_entry_check(inactive), VmxError);
}

}  // namespace
}  // namespace iris
