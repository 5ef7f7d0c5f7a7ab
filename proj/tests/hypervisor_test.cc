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


#include "iris/hypervisor.h"

#include <algorithm>

#include <gtest/gtest.h>

#include "iris/guest.h"
#include "iris/replayer.h"
#include "test_util.h"

namespace iris {
namespace {

using testing::booted_vcpu;
using testing::cr_qual;
using testing::fresh_vcpu;
using testing::trigger;

std::vector<Block> covered(const Vcpu& v) { return v.coverage.blocks(); }

TEST(Handler, RdtscReturnsOffsetTscInRaxRdx) {
  Vcpu v = booted_vcpu();
  v.hyp.tsc = 0x1'2345'6789ull;
  testing::EventLog log;
  v.vmcs.attach_hook(&log);
  const std::uint64_t offset = 0x10'0000'0000ull;
  v.vmcs.set_raw(Field::kTscOffset, offset);
  const ExitResult r = trigger(v, ExitReason::kRdtsc, {},
                               {{Field::kGuestRip, 0xC0100000}, {Field::kVmExitInstructionLen, 2}});
  v.vmcs.detach_hook(&log);
  ASSERT_EQ(r.outcome.kind, HandlerOutcome::Kind::kResume);
  const std::uint64_t expected = 0x1'2345'6789ull + offset;
  EXPECT_EQ(v.gprs[GprId::kRax], expected & 0xFFFFFFFF);
  EXPECT_EQ(v.gprs[GprId::kRdx], expected >> 32);
  EXPECT_EQ(v.vmcs.raw(Field::kGuestRip), 0xC0100002u);
  EXPECT_TRUE(std::any_of(log.reads.begin(), log.reads.end(),
                          [](auto& e) { return e.first == Field::kTscOffset; }));
  EXPECT_TRUE(std::none_of(log.writes.begin(), log.writes.end(),
                           [](auto& e) { return e.first == Field::kGuestCr0; }));
  EXPECT_EQ(r.cycles, 3500u);
}

TEST(Handler, HltHaltsWithInterruptsEnabled) {
  Vcpu v = booted_vcpu();
  const ExitResult r = trigger(v, ExitReason::kHlt, {},
                               {{Field::kGuestRflags, 0x202}, {Field::kGuestRip, 0xC0100000},
                                {Field::kVmExitInstructionLen, 1}});
  EXPECT_EQ(r.outcome.kind, HandlerOutcome::Kind::kResume);
  EXPECT_TRUE(v.hyp.halted);
  EXPECT_TRUE(v.coverage.covers(Block::kHltBlock));
}

TEST(Handler, UnhandledReasonIsHypervisorCrash) {
  Vcpu v = booted_vcpu();
  const ExitResult r = trigger(v, static_cast<ExitReason>(63));
  EXPECT_EQ(r.outcome.kind, HandlerOutcome::Kind::kHypCrash);
  EXPECT_TRUE(v.coverage.covers(Block::kDispatchUnhandled));
  ASSERT_EQ(v.hyp.crash_log.size(), 1u);
}

TEST(Handler, FailedEntryBitIsVmCrash) {
  Vcpu v = booted_vcpu();
  raise_exit(v.vmcs, ExitReason::kCpuid);
  v.vmcs.set_raw(Field::kExitReason, (1ull << 31) | 10);
  const ExitResult r = handle_exit(v);
  EXPECT_EQ(r.outcome.kind, HandlerOutcome::Kind::kVmCrash);
  EXPECT_TRUE(v.coverage.covers(Block::kDispatchFailedEntry));
}

TEST(CrAccess, SettingPeUpdatesShadowAndMode) {
  Vcpu v = fresh_vcpu();
  ASSERT_EQ(v.hyp.vcpu_mode, CpuMode::kMode1);
  const ExitResult r = trigger(v, ExitReason::kCrAccess, {{GprId::kRax, 0x11}},
                               {{Field::kExitQualification, cr_qual(0, 0, 0)},
                                {Field::kVmExitInstructionLen, 3}});
  ASSERT_EQ(r.outcome.kind, HandlerOutcome::Kind::kResume) << r.outcome.log;
  EXPECT_EQ(v.vmcs.raw(Field::kCr0ReadShadow) & 1, 1u);
  EXPECT_EQ(v.vmcs.raw(Field::kGuestCr0), 0x11u);
  EXPECT_EQ(v.hyp.vcpu_mode, CpuMode::kMode2);
  EXPECT_TRUE(v.coverage.covers(Block::kCrCr0MaskHit));
  EXPECT_TRUE(v.coverage.covers(Block::kCrCr0ModeChange));

  v.gprs[GprId::kRbx] = 0;
  const ExitResult back = trigger(v, ExitReason::kCrAccess, {},
                                  {{Field::kExitQualification, cr_qual(0, 1, 3)},
                                   {Field::kVmExitInstructionLen, 3}});
  ASSERT_EQ(back.outcome.kind, HandlerOutcome::Kind::kResume);
  EXPECT_EQ(v.gprs[GprId::kRbx] & 1, 1u);
}

TEST(CrAccess, PagingWithoutProtectionInjectsGp) {
  Vcpu v = fresh_vcpu();
  const std::uint64_t cr0_before = v.vmcs.raw(Field::kGuestCr0);
  const std::uint64_t shadow_before = v.vmcs.raw(Field::kCr0ReadShadow);
  testing::EventLog log;
  v.vmcs.attach_hook(&log);
  const ExitResult r = trigger(v, ExitReason::kCrAccess, {{GprId::kRax, 0x80000010}},
                               {{Field::kExitQualification, cr_qual(0, 0, 0)}});
  v.vmcs.detach_hook(&log);
  EXPECT_EQ(r.outcome.kind, HandlerOutcome::Kind::kInjectFault);
  EXPECT_EQ(r.outcome.vector, kVectorGp);
  EXPECT_EQ(v.vmcs.raw(Field::kGuestCr0), cr0_before);
  EXPECT_EQ(v.vmcs.raw(Field::kCr0ReadShadow), shadow_before);
  for (const auto& [f, value] : log.writes) EXPECT_EQ(f, Field::kVmEntryIntrInfo);
  // The hypothetical state would have failed entry check (1).
  Vmcs hypothetical = v.vmcs;
  hypothetical.set_raw(Field::kGuestCr0, 0x80000010);
  EXPECT_FALSE(vm_entry_check(hypothetical).ok());
}

TEST(CrAccess, MaskHitAndPassThroughCoverDifferentBlocks) {
  Vcpu a = booted_vcpu();
  Vcpu b = a;
  const std::uint64_t cr0 = a.vmcs.raw(Field::kGuestCr0);
  trigger(a, ExitReason::kCrAccess, {{GprId::kRax, cr0 | cr0::kTs}},
          {{Field::kExitQualification, cr_qual(0, 0, 0)}, {Field::kGuestRip, 0xC0100000}});
  trigger(b, ExitReason::kCrAccess, {{GprId::kRax, cr0 | cr0::kMp}},
          {{Field::kExitQualification, cr_qual(0, 0, 0)}, {Field::kGuestRip, 0xC0100000}});
  EXPECT_TRUE(a.coverage.covers(Block::kCrCr0MaskHit));
  EXPECT_TRUE(b.coverage.covers(Block::kCrCr0PassThrough));
  EXPECT_NE(a.coverage, b.coverage);
}

TEST(CrAccess, MaskWithoutPeTripsAssertion) {
  Vcpu v = booted_vcpu();
  v.vmcs.set_raw(Field::kCr0GuestHostMask, v.vmcs.raw(Field::kCr0GuestHostMask) & ~cr0::kPe);
  const ExitResult r = trigger(v, ExitReason::kCrAccess, {{GprId::kRax, 0}},
                               {{Field::kExitQualification, cr_qual(0, 1, 0)}});
  EXPECT_EQ(r.outcome.kind, HandlerOutcome::Kind::kHypCrash);
}

TEST(CrAccess, PrologueWithoutEmulationCrashesTheVm) {
  Vcpu v = fresh_vcpu();
  GuestState g = guest_state_from(v);
  HypConfig cfg;
  cfg.emulate_cr_access = false;
  const RunResult r = run_program(v, g, protected_mode_switch_program(), 100, nullptr, cfg);
  EXPECT_EQ(r.last.kind, HandlerOutcome::Kind::kVmCrash);
  EXPECT_NE(r.last.log.find("PG"), std::string::npos) << r.last.log;
}

TEST(Vmcall, PlantedIndexBugIsHypervisorCrash) {
  Vcpu v = booted_vcpu();
  const ExitResult ok = trigger(v, ExitReason::kVmcall,
                                {{GprId::kRax, 34}, {GprId::kRbx, 1}, {GprId::kRcx, 7}},
                                {{Field::kGuestRip, 0xC0100000}});
  EXPECT_EQ(ok.outcome.kind, HandlerOutcome::Kind::kResume);
  const ExitResult bad = trigger(v, ExitReason::kVmcall,
                                 {{GprId::kRax, 34}, {GprId::kRbx, 1}, {GprId::kRcx, 8}},
                                 {{Field::kGuestRip, 0xC0100000}});
  EXPECT_EQ(bad.outcome.kind, HandlerOutcome::Kind::kHypCrash);
  const ExitResult rejected = trigger(v, ExitReason::kVmcall,
                                      {{GprId::kRax, 34}, {GprId::kRbx, 1}, {GprId::kRcx, 9}},
                                      {{Field::kGuestRip, 0xC0100000}});
  EXPECT_EQ(rejected.outcome.kind, HandlerOutcome::Kind::kResume);
  EXPECT_TRUE(v.coverage.covers(Block::kVmcallHvmBadIndex));
}

TEST(Handler, WideGprsAreTruncated) {
  Vcpu v = booted_vcpu();
  trigger(v, ExitReason::kCpuid, {{GprId::kR9, 0xAB'0000'0001ull}},
          {{Field::kGuestRip, 0xC0100000}});
  EXPECT_TRUE(v.coverage.covers(Block::kDispatchTruncateGprs));
  EXPECT_EQ(v.gprs[GprId::kR9], 1u);
}

TEST(PreemptionTimer, MinimalPathAndRearm) {
  auto session = start_dummy_vm();
  Vcpu& v = session->vcpu();
  const ExitResult r = trigger(v, ExitReason::kPreemptionTimer);
  EXPECT_EQ(r.outcome.kind, HandlerOutcome::Kind::kResume);
  EXPECT_EQ(v.vmcs.raw(Field::kPreemptionTimerValue), 0u);
  const std::vector<Block> expected = {Block::kDispatchEntry, Block::kDispatchVmEntry,
                                       Block::kTimerEntry, Block::kTimerRearm};
  std::vector<Block> got = covered(v);
  std::sort(got.begin(), got.end());
  std::vector<Block> want = expected;
  std::sort(want.begin(), want.end());
  EXPECT_EQ(got, want);
}

TEST(PreemptionTimer, FiveThousandResumesLeaveGuestUntouched) {
  auto session = start_dummy_vm();
  Vcpu& v = session->vcpu();
  const GuestState before = guest_state_from(v);
  const std::uint64_t rip = v.vmcs.raw(Field::kGuestRip);
  for (int i = 0; i < 5000; ++i) {
    ASSERT_EQ(trigger(v, ExitReason::kPreemptionTimer).outcome.kind,
              HandlerOutcome::Kind::kResume);
  }
  EXPECT_EQ(v.vmcs.raw(Field::kGuestRip), rip);
  EXPECT_EQ(guest_state_from(v).pc, before.pc);
  EXPECT_EQ(guest_state_from(v).virtual_cycles, before.virtual_cycles);
}

TEST(Coverage, ResetSnapshotAndDeterminism) {
  Vcpu v = booted_vcpu();
  v.coverage.reset();
  EXPECT_TRUE(v.coverage.empty());
  Vcpu a = v, b = v;
  const ExitResult ra = trigger(a, ExitReason::kRdtsc, {}, {{Field::kGuestRip, 0xC0100000}});
  const ExitResult rb = trigger(b, ExitReason::kRdtsc, {}, {{Field::kGuestRip, 0xC0100000}});
  EXPECT_EQ(a, b);
  EXPECT_EQ(ra.outcome, rb.outcome);
  EXPECT_EQ(ra.cycles, rb.cycles);
  for (Block blk : a.coverage.blocks()) {
    const auto h = block_info(blk).handler;
    EXPECT_TRUE(h == "dispatch" || h == "rdtsc" || h == "advance_rip") << block_info(blk).name;
  }
}

TEST(CostModel, PerReasonCosts) {
  EXPECT_EQ(exit_cost(ExitReason::kRdtsc), 2000u + 1500u);
  EXPECT_EQ(exit_cost(ExitReason::kCrAccess), 2000u + 6000u);
  EXPECT_EQ(exit_cost(ExitReason::kIoInstruction), 2000u + 8000u);
  EXPECT_EQ(exit_cost(ExitReason::kCpuid), 2000u + 3000u);
  EXPECT_EQ(exit_cost(ExitReason::kPreemptionTimer), 2000u + 3000u);
  Vcpu v = booted_vcpu();
  const std::uint64_t t0 = v.hyp.tsc;
  trigger(v, ExitReason::kIoInstruction, {}, {{Field::kGuestRip, 0xC0100000}});
  EXPECT_EQ(v.hyp.tsc - t0, 10000u);
}

TEST(HandlerProperty, ModeSyncAfterEveryResume) {
  for (Profile p : kAllProfiles) {
    Vcpu v = p == Profile::kOsBoot ? fresh_vcpu() : booted_vcpu();
    GuestState g = guest_state_from(v);
    const GuestProgram prog = generate_program(build_profile(p), 800, 99);
    struct Check final : ExitObserver {
      void begin_exit(Vcpu&, ExitReason) override {}
      void end_exit(Vcpu& v, const ExitResult& r) override {
        if (r.outcome.crashed()) return;
        ++resumes;
        EXPECT_EQ(v.hyp.vcpu_mode, classify_cr0_mode(v.vmcs.raw(Field::kGuestCr0)));
        EXPECT_TRUE(vm_entry_check(v.vmcs).ok());
      }
      std::size_t resumes = 0;
    } check;
    const RunResult r = run_program(v, g, prog, 800, &check);
    EXPECT_EQ(check.resumes, r.exits) << profile_name(p);
  }
}

}  // namespace
}  // namespace iris
