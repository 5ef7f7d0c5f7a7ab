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


#include "iris/fuzzer.h"

#include <bit>

#include <gtest/gtest.h>

#include "test_util.h"

namespace iris {
namespace {

VmSeed read_seed(std::uint64_t value) {
  VmSeed s;
  s.exit_reason = code_of(ExitReason::kCrAccess);
  s.gpr_entries = gpr_entries_of(GprFile{});
  s.read_entries.push_back({EntryFlag::kVmcsRead, encoding_of(Field::kExitQualification), value});
  return s;
}

const TraceFile& boot_trace() {
  static const TraceFile t = [] {
    Vcpu v = testing::fresh_vcpu();
    return record_program(v, generate_program(build_profile(Profile::kOsBoot), 300, 12),
                          "OS_BOOT", 12, 300)
        .trace;
  }();
  return t;
}

std::size_t first_of(ExitReason r) {
  return *SeedSelector{SeedSelector::Kind::kFirstOfReason, 0, r}.resolve(boot_trace());
}

TEST(Mutation, FlipsTheChosenBit) {
  const VmSeed s = read_seed(0xFFFFFFF0);
  const VmSeed m = apply_mutation(s, {SeedArea::kVmcs, 0, 0});
  EXPECT_EQ(m.read_entries[0].value, 0xFFFFFFF1u);
  EXPECT_EQ(m.gpr_entries, s.gpr_entries);
  EXPECT_EQ(apply_mutation(s, {SeedArea::kVmcs, 0, 63}).read_entries[0].value,
            0x80000000FFFFFFF0ULL);
}

TEST(Mutation, GprAreaLeavesReadsAlone) {
  const VmSeed s = read_seed(5);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const MutatedSeed m = mutate_single_bitflip(s, SeedArea::kGpr, rng);
    EXPECT_EQ(m.mutation.area, SeedArea::kGpr);
    EXPECT_LT(m.mutation.entry_index, kGprCount);
    EXPECT_EQ(m.seed.read_entries, s.read_entries);
    EXPECT_EQ(m.seed.exit_reason, s.exit_reason);
  }
}

TEST(Mutation, EmptyAreaIsAnError) {
  VmSeed s = read_seed(0);
  s.read_entries.clear();
  Rng rng(1);
  EXPECT_THROW(mutate_single_bitflip(s, SeedArea::kVmcs, rng), EmptyArea);
  EXPECT_NO_THROW(mutate_single_bitflip(s, SeedArea::kGpr, rng));
}

std::size_t hamming(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += std::popcount(static_cast<unsigned>(a[i] ^ b[i]));
  return d;
}

TEST(MutationProperty, ExactlyOneBitChangesAndFlippingAgainRestores) {
  Rng gen(404);
  for (int i = 0; i < 300; ++i) {
    const VmSeed s = testing::random_seed(gen);
    const SeedArea area = s.read_entries.empty() || gen.chance(0.5) ? SeedArea::kGpr : SeedArea::kVmcs;
    const MutatedSeed m = mutate_single_bitflip(s, area, gen);
    const auto a = serialize_seed(s), b = serialize_seed(m.seed);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(hamming(a, b), 1u);
    EXPECT_LT(m.mutation.bit_index, 64u);
    EXPECT_EQ(apply_mutation(m.seed, m.mutation), s);
    EXPECT_EQ(apply_mutation(s, m.mutation), m.seed);
  }
}

TEST(Failure, OutcomeMapping) {
  EXPECT_EQ(detect_failure(HandlerOutcome::resume()), FailureKind::kNone);
  EXPECT_EQ(detect_failure(HandlerOutcome::inject(13)), FailureKind::kNone);
  EXPECT_EQ(detect_failure(HandlerOutcome::vm_crash("x")), FailureKind::kVmCrash);
  EXPECT_EQ(detect_failure(HandlerOutcome::hyp_crash("x")), FailureKind::kHypCrash);
  EXPECT_EQ(failure_kind_name(FailureKind::kAborted), "Aborted");
}

TEST(Area, NamesParse) {
  SeedArea a{};
  ASSERT_TRUE(parse_seed_area("VMCS", a));
  EXPECT_EQ(a, SeedArea::kVmcs);
  ASSERT_TRUE(parse_seed_area("gpr", a));
  EXPECT_EQ(a, SeedArea::kGpr);
  EXPECT_FALSE(parse_seed_area("memory", a));
}

TEST(Selector, ParsesAndResolves) {
  const SeedSelector idx = SeedSelector::parse("index:4");
  EXPECT_EQ(idx.kind, SeedSelector::Kind::kIndex);
  EXPECT_EQ(idx.resolve(boot_trace()), 4u);
  EXPECT_EQ(SeedSelector::parse("index:100000").resolve(boot_trace()), std::nullopt);
  const SeedSelector cr = SeedSelector::parse("first-of-reason:CrAccess");
  EXPECT_EQ(cr.to_string(), "first-of-reason:CrAccess");
  EXPECT_EQ(SeedSelector::parse(cr.to_string()).resolve(boot_trace()), cr.resolve(boot_trace()));
  EXPECT_EQ(boot_trace().records.at(*cr.resolve(boot_trace())).seed.exit_reason,
            code_of(ExitReason::kCrAccess));
  EXPECT_EQ(SeedSelector::parse("first-of-reason:Vmcall").resolve(boot_trace()), std::nullopt);
  EXPECT_THROW(SeedSelector::parse("index:x"), std::invalid_argument);
  EXPECT_THROW(SeedSelector::parse("first-of-reason:Bogus"), std::invalid_argument);
  EXPECT_THROW(SeedSelector::parse("last"), std::invalid_argument);
}

TEST(Campaign, SingleMutant) {
  TestCase tc{"boot", first_of(ExitReason::kIoInstruction), SeedArea::kVmcs, 1, 3, 1};
  const CampaignResult r = run_test_case(boot_trace(), tc);
  std::size_t total = 0;
  for (const auto& [kind, n] : r.failures) total += n;
  EXPECT_EQ(total, 1u);
  EXPECT_EQ(r.exit_reason, code_of(ExitReason::kIoInstruction));
}

TEST(Campaign, CoverageContainsBaseline) {
  TestCase tc{"boot", first_of(ExitReason::kCrAccess), SeedArea::kVmcs, 400, 8, 1};
  const CampaignResult r = run_test_case(boot_trace(), tc);
  EXPECT_FALSE(r.baseline_coverage.empty());
  EXPECT_EQ(r.baseline_coverage.minus(r.campaign_coverage).count(), 0u);
  EXPECT_GE(coverage_delta(r).at(r.exit_reason), 0.0);
}

TEST(Campaign, NoMutationsMeansNoDelta) {
  CampaignResult r;
  r.exit_reason = 16;
  r.baseline_coverage.hit(static_cast<Block>(0));
  r.campaign_coverage = r.baseline_coverage;
  EXPECT_EQ(coverage_delta(r).at(16), 0.0);
  r.campaign_coverage.hit(static_cast<Block>(1));
  EXPECT_DOUBLE_EQ(coverage_delta(r).at(16), 100.0);
  r.baseline_coverage.reset();
  EXPECT_THROW(coverage_delta(r), EmptyBaseline);
}

TEST(Campaign, IsReproducibleAndWorkerIndependent) {
  TestCase tc{"boot", first_of(ExitReason::kCrAccess), SeedArea::kVmcs, 300, 77, 1};
  const CampaignResult a = run_test_case(boot_trace(), tc);
  const CampaignResult b = run_test_case(boot_trace(), tc);
  tc.workers = 3;
  const CampaignResult c = run_test_case(boot_trace(), tc);
  for (const CampaignResult* other : {&b, &c}) {
    EXPECT_EQ(a.failures, other->failures);
    EXPECT_EQ(a.campaign_coverage, other->campaign_coverage);
    ASSERT_EQ(a.artifacts.size(), other->artifacts.size());
    for (std::size_t i = 0; i < a.artifacts.size(); ++i) {
      EXPECT_EQ(a.artifacts[i].mutant_index, other->artifacts[i].mutant_index);
      EXPECT_EQ(a.artifacts[i].seed, other->artifacts[i].seed);
    }
  }
}

TEST(Campaign, CrashesReproduceFromS1) {
  TestCase tc{"boot", first_of(ExitReason::kCrAccess), SeedArea::kVmcs, 500, 5, 1};
  const CampaignResult r = run_test_case(boot_trace(), tc);
  ASSERT_FALSE(r.artifacts.empty());
  for (const auto& art : r.artifacts) {
    EXPECT_TRUE(art.kind == FailureKind::kVmCrash || art.kind == FailureKind::kHypCrash);
    EXPECT_EQ(rerun_artifact(r.s1, art.seed), art.kind) << art.log;
    EXPECT_EQ(apply_mutation(boot_trace().records[tc.seed_index].seed, art.mutation), art.seed);
  }
  const TraceFile frag = artifact_fragment(r);
  EXPECT_EQ(frag.records.size(), r.artifacts.size());
  EXPECT_EQ(frag.header.exit_count, r.artifacts.size());
  EXPECT_EQ(deserialize_trace(serialize_trace(frag)), frag);
}

TEST(Campaign, RejectsBadInputs) {
  TestCase tc{"boot", boot_trace().records.size(), SeedArea::kVmcs, 10, 1, 1};
  EXPECT_THROW(run_test_case(boot_trace(), tc), std::invalid_argument);
  tc.seed_index = 0;
  tc.mutants = 0;
  EXPECT_THROW(run_test_case(boot_trace(), tc), std::invalid_argument);
}

TEST(Campaign, BrokenPrefixIsCorrupt) {
  TraceFile t = boot_trace();
  t.records[0].seed.read_entries.clear();
  const std::size_t r = first_of(ExitReason::kIoInstruction);
  ASSERT_GT(r, 0u);
  TestCase tc{"boot", r, SeedArea::kGpr, 5, 1, 1};
  EXPECT_THROW(run_test_case(t, tc), CorruptTrace);
}

}  // namespace
}  // namespace iris
