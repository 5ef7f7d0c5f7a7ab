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


#ifndef IRIS_FUZZER_H_
#define IRIS_FUZZER_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "iris/hypervisor.h"
#include "iris/replayer.h"
#include "iris/rng.h"
#include "iris/trace.h"

namespace iris {

inline constexpr std::size_t kDefaultMutants = 10000;

enum class SeedArea : std::uint8_t { kVmcs, kGpr };

std::string_view seed_area_name(SeedArea area);
bool parse_seed_area(std::string_view text, SeedArea& out);

struct Mutation {
  SeedArea area = SeedArea::kVmcs;
  std::size_t entry_index = 0;
  unsigned bit_index = 0;
  friend bool operator==(const Mutation&, const Mutation&) = default;
};

class EmptyArea : public std::invalid_argument {
 public:
  explicit EmptyArea(SeedArea area);
};

struct MutatedSeed {
  VmSeed seed;
  Mutation mutation;
};

// Flips one uniformly chosen bit of one uniformly chosen entry in `area`.
MutatedSeed mutate_single_bitflip(const VmSeed& seed, SeedArea area, Rng& rng);
VmSeed apply_mutation(const VmSeed& seed, const Mutation& m);

enum class FailureKind : std::uint8_t { kNone, kVmCrash, kHypCrash, kAborted };

std::string_view failure_kind_name(FailureKind kind);
FailureKind detect_failure(const HandlerOutcome& outcome);

// Which trace position a campaign mutates.
struct SeedSelector {
  enum class Kind : std::uint8_t { kIndex, kFirstOfReason };
  Kind kind = Kind::kIndex;
  std::size_t index = 0;
  ExitReason reason = ExitReason::kExternalInterrupt;

  // "index:N" or "first-of-reason:NAME".
  static SeedSelector parse(std::string_view text);
  std::string to_string() const;
  // nullopt when the trace holds no matching exit.
  std::optional<std::size_t> resolve(const TraceFile& trace) const;
};

struct TestCase {
  std::string trace_id;
  std::size_t seed_index = 0;
  SeedArea area = SeedArea::kVmcs;
  std::size_t mutants = kDefaultMutants;
  std::uint64_t rng_seed = 0;
  unsigned workers = 1;
};

struct CrashArtifact {
  std::size_t mutant_index = 0;
  Mutation mutation;
  FailureKind kind = FailureKind::kNone;
  std::string log;
  VmSeed seed;
  ExitMetrics metrics;
};

struct CampaignResult {
  TestCase test_case;
  std::uint16_t exit_reason = 0;
  HandlerOutcome baseline_outcome;
  CoverageBitmap baseline_coverage;
  // Baseline plus every mutant.
  CoverageBitmap campaign_coverage;
  std::map<FailureKind, std::size_t> failures;
  std::vector<CrashArtifact> artifacts;
  // Session state right before seed_R, shared by every mutant.
  Vcpu s1;
};

class CorruptTrace : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyBaseline : public std::domain_error {
 public:
  EmptyBaseline() : std::domain_error("baseline coverage is empty") {}
};

// Replays [0, R) from `s0` (a fresh dummy VM when null), then runs every
// mutant of seed R from the resulting state.
CampaignResult run_test_case(const TraceFile& trace, const TestCase& tc, const Vcpu* s0 = nullptr);

std::map<std::uint16_t, double> coverage_delta(const CampaignResult& result);

// Replays one crashing seed from s1 in a fresh session.
FailureKind rerun_artifact(const Vcpu& s1, const VmSeed& seed);

// Crash seeds packaged as a trace fragment, one record per artifact.
TraceFile artifact_fragment(const CampaignResult& result);

}  // namespace iris

#endif  // IRIS_FUZZER_H_
