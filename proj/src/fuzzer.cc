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

#include <algorithm>
#include <cctype>
#include <charconv>
#include <thread>

#include <fmt/format.h>

namespace iris {

std::string_view seed_area_name(SeedArea area) {
  return area == SeedArea::kVmcs ? "vmcs" : "gpr";
}

bool parse_seed_area(std::string_view text, SeedArea& out) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "vmcs") {
    out = SeedArea::kVmcs;
    return true;
  }
  if (lower == "gpr") {
    out = SeedArea::kGpr;
    return true;
  }
  return false;
}

EmptyArea::EmptyArea(SeedArea area)
    : std::invalid_argument(fmt::format("seed has no {} entries to mutate", seed_area_name(area))) {}

namespace {

const std::vector<SeedEntry>& area_entries(const VmSeed& seed, SeedArea area) {
  return area == SeedArea::kGpr ? seed.gpr_entries : seed.read_entries;
}

Mutation draw_mutation(const VmSeed& seed, SeedArea area, Rng& rng) {
  const auto& entries = area_entries(seed, area);
  if (entries.empty()) throw EmptyArea(area);
  Mutation m;
  m.area = area;
  m.entry_index = rng.below(entries.size());
  m.bit_index = static_cast<unsigned>(rng.below(64));
  return m;
}

}  // namespace

VmSeed apply_mutation(const VmSeed& seed, const Mutation& m) {
  VmSeed out = seed;
  auto& entries = m.area == SeedArea::kGpr ? out.gpr_entries : out.read_entries;
  if (m.entry_index >= entries.size()) throw EmptyArea(m.area);
  entries[m.entry_index].value ^= 1ull << (m.bit_index & 63u);
  return out;
}

MutatedSeed mutate_single_bitflip(const VmSeed& seed, SeedArea area, Rng& rng) {
  const Mutation m = draw_mutation(seed, area, rng);
  return {apply_mutation(seed, m), m};
}

std::string_view failure_kind_name(FailureKind kind) {
  switch (kind) {
    case FailureKind::kNone: return "None";
    case FailureKind::kVmCrash: return "VmCrash";
    case FailureKind::kHypCrash: return "HypCrash";
    case FailureKind::kAborted: return "Aborted";
  }
  return "?";
}

FailureKind detect_failure(const HandlerOutcome& outcome) {
  switch (outcome.kind) {
    case HandlerOutcome::Kind::kVmCrash: return FailureKind::kVmCrash;
    case HandlerOutcome::Kind::kHypCrash: return FailureKind::kHypCrash;
    default: return FailureKind::kNone;
  }
}

SeedSelector SeedSelector::parse(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw std::invalid_argument(fmt::format("bad seed selector '{}'", text));
  }
  const std::string_view kind = text.substr(0, colon);
  const std::string_view arg = text.substr(colon + 1);
  SeedSelector s;
  if (kind == "index") {
    s.kind = Kind::kIndex;
    const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), s.index);
    if (ec != std::errc() || p != arg.data() + arg.size()) {
      throw std::invalid_argument(fmt::format("bad seed index '{}'", arg));
    }
  } else if (kind == "first-of-reason") {
    s.kind = Kind::kFirstOfReason;
    if (!parse_exit_reason(arg, s.reason)) {
      throw std::invalid_argument(fmt::format("unknown exit reason '{}'", arg));
    }
  } else {
    throw std::invalid_argument(fmt::format("bad seed selector '{}'", text));
  }
  return s;
}

std::string SeedSelector::to_string() const {
  if (kind == Kind::kIndex) return fmt::format("index:{}", index);
  return fmt::format("first-of-reason:{}", exit_reason_name(reason));
}

std::optional<std::size_t> SeedSelector::resolve(const TraceFile& trace) const {
  if (kind == Kind::kIndex) {
    if (index < trace.records.size()) return index;
    return std::nullopt;
  }
  for (std::size_t i = 0; i < trace.records.size(); ++i) {
    if (trace.records[i].seed.exit_reason == code_of(reason)) return i;
  }
  return std::nullopt;
}

namespace {

struct MutantOutcome {
  FailureKind kind = FailureKind::kNone;
  std::string log;
  CoverageBitmap coverage;
  std::uint64_t cycles = 0;
};

MutantOutcome run_one(ReplaySession& session, const Vcpu& s1, const VmSeed& seed) {
  session.restore(s1);
  MutantOutcome out;
  try {
    const ExitResult r = replay_exit(session, seed);
    out.kind = detect_failure(r.outcome);
    out.log = r.outcome.log;
    out.cycles = r.cycles;
  } catch (const OverrideUnderflow& e) {
    session.overrides().arm(false);
    out.kind = FailureKind::kAborted;
    out.log = e.what();
  }
  out.coverage = session.vcpu().coverage;
  return out;
}

}  // namespace

CampaignResult run_test_case(const TraceFile& trace, const TestCase& tc, const Vcpu* s0) {
  if (tc.mutants == 0) throw std::invalid_argument("mutant count must be at least 1");
  if (tc.seed_index >= trace.records.size()) {
    throw std::invalid_argument(fmt::format("seed index {} outside a trace of {} exits",
                                            tc.seed_index, trace.records.size()));
  }
  CampaignResult result;
  result.test_case = tc;
  const VmSeed& original = trace.records[tc.seed_index].seed;
  result.exit_reason = original.exit_reason;

  auto session = start_dummy_vm(s0);
  ReplayOptions prefix;
  prefix.stop_at = tc.seed_index;
  const ReplayResult pre = replay_trace(*session, trace, prefix);
  if (pre.status != ReplayResult::Status::kCompleted) {
    throw CorruptTrace(fmt::format("unmutated prefix failed at exit {} ({}): {}", pre.exits,
                                   replay_status_name(pre.status), pre.log));
  }
  result.s1 = session->vcpu();

  const MutantOutcome base = run_one(*session, result.s1, original);
  switch (base.kind) {
    case FailureKind::kVmCrash: result.baseline_outcome = HandlerOutcome::vm_crash(base.log); break;
    case FailureKind::kHypCrash: result.baseline_outcome = HandlerOutcome::hyp_crash(base.log); break;
    case FailureKind::kAborted:
      throw CorruptTrace(fmt::format("unmutated seed {} aborted: {}", tc.seed_index, base.log));
    case FailureKind::kNone: break;
  }
  result.baseline_coverage = base.coverage;
  result.campaign_coverage = base.coverage;

  Rng rng(tc.rng_seed);
  std::vector<Mutation> mutations;
  mutations.reserve(tc.mutants);
  for (std::size_t i = 0; i < tc.mutants; ++i) {
    mutations.push_back(draw_mutation(original, tc.area, rng));
  }

  std::vector<MutantOutcome> outcomes(tc.mutants);
  const unsigned workers =
      static_cast<unsigned>(std::clamp<std::size_t>(tc.workers, 1, tc.mutants));
  auto work = [&](unsigned w, ReplaySession& s) {
    for (std::size_t i = w; i < tc.mutants; i += workers) {
      outcomes[i] = run_one(s, result.s1, apply_mutation(original, mutations[i]));
    }
  };
  if (workers == 1) {
    work(0, *session);
  } else {
    std::vector<std::unique_ptr<ReplaySession>> sessions;
    for (unsigned w = 0; w < workers; ++w) sessions.push_back(start_dummy_vm(&result.s1));
    std::vector<std::jthread> threads;
    for (unsigned w = 0; w < workers; ++w) threads.emplace_back(work, w, std::ref(*sessions[w]));
  }

  for (std::size_t i = 0; i < tc.mutants; ++i) {
    MutantOutcome& o = outcomes[i];
    result.campaign_coverage |= o.coverage;
    ++result.failures[o.kind];
    if (o.kind == FailureKind::kVmCrash || o.kind == FailureKind::kHypCrash) {
      CrashArtifact a;
      a.mutant_index = i;
      a.mutation = mutations[i];
      a.kind = o.kind;
      a.log = std::move(o.log);
      a.seed = apply_mutation(original, mutations[i]);
      a.metrics.coverage = o.coverage;
      a.metrics.cycles = o.cycles;
      result.artifacts.push_back(std::move(a));
    }
  }
  return result;
}

std::map<std::uint16_t, double> coverage_delta(const CampaignResult& result) {
  const std::size_t base = result.baseline_coverage.count();
  if (base == 0) throw EmptyBaseline();
  const std::size_t fresh = result.campaign_coverage.minus(result.baseline_coverage).count();
  return {{result.exit_reason, 100.0 * static_cast<double>(fresh) / static_cast<double>(base)}};
}

FailureKind rerun_artifact(const Vcpu& s1, const VmSeed& seed) {
  auto session = start_dummy_vm(&s1);
  return run_one(*session, s1, seed).kind;
}

TraceFile artifact_fragment(const CampaignResult& result) {
  TraceFile t;
  t.header.workload = result.test_case.trace_id;
  t.header.rng_algorithm = std::string(Rng::kAlgorithm);
  t.header.rng_seed = result.test_case.rng_seed;
  t.header.field_table_hash = field_table_hash();
  for (const auto& a : result.artifacts) t.records.push_back({a.seed, a.metrics});
  t.header.exit_count = t.records.size();
  return t;
}

}  // namespace iris
