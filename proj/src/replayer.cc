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

#include "iris/replayer.h"

#include <algorithm>
#include <bitset>

#include <fmt/format.h>

#include "iris/rng.h"

namespace iris {

OverrideUnderflow::OverrideUnderflow(Field field)
    : std::runtime_error(fmt::format("handler read {} but the seed holds no value for it",
                                     field_spec(field).name)),
      field_(field) {}

std::uint64_t ReadOverrides::on_read(Field field, std::uint64_t value) {
  if (!armed_ || !is_read_only(field)) return value;
  auto& q = queues_[encoding_of(field)];
  if (q.empty()) throw OverrideUnderflow(field);
  const std::uint64_t v = q.front();
  q.pop_front();
  --pending_;
  return v;
}

void ReadOverrides::push(Field field, std::uint64_t value) {
  queues_[encoding_of(field)].push_back(value);
  ++pending_;
}

void ReadOverrides::clear() {
  for (auto& q : queues_) q.clear();
  pending_ = 0;
}

ReplaySession::ReplaySession() { vcpu_.vmcs.attach_hook(&overrides_); }

void ReplaySession::restore(const Vcpu& state) { vcpu_ = state; }

std::unique_ptr<ReplaySession> start_dummy_vm(const Vcpu* snapshot) {
  auto s = std::make_unique<ReplaySession>();
  Vcpu& v = s->vcpu();
  construct_vcpu(v);
  if (snapshot) {
    s->restore(*snapshot);
    if (v.vmcs.launch_state() != LaunchState::kActiveCurrentLaunched) {
      v.vmcs.load();
      v.vmcs.launch();
    }
  }
  v.vmcs.set_raw(Field::kPinBasedControls, v.vmcs.raw(Field::kPinBasedControls) | (1ull << 6));
  v.vmcs.set_raw(Field::kPreemptionTimerValue, 0);
  return s;
}

void inject_seed(ReplaySession& session, const VmSeed& seed) {
  for (const auto& e : seed.gpr_entries) {
    if (e.flag != EntryFlag::kGpr || e.encoding >= kGprCount) {
      throw TraceError(TraceErrc::kFieldTableMismatch,
                       fmt::format("GPR entry with encoding {}", e.encoding));
    }
  }
  for (const auto& e : seed.read_entries) {
    if (e.flag != EntryFlag::kVmcsRead || !find_field(e.encoding)) {
      throw TraceError(TraceErrc::kFieldTableMismatch,
                       fmt::format("seed references unassigned VMCS encoding {}", e.encoding));
    }
  }
  Vcpu& v = session.vcpu();
  for (const auto& e : seed.gpr_entries) v.gprs.at(e.encoding) = e.value;
  ReadOverrides& ov = session.overrides();
  ov.clear();
  std::bitset<kVmcsEncodingSpace> written;
  for (const auto& e : seed.read_entries) {
    const Field f = static_cast<Field>(e.encoding);
    if (is_read_only(f)) {
      ov.push(f, e.value);
    } else if (!written.test(e.encoding)) {
      // Later reads of the same field observe the handler's own writes.
      v.vmcs.set_raw(f, e.value);
      written.set(e.encoding);
    }
  }
}

ExitResult replay_exit(ReplaySession& session, const VmSeed& seed, ExitObserver* observer,
                       const HypConfig& config) {
  Vcpu& v = session.vcpu();
  const auto reason = static_cast<ExitReason>(seed.exit_reason);
  raise_exit(v.vmcs, reason);
  inject_seed(session, seed);
  v.coverage.reset();
  const std::uint64_t before = v.hyp.tsc;
  session.overrides().arm(true);
  if (observer) observer->begin_exit(v, reason);
  ExitResult r;
  try {
    r = handle_exit(v, config);
  } catch (...) {
    session.overrides().arm(false);
    throw;
  }
  session.overrides().arm(false);
  session.virtual_clock += v.hyp.tsc - before;
  if (observer) observer->end_exit(v, r);
  return r;
}

ExitResult bare_timer_exit(ReplaySession& session) {
  Vcpu& v = session.vcpu();
  raise_exit(v.vmcs, ExitReason::kPreemptionTimer);
  session.overrides().arm(false);
  v.coverage.reset();
  const std::uint64_t before = v.hyp.tsc;
  ExitResult r = handle_exit(v);
  session.virtual_clock += v.hyp.tsc - before;
  return r;
}

std::string_view replay_status_name(ReplayResult::Status s) {
  switch (s) {
    case ReplayResult::Status::kCompleted: return "completed";
    case ReplayResult::Status::kVmCrash: return "vm-crash";
    case ReplayResult::Status::kHypCrash: return "hyp-crash";
    case ReplayResult::Status::kAborted: return "aborted";
  }
  return "?";
}

ReplayResult replay_trace(ReplaySession& session, const TraceFile& trace,
                          const ReplayOptions& options) {
  ReplayResult result;
  const std::size_t end = std::min(trace.records.size(), options.stop_at.value_or(SIZE_MAX));
  std::unique_ptr<Recorder> recorder;
  std::optional<RecordingHandle> handle;
  if (options.record_metrics) {
    recorder = std::make_unique<Recorder>(end > session.position ? end - session.position : 0);
    handle.emplace(attach_hooks(session.vcpu(), *recorder));
  }
  const std::uint64_t clock_start = session.virtual_clock;

  while (session.position < end) {
    const TraceRecord& rec = trace.records[session.position];
    ExitResult r;
    try {
      r = replay_exit(session, rec.seed, recorder.get(), options.config);
    } catch (const OverrideUnderflow& e) {
      result.status = ReplayResult::Status::kAborted;
      result.log = fmt::format("exit {}: {}", session.position, e.what());
      break;
    }
    ++session.position;
    ++result.exits;
    if (r.outcome.kind == HandlerOutcome::Kind::kVmCrash) {
      result.status = ReplayResult::Status::kVmCrash;
      result.log = r.outcome.log;
      break;
    }
    if (r.outcome.kind == HandlerOutcome::Kind::kHypCrash) {
      result.status = ReplayResult::Status::kHypCrash;
      result.log = r.outcome.log;
      break;
    }
    if (session.overrides().pending() != 0) {
      result.status = ReplayResult::Status::kAborted;
      result.log = fmt::format("exit {}: {} recorded VMREAD values were not consumed",
                               session.position - 1, session.overrides().pending());
      session.overrides().clear();
      break;
    }
  }
  result.virtual_cycles = session.virtual_clock - clock_start;
  if (recorder) {
    handle.reset();
    result.recorded = recorder->take_records();
  }
  return result;
}

AccuracyReport compute_accuracy(std::span<const TraceRecord> recorded,
                                std::span<const TraceRecord> replayed,
                                std::size_t noise_threshold) {
  if (recorded.size() != replayed.size()) {
    throw LengthMismatch(fmt::format("recorded {} exits, replayed {}", recorded.size(),
                                     replayed.size()));
  }
  AccuracyReport rep;
  rep.exits = recorded.size();
  rep.threshold = noise_threshold;
  CoverageBitmap rec_union, rep_union;
  const std::size_t stride = std::max<std::size_t>(1, rep.exits / 100);
  for (std::size_t i = 0; i < rep.exits; ++i) {
    const ExitMetrics& a = recorded[i].metrics;
    const ExitMetrics& b = replayed[i].metrics;
    rec_union |= a.coverage;
    rep_union |= b.coverage;
    if (a.write_entries == b.write_entries) ++rep.vmwrite_matches;
    const std::size_t d = a.coverage.symmetric_difference(b.coverage);
    rep.diffs.push_back(d);
    ReasonDiff& rd = rep.diffs_by_reason[recorded[i].seed.exit_reason];
    ++rd.exits;
    if (d != 0) {
      ++rd.differing_exits;
      rd.total_blocks += d;
      rd.max_blocks = std::max(rd.max_blocks, d);
      ++rep.nonzero_diffs;
      if (d <= noise_threshold) ++rep.noise_filtered;
    }
    if (i % stride == 0 || i + 1 == rep.exits) {
      rep.curve.push_back({i, rec_union.count(), rep_union.intersect(rec_union).count()});
    }
  }
  rep.recorded_unique = rec_union.count();
  rep.replayed_unique = rep_union.count();
  if (rep.recorded_unique != 0) {
    rep.coverage_fitting =
        100.0 * static_cast<double>(rep_union.intersect(rec_union).count()) /
        static_cast<double>(rep.recorded_unique);
  }
  if (rep.exits != 0) {
    rep.vmwrite_fitting =
        100.0 * static_cast<double>(rep.vmwrite_matches) / static_cast<double>(rep.exits);
  }
  return rep;
}

std::vector<std::size_t> apply_noise(std::vector<TraceRecord>& recorded, double p,
                                     std::uint64_t rng_seed) {
  const std::vector<Block> pool = async_block_pool();
  const std::size_t kmax = std::min(kNoiseThreshold, pool.size());
  Rng rng(rng_seed);
  std::vector<std::size_t> noisy;
  for (std::size_t i = 0; i < recorded.size(); ++i) {
    if (!rng.chance(p)) continue;
    noisy.push_back(i);
    std::vector<Block> shuffled = pool;
    const std::size_t k = rng.range(1, kmax);
    for (std::size_t j = 0; j < k; ++j) {
      std::swap(shuffled[j], shuffled[j + rng.below(shuffled.size() - j)]);
      recorded[i].metrics.coverage.hit(shuffled[j]);
    }
  }
  return noisy;
}

std::vector<CpuMode> cr0_write_modes(std::span<const TraceRecord> records) {
  std::vector<CpuMode> out;
  for (const auto& r : records) {
    for (const auto& w : r.metrics.write_entries) {
      if (w.encoding == encoding_of(Field::kGuestCr0)) out.push_back(classify_cr0_mode(w.value));
    }
  }
  return out;
}

std::vector<CpuMode> mode_trajectory(CpuMode start, std::span<const CpuMode> modes) {
  std::vector<CpuMode> out{start};
  for (CpuMode m : modes) {
    if (m != out.back()) out.push_back(m);
  }
  return out;
}

namespace {

double exits_per_second(std::size_t exits, std::uint64_t cycles) {
  if (cycles == 0) return 0.0;
  return static_cast<double>(exits) * kCyclesPerSecond / static_cast<double>(cycles);
}

}  // namespace

ThroughputReport throughput_of(const ReplayResult& r, const TraceFile& trace) {
  ThroughputReport t;
  t.status = r.status;
  t.exits_replayed = r.exits;
  t.virtual_cycles = r.virtual_cycles;
  t.exits_per_second = exits_per_second(r.exits, r.virtual_cycles);
  if (r.virtual_cycles != 0 && trace.header.record_cycles != 0) {
    t.speedup_vs_record =
        static_cast<double>(trace.header.record_cycles) / static_cast<double>(r.virtual_cycles);
  }
  return t;
}

ThroughputReport measure_throughput(ReplaySession& session, const TraceFile& trace) {
  return throughput_of(replay_trace(session, trace), trace);
}

ThroughputReport ideal_throughput(std::size_t n) {
  auto session = start_dummy_vm();
  ThroughputReport t;
  for (std::size_t i = 0; i < n; ++i) {
    const ExitResult r = bare_timer_exit(*session);
    if (r.outcome.crashed()) {
      t.status = r.outcome.kind == HandlerOutcome::Kind::kVmCrash
                     ? ReplayResult::Status::kVmCrash
                     : ReplayResult::Status::kHypCrash;
      break;
    }
    ++t.exits_replayed;
  }
  t.virtual_cycles = session->virtual_clock;
  t.exits_per_second = exits_per_second(t.exits_replayed, t.virtual_cycles);
  return t;
}

}  // namespace iris
