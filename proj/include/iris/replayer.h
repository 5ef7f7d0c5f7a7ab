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

// Replay of recorded VM behaviors on a dummy VM, and the accuracy and
// throughput reports computed from a replay.
//
// A dummy VM executes no guest instructions: its preemption timer is armed
// at zero, so every VM entry is followed by another exit. To replay a seed
// the session overwrites the GPRs, writes each ReadWrite field the handler
// read, queues the values of ReadOnly fields, and then raises the seed's exit
// reason. The queued values replace what the handler's VMREADs return.

#ifndef IRIS_REPLAYER_H_
#define IRIS_REPLAYER_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iris/hypervisor.h"
#include "iris/recorder.h"
#include "iris/trace.h"

namespace iris {

// The handler read a ReadOnly field for which the injected seed holds no
// (remaining) value.
class OverrideUnderflow : public std::runtime_error {
 public:
  explicit OverrideUnderflow(Field field);
  Field field() const { return field_; }

 private:
  Field field_;
};

// Per-field FIFO of substitute values for ReadOnly VMCS fields.
class ReadOverrides final : public VmcsHook {
 public:
  std::uint64_t on_read(Field field, std::uint64_t value) override;
  void on_write(Field, std::uint64_t) override {}

  void push(Field field, std::uint64_t value);
  void clear();
  std::size_t pending() const { return pending_; }
  // Disarmed overrides let reads through untouched (bare exits).
  void arm(bool armed) { armed_ = armed; }
  bool armed() const { return armed_; }

 private:
  std::array<std::deque<std::uint64_t>, kVmcsEncodingSpace> queues_;
  std::size_t pending_ = 0;
  bool armed_ = false;
};

class ReplaySession {
 public:
  ReplaySession();
  ReplaySession(const ReplaySession&) = delete;
  ReplaySession& operator=(const ReplaySession&) = delete;

  Vcpu& vcpu() { return vcpu_; }
  const Vcpu& vcpu() const { return vcpu_; }
  ReadOverrides& overrides() { return overrides_; }
  const ReadOverrides& overrides() const { return overrides_; }

  // Replaces the vCPU state (snapshot revert); hooks stay attached.
  void restore(const Vcpu& state);

  std::size_t position = 0;
  // Virtual cycles spent by this session's exits.
  std::uint64_t virtual_clock = 0;

 private:
  Vcpu vcpu_;
  ReadOverrides overrides_;
};

// Fresh dummy VM (VMCS cleared, loaded, launched; preemption timer armed at
// zero), or one restored from `snapshot`.
std::unique_ptr<ReplaySession> start_dummy_vm(const Vcpu* snapshot = nullptr);

// Throws TraceError(kFieldTableMismatch) for encodings the field table does
// not assign.
void inject_seed(ReplaySession& session, const VmSeed& seed);

// One seeded exit: inject, raise the seed's reason, handle. The vCPU coverage
// afterwards is exactly this exit's. Throws OverrideUnderflow.
ExitResult replay_exit(ReplaySession& session, const VmSeed& seed,
                       ExitObserver* observer = nullptr, const HypConfig& config = {});

// One unseeded preemption-timer exit.
ExitResult bare_timer_exit(ReplaySession& session);

struct ReplayOptions {
  bool record_metrics = false;
  // Stop before this trace index (fuzzer prefixes).
  std::optional<std::size_t> stop_at;
  HypConfig config;
};

struct ReplayResult {
  enum class Status : std::uint8_t { kCompleted, kVmCrash, kHypCrash, kAborted };
  Status status = Status::kCompleted;
  std::size_t exits = 0;
  // Crash log line or abort diagnostic.
  std::string log;
  std::uint64_t virtual_cycles = 0;
  // Filled when ReplayOptions::record_metrics is set.
  std::vector<TraceRecord> recorded;
};

std::string_view replay_status_name(ReplayResult::Status s);

ReplayResult replay_trace(ReplaySession& session, const TraceFile& trace,
                          const ReplayOptions& options = {});

// --- Accuracy --------------------------------------------------------------

inline constexpr std::size_t kNoiseThreshold = 30;

class LengthMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ReasonDiff {
  std::size_t exits = 0;
  std::size_t differing_exits = 0;
  std::size_t total_blocks = 0;
  std::size_t max_blocks = 0;
};

struct CurvePoint {
  std::size_t exit_index;
  std::size_t recorded_unique;
  std::size_t replayed_unique;
};

struct AccuracyReport {
  std::size_t exits = 0;
  double coverage_fitting = 100.0;
  double vmwrite_fitting = 100.0;
  std::size_t recorded_unique = 0;
  std::size_t replayed_unique = 0;
  std::size_t vmwrite_matches = 0;
  // Per-exit symmetric-difference sizes.
  std::vector<std::size_t> diffs;
  std::map<std::uint16_t, ReasonDiff> diffs_by_reason;
  std::size_t nonzero_diffs = 0;
  std::size_t noise_filtered = 0;  // nonzero and <= threshold
  std::size_t threshold = kNoiseThreshold;
  std::vector<CurvePoint> curve;
};

// Throws LengthMismatch when the lists differ in length.
AccuracyReport compute_accuracy(std::span<const TraceRecord> recorded,
                                std::span<const TraceRecord> replayed,
                                std::size_t noise_threshold = kNoiseThreshold);

// With probability p per exit, adds k in [1, min(30, pool)] distinct blocks
// of the asynchronous interrupt-delivery pool to the recorded coverage.
// Returns the indices of the exits that received noise.
std::vector<std::size_t> apply_noise(std::vector<TraceRecord>& recorded, double p,
                                     std::uint64_t rng_seed);

// CpuMode of every VMWRITE to GUEST_CR0, in order.
std::vector<CpuMode> cr0_write_modes(std::span<const TraceRecord> records);
// `start` followed by the modes, with consecutive repeats collapsed.
std::vector<CpuMode> mode_trajectory(CpuMode start, std::span<const CpuMode> modes);

// --- Throughput ------------------------------------------------------------

inline constexpr double kCyclesPerSecond = 3.5e9;
inline constexpr double kReferenceIdealExitsPerSecond = 50000.0;

struct ThroughputReport {
  std::size_t exits_replayed = 0;
  std::uint64_t virtual_cycles = 0;
  double exits_per_second = 0.0;
  // record_cycles / replay cycles; 0 when there is no recording to compare.
  double speedup_vs_record = 0.0;
  ReplayResult::Status status = ReplayResult::Status::kCompleted;
};

ThroughputReport measure_throughput(ReplaySession& session, const TraceFile& trace);
// Throughput of a replay that already ran over `trace`.
ThroughputReport throughput_of(const ReplayResult& replay, const TraceFile& trace);
ThroughputReport ideal_throughput(std::size_t n);

}  // namespace iris

#endif  // IRIS_REPLAYER_H_
