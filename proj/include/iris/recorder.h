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

#ifndef IRIS_RECORDER_H_
#define IRIS_RECORDER_H_

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iris/guest.h"
#include "iris/hypervisor.h"
#include "iris/trace.h"

namespace iris {

class AlreadyRecording : public std::logic_error {
 public:
  AlreadyRecording() : std::logic_error("session is already being recorded") {}
};

// Captures one VmSeed and one ExitMetrics per handled exit: GPRs at exit
// time, every VMREAD result and every VMWRITE, the handler's coverage and its
// cycle cost. Each recorded exit charges record_overhead() cycles to the
// vCPU clock; those cycles are not part of ExitMetrics::cycles.
class Recorder final : public VmcsHook, public ExitObserver {
 public:
  // Reserves kMaxSeedPayloadBytes per expected exit for the seed buffer.
  explicit Recorder(std::size_t expected_exits = 0);

  std::uint64_t on_read(Field field, std::uint64_t value) override;
  void on_write(Field field, std::uint64_t value) override;
  void begin_exit(Vcpu& vcpu, ExitReason reason) override;
  void end_exit(Vcpu& vcpu, const ExitResult& result) override;

  const std::vector<TraceRecord>& records() const { return records_; }
  std::vector<TraceRecord> take_records();
  // Raw seed payloads of every recorded exit, back to back.
  const std::vector<std::uint8_t>& seed_buffer() const { return seed_buffer_; }
  std::size_t reserved_seed_bytes() const { return seed_buffer_.capacity(); }
  std::uint64_t overhead_cycles() const { return overhead_cycles_; }

 private:
  bool in_exit_ = false;
  TraceRecord current_;
  std::vector<TraceRecord> records_;
  std::vector<std::uint8_t> seed_buffer_;
  std::uint64_t overhead_cycles_ = 0;
};

// Keeps a Recorder attached to a vCPU's VMCS; detaches on destruction.
class RecordingHandle {
 public:
  RecordingHandle(Vcpu& vcpu, Recorder& recorder);
  ~RecordingHandle();
  RecordingHandle(const RecordingHandle&) = delete;
  RecordingHandle& operator=(const RecordingHandle&) = delete;
  RecordingHandle(RecordingHandle&& other) noexcept;
  RecordingHandle& operator=(RecordingHandle&&) = delete;

  Recorder& recorder() { return *recorder_; }
  void detach();

 private:
  Vcpu* vcpu_;
  Recorder* recorder_;
};

// Throws AlreadyRecording if a Recorder is already attached to `vcpu`.
RecordingHandle attach_hooks(Vcpu& vcpu, Recorder& recorder);

struct RecordResult {
  TraceFile trace;
  RunResult run;
};

// Runs `program` on `vcpu` with recording enabled for up to `max_exits`
// exits and packages the trace.
RecordResult record_program(Vcpu& vcpu, const GuestProgram& program, const std::string& workload,
                            std::uint64_t rng_seed, std::size_t max_exits,
                            const HypConfig& config = {});

// Fresh test VM brought through the protected-mode switch without recording.
void boot_vcpu(Vcpu& vcpu);

}  // namespace iris

#endif  // IRIS_RECORDER_H_
