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

#include "iris/recorder.h"

#include <algorithm>

#include "iris/rng.h"

namespace iris {

Recorder::Recorder(std::size_t expected_exits) {
  seed_buffer_.reserve(kMaxSeedPayloadBytes * expected_exits);
  records_.reserve(expected_exits);
}

std::uint64_t Recorder::on_read(Field field, std::uint64_t value) {
  if (in_exit_) current_.seed.read_entries.push_back({EntryFlag::kVmcsRead, encoding_of(field), value});
  return value;
}

void Recorder::on_write(Field field, std::uint64_t value) {
  if (in_exit_) {
    current_.metrics.write_entries.push_back({EntryFlag::kVmcsWrite, encoding_of(field), value});
  }
}

void Recorder::begin_exit(Vcpu& vcpu, ExitReason reason) {
  current_ = TraceRecord{};
  current_.seed.exit_reason = code_of(reason);
  current_.seed.gpr_entries = gpr_entries_of(vcpu.gprs);
  vcpu.coverage.reset();
  in_exit_ = true;
}

void Recorder::end_exit(Vcpu& vcpu, const ExitResult& result) {
  in_exit_ = false;
  current_.metrics.coverage = vcpu.coverage;
  current_.metrics.cycles = result.cycles;
  const std::uint64_t overhead = record_overhead(result.cycles);
  vcpu.hyp.tsc += overhead;
  overhead_cycles_ += overhead;
  const auto payload = seed_payload(current_.seed);
  seed_buffer_.insert(seed_buffer_.end(), payload.begin(), payload.end());
  records_.push_back(std::move(current_));
  current_ = TraceRecord{};
}

std::vector<TraceRecord> Recorder::take_records() {
  std::vector<TraceRecord> out;
  out.swap(records_);
  return out;
}

RecordingHandle::RecordingHandle(Vcpu& vcpu, Recorder& recorder)
    : vcpu_(&vcpu), recorder_(&recorder) {
  vcpu.vmcs.attach_hook(&recorder);
}

RecordingHandle::~RecordingHandle() { detach(); }

RecordingHandle::RecordingHandle(RecordingHandle&& other) noexcept
    : vcpu_(other.vcpu_), recorder_(other.recorder_) {
  other.vcpu_ = nullptr;
}

void RecordingHandle::detach() {
  if (vcpu_) vcpu_->vmcs.detach_hook(recorder_);
  vcpu_ = nullptr;
}

RecordingHandle attach_hooks(Vcpu& vcpu, Recorder& recorder) {
  const auto hooks = vcpu.vmcs.hooks();
  const bool busy = std::any_of(hooks.begin(), hooks.end(), [](VmcsHook* h) {
    return dynamic_cast<Recorder*>(h) != nullptr;
  });
  if (busy) throw AlreadyRecording();
  return RecordingHandle(vcpu, recorder);
}

RecordResult record_program(Vcpu& vcpu, const GuestProgram& program, const std::string& workload,
                            std::uint64_t rng_seed, std::size_t max_exits,
                            const HypConfig& config) {
  Recorder recorder(std::min(max_exits, program.sensitive_count()));
  RecordResult out;
  const std::uint64_t start = vcpu.hyp.tsc;
  {
    RecordingHandle handle = attach_hooks(vcpu, recorder);
    GuestState guest = guest_state_from(vcpu);
    out.run = run_program(vcpu, guest, program, max_exits, &recorder, config);
  }
  out.trace.records = recorder.take_records();
  TraceHeader& h = out.trace.header;
  h.workload = workload;
  h.rng_algorithm = std::string(Rng::kAlgorithm);
  h.rng_seed = rng_seed;
  h.exit_count = out.trace.records.size();
  h.field_table_hash = field_table_hash();
  h.record_cycles = vcpu.hyp.tsc - start;
  return out;
}

void boot_vcpu(Vcpu& vcpu) {
  construct_vcpu(vcpu);
  const GuestProgram prologue = protected_mode_switch_program();
  GuestState guest = guest_state_from(vcpu);
  run_program(vcpu, guest, prologue, prologue.sensitive_count());
  vcpu.coverage.reset();
}

}  // namespace iris
