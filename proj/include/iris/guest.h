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

// Synthetic guest workloads. A GuestProgram is a flat list of operations; a
// Sensitive operation traps to the hypervisor with the exit information and
// register contents it carries.

#ifndef IRIS_GUEST_H_
#define IRIS_GUEST_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "iris/hypervisor.h"
#include "iris/vmx.h"

namespace iris {

enum class Profile : std::uint8_t { kOsBoot, kCpuBound, kMemBound, kIoBound, kIdle };

inline constexpr Profile kAllProfiles[] = {Profile::kOsBoot, Profile::kCpuBound,
                                           Profile::kMemBound, Profile::kIoBound,
                                           Profile::kIdle};

// "OS_BOOT", "CPU_BOUND", "MEM_BOUND", "IO_BOUND", "IDLE".
std::string_view profile_name(Profile p);
// Case-insensitive; '-' and '_' are interchangeable and optional
// ("os_boot", "OsBoot", "OS-BOOT").
bool parse_profile(std::string_view text, Profile& out);

struct ReasonShare {
  ExitReason reason;
  double probability;
};

struct WorkloadProfile {
  Profile name;
  std::vector<ReasonShare> reason_mix;
  // Guest cycles between consecutive exits, uniform over [min, max].
  std::uint64_t compute_min;
  std::uint64_t compute_max;

  double share(ExitReason r) const;
};

WorkloadProfile build_profile(Profile p);

// "profile,reason,code,probability,compute_min,compute_max".
std::string profile_table_csv();

struct GprWrite {
  GprId reg;
  std::uint64_t value;
  friend bool operator==(const GprWrite&, const GprWrite&) = default;
};

struct VmcsEffect {
  Field field;
  std::uint64_t value;
  friend bool operator==(const VmcsEffect&, const VmcsEffect&) = default;
};

struct ComputeOp {
  std::uint64_t cycles;
  friend bool operator==(const ComputeOp&, const ComputeOp&) = default;
};

// Traps with `reason`. Before the exit the guest's registers take `gprs`;
// the processor zeroes the exit-information area, then stores `effects`
// (guest state such as RIP and exit information such as the qualification).
struct SensitiveOp {
  ExitReason reason;
  std::vector<GprWrite> gprs;
  std::vector<VmcsEffect> effects;
  friend bool operator==(const SensitiveOp&, const SensitiveOp&) = default;
};

// Guest power-off; nothing after it executes.
struct HaltOp {
  friend bool operator==(const HaltOp&, const HaltOp&) = default;
};

using GuestOp = std::variant<ComputeOp, SensitiveOp, HaltOp>;

struct GuestProgram {
  std::vector<GuestOp> ops;

  std::size_t sensitive_count() const;
  friend bool operator==(const GuestProgram&, const GuestProgram&) = default;
};

// The six-exit real-mode to paged-protected-mode switch.
GuestProgram protected_mode_switch_program();

// Deterministic in (profile, n_exits, rng_seed). Compute and Sensitive ops
// alternate; OsBoot programs start with the protected-mode switch, the other
// profiles assume an already booted guest (CR0 = PE|ET|PG, CS = 0x08).
GuestProgram generate_program(const WorkloadProfile& profile, std::size_t n_exits,
                              std::uint64_t rng_seed);

struct GuestState {
  std::size_t pc = 0;
  std::uint64_t virtual_cycles = 0;
  // CR0 as the guest observes it through the read shadow.
  std::uint64_t cr0_view = 0;
  CpuMode mode = CpuMode::kMode1;
  bool halted = false;
};

// Guest view derived from the current VMCS.
GuestState guest_state_from(const Vcpu& vcpu);

struct StepResult {
  enum class Kind : std::uint8_t { kExit, kCompleted };
  Kind kind;
  ExitReason reason{};
};

// Runs Compute ops (their cycles advance both the guest counter and the
// vCPU's TSC) until the next Sensitive op, which is presented to the vCPU as
// a VM exit; pc stays on it until resume(). A halted guest treats the next
// Sensitive op as running after its wake-up event.
StepResult step(GuestState& guest, const GuestProgram& program, Vcpu& vcpu);

// Continues the guest after the handler resumed it.
void resume(GuestState& guest, const Vcpu& vcpu);

class ExitObserver {
 public:
  virtual ~ExitObserver() = default;
  virtual void begin_exit(Vcpu& vcpu, ExitReason reason) = 0;
  virtual void end_exit(Vcpu& vcpu, const ExitResult& result) = 0;
};

struct RunResult {
  std::size_t exits = 0;
  bool completed = false;  // reached the end of the program
  HandlerOutcome last;     // outcome of the final handled exit
  std::vector<CpuMode> mode_after_exit;
};

// Executes until the program ends, a crash, or `max_exits` handled exits.
RunResult run_program(Vcpu& vcpu, GuestState& guest, const GuestProgram& program,
                      std::size_t max_exits, ExitObserver* observer = nullptr,
                      const HypConfig& config = {});

}  // namespace iris

#endif  // IRIS_GUEST_H_
