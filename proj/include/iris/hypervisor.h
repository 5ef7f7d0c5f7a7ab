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

// The reference VM-exit handler ("hypervisor under test").
//
// handle_exit() dispatches on EXIT_REASON, runs a per-reason handler and
// performs VM entry. Handlers obtain every VMCS value they branch on through
// Vmcs::read so that attached hooks observe (and may substitute) it, and they
// mark each executed basic block in Vcpu::coverage.

#ifndef IRIS_HYPERVISOR_H_
#define IRIS_HYPERVISOR_H_

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "iris/blocks.h"
#include "iris/vmx.h"

namespace iris {

struct DeviceState {
  std::uint8_t pic_master_mask = 0xFF;
  std::uint8_t pic_slave_mask = 0xFF;
  std::uint16_t pit_reload = 0;
  std::uint8_t pit_mode = 0;
  std::uint8_t cmos_index = 0;
  std::uint32_t pci_address = 0;
  std::uint64_t serial_tx = 0;
  std::uint32_t pit_period = 0;

  friend bool operator==(const DeviceState&, const DeviceState&) = default;
};

struct MsrState {
  std::uint64_t apic_base = 0xFEE00900;
  std::uint64_t pat = 0x0007040600070406;
  std::uint64_t misc_enable = 0x1;
  std::array<std::uint64_t, 3> sysenter{};  // CS, ESP, EIP
  std::uint64_t efer = 0;
  std::array<std::uint64_t, 16> mtrr{};
  bool x2apic = false;

  friend bool operator==(const MsrState&, const MsrState&) = default;
};

struct LapicState {
  std::uint32_t tpr = 0;
  std::uint32_t timer_initial = 0;
  std::uint64_t icr = 0;
  std::uint32_t eoi_count = 0;

  friend bool operator==(const LapicState&, const LapicState&) = default;
};

inline constexpr std::size_t kHvmParamCount = 8;

struct HypState {
  CpuMode vcpu_mode = CpuMode::kMode1;
  std::uint64_t cr0_guest_host_mask = 0;
  std::uint64_t cr0_read_shadow_cache = 0;
  bool halted = false;
  // Virtual timestamp counter; every simulated cycle lands here.
  std::uint64_t tsc = 0;
  std::vector<std::string> crash_log;
  // Interrupt vector awaiting injection, 0 when none.
  std::uint8_t pending_vector = 0;
  std::array<std::uint64_t, kHvmParamCount> hvm_params{};
  DeviceState dev;
  MsrState msr;
  LapicState lapic;

  friend bool operator==(const HypState&, const HypState&) = default;
};

// The session unit: one vCPU's VMCS, GPRs, hypervisor bookkeeping and the
// handler coverage bitmap.
struct Vcpu {
  Vmcs vmcs;
  GprFile gprs;
  HypState hyp;
  CoverageBitmap coverage;

  friend bool operator==(const Vcpu&, const Vcpu&) = default;
};

struct HandlerOutcome {
  enum class Kind : std::uint8_t { kResume, kInjectFault, kVmCrash, kHypCrash };

  Kind kind = Kind::kResume;
  std::uint8_t vector = 0;  // kInjectFault only
  std::string log;          // crash kinds only

  static HandlerOutcome resume() { return {}; }
  static HandlerOutcome inject(std::uint8_t v) { return {Kind::kInjectFault, v, {}}; }
  static HandlerOutcome vm_crash(std::string msg) { return {Kind::kVmCrash, 0, std::move(msg)}; }
  static HandlerOutcome hyp_crash(std::string msg) { return {Kind::kHypCrash, 0, std::move(msg)}; }

  bool crashed() const { return kind == Kind::kVmCrash || kind == Kind::kHypCrash; }
  friend bool operator==(const HandlerOutcome&, const HandlerOutcome&) = default;
};

std::string_view outcome_kind_name(HandlerOutcome::Kind kind);

struct ExitResult {
  HandlerOutcome outcome;
  std::uint64_t cycles = 0;
};

struct HypConfig {
  // When false, CR accesses go through a pass-through stub that neither
  // emulates host-owned bits nor updates the read shadow.
  bool emulate_cr_access = true;
};

// Raised at handler assertion points; handle_exit turns it into HypCrash.
class HypervisorBug : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exception vectors used by InjectFault.
inline constexpr std::uint8_t kVectorUd = 6;
inline constexpr std::uint8_t kVectorGp = 13;

// Virtual-cycle cost model.
inline constexpr std::uint64_t kDispatchCycles = 2000;
inline constexpr std::uint64_t kRdtscCycles = 1500;
inline constexpr std::uint64_t kCrAccessCycles = 6000;
inline constexpr std::uint64_t kIoCycles = 8000;
inline constexpr std::uint64_t kDefaultHandlerCycles = 3000;

// Cycles one exit of this reason costs: dispatcher plus handler.
std::uint64_t exit_cost(ExitReason reason);

// Modeled hook cost of recording one exit: 1.1% of the handler cost, floored.
inline constexpr std::uint64_t kRecordOverheadPerMille = 11;
inline constexpr std::uint64_t record_overhead(std::uint64_t handler_cycles) {
  return handler_cycles * kRecordOverheadPerMille / 1000;
}

// Initial VMCS/GPR/HypState of a freshly created test VM: real mode at the
// reset vector with CR0 emulation armed.
void construct_vcpu(Vcpu& vcpu);

// Handles one VM exit. The processor has already stored the exit information
// (at least EXIT_REASON) into the VMCS. Adds the exit cost to hyp.tsc.
ExitResult handle_exit(Vcpu& vcpu, const HypConfig& config = {});

// Processor side of a VM exit: zero the exit-information area and store the
// basic exit reason.
void raise_exit(Vmcs& vmcs, ExitReason reason);

}  // namespace iris

#endif  // IRIS_HYPERVISOR_H_
