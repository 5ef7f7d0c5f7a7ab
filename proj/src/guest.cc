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

#include "iris/guest.h"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

#include "iris/rng.h"

namespace iris {
namespace {

using enum ExitReason;
using enum Field;

constexpr std::uint64_t kIntrValid = 1ull << 31;
constexpr std::uint64_t kBootedCr0 = cr0::kPe | cr0::kEt | cr0::kPg;

// Qualification layouts shared with the handler.
constexpr std::uint64_t cr_qual(unsigned cr, unsigned type, unsigned reg,
                                std::uint64_t lmsw_src = 0) {
  return cr | (type << 4) | (static_cast<std::uint64_t>(reg) << 8) | (lmsw_src << 16);
}
constexpr std::uint64_t io_qual(unsigned size_code, bool in, std::uint16_t port) {
  return size_code | (in ? 8u : 0u) | (1u << 6) | (static_cast<std::uint64_t>(port) << 16);
}

// Intel register number -> GprId, RSP (4) excluded.
constexpr GprId kIntelGpr[16] = {
    GprId::kRax, GprId::kRcx, GprId::kRdx, GprId::kRbx, GprId::kRax,
    GprId::kRbp, GprId::kRsi, GprId::kRdi, GprId::kR8,  GprId::kR9,
    GprId::kR10, GprId::kR11, GprId::kR12, GprId::kR13, GprId::kR14,
    GprId::kR15};

std::string fold(std::string_view s) {
  std::string out;
  for (char ch : s) {
    if (ch == '_' || ch == '-') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  return out;
}

class Generator {
 public:
  Generator(const WorkloadProfile& profile, std::uint64_t seed)
      : profile_(profile), rng_(seed) {}

  void emit_compute(GuestProgram& p) {
    p.ops.emplace_back(ComputeOp{rng_.range(profile_.compute_min, profile_.compute_max)});
  }

  ExitReason draw_reason() {
    const double u = rng_.unit();
    double acc = 0;
    for (const auto& s : profile_.reason_mix) {
      acc += s.probability;
      if (u < acc) return s.reason;
    }
    return profile_.reason_mix.back().reason;
  }

  SensitiveOp make(ExitReason r) {
    switch (r) {
      case kRdtsc: return kernel_op(r, 2);
      case kCpuid: return cpuid();
      case kHlt: return hlt();
      case kVmcall: return vmcall();
      case kExternalInterrupt: return external_interrupt();
      case kInterruptWindow: return interrupt_window();
      case kCrAccess: return cr_access();
      case kIoInstruction: return io();
      case kRdmsr: return rdmsr();
      case kWrmsr: return wrmsr();
      case kEptViolation: return ept();
      default: return kernel_op(r, 0);
    }
  }

 private:
  SensitiveOp kernel_op(ExitReason r, std::uint64_t len, bool force_if = false) {
    SensitiveOp op{r, {}, {}};
    const std::size_t scratch = rng_.range(1, 3);
    for (std::size_t i = 0; i < scratch; ++i) {
      op.gprs.push_back({static_cast<GprId>(rng_.below(kGprCount)), rng_.next() & 0xFFFFFFFF});
    }
    op.effects.push_back({kGuestRip, rng_.range(0xC0100000, 0xC04FFFFF)});
    const bool irqs_off = !force_if && profile_.name != Profile::kIdle && rng_.chance(0.10);
    op.effects.push_back({kGuestRflags, irqs_off ? 0x2u : 0x202u});
    op.effects.push_back({kGuestInterruptibility, (!force_if && rng_.chance(0.05)) ? 1u : 0u});
    if (len) op.effects.push_back({kVmExitInstructionLen, len});
    return op;
  }

  static void set(SensitiveOp& op, GprId reg, std::uint64_t value) {
    op.gprs.push_back({reg, value});
  }

  SensitiveOp cpuid() {
    static constexpr std::uint32_t kLeaves[] = {
        0x0,        0x1,        0x4,        0x7,        0xB,        0x14,
        0x40000000, 0x40000001, 0x40000002, 0x40000003, 0x40000010, 0x80000000,
        0x80000001, 0x80000008, 0x80000020};
    SensitiveOp op = kernel_op(kCpuid, 2);
    set(op, GprId::kRax, rng_.pick(kLeaves));
    set(op, GprId::kRcx, rng_.below(6));
    return op;
  }

  SensitiveOp hlt() { return kernel_op(kHlt, 1, /*force_if=*/true); }

  SensitiveOp vmcall() {
    SensitiveOp op = kernel_op(kVmcall, 3);
    switch (rng_.below(6)) {
      case 0:
        set(op, GprId::kRax, 17);
        set(op, GprId::kRbx, rng_.chance(0.8) ? 0 : 1);
        break;
      case 1:
        set(op, GprId::kRax, 29);
        set(op, GprId::kRbx, 0);
        break;
      case 2:
        set(op, GprId::kRax, 32);
        set(op, GprId::kRbx, 4);
        break;
      case 3:
        set(op, GprId::kRax, 34);
        set(op, GprId::kRbx, rng_.below(2));
        set(op, GprId::kRcx, rng_.below(kHvmParamCount));
        set(op, GprId::kRdx, rng_.next() & 0xFFFFFFFF);
        break;
      case 4:
        set(op, GprId::kRax, 18);
        set(op, GprId::kRcx, rng_.range(1, 80));
        break;
      default:
        set(op, GprId::kRax, 12);
        set(op, GprId::kRbx, rng_.chance(0.5) ? 2 : 0);
        break;
    }
    return op;
  }

  SensitiveOp external_interrupt() {
    SensitiveOp op = kernel_op(kExternalInterrupt, 0);
    std::uint64_t vector;
    const std::uint64_t kind = rng_.below(20);
    if (kind < 10) {
      vector = 0xEF;
    } else if (kind < 16) {
      vector = rng_.range(0x30, 0x3F);
    } else if (kind < 19) {
      vector = rng_.range(0xF0, 0xFB);
    } else {
      vector = 0xFF;
    }
    op.effects.push_back({kVmExitIntrInfo, kIntrValid | vector});
    return op;
  }

  SensitiveOp interrupt_window() { return kernel_op(kInterruptWindow, 0, /*force_if=*/true); }

  // Source/destination register for a CR move; RSP goes through the VMCS.
  unsigned cr_register(SensitiveOp& op, std::uint64_t value) {
    const auto reg = static_cast<unsigned>(rng_.below(16));
    if (reg == 4) {
      op.effects.push_back({kGuestRsp, value});
    } else {
      set(op, kIntelGpr[reg], value);
    }
    return reg;
  }

  SensitiveOp cr_access() {
    SensitiveOp op = kernel_op(kCrAccess, 3);
    std::uint64_t qual = 0;
    switch (rng_.below(10)) {
      case 0:
      case 1: {  // mov to CR0 toggling one of TS/WP/NE/MP
        static constexpr std::uint64_t kBits[] = {cr0::kTs, cr0::kWp, cr0::kNe, cr0::kMp};
        cr0_ ^= rng_.pick(kBits);
        qual = cr_qual(0, 0, cr_register(op, cr0_));
        break;
      }
      case 2:
        qual = cr_qual(0, 1, cr_register(op, rng_.next() & 0xFFFFFFFF));
        break;
      case 3:
        cr0_ &= ~cr0::kTs;
        qual = cr_qual(0, 2, 0);
        break;
      case 4: {
        const std::uint64_t src = (cr0_ & 0xF) ^ (rng_.chance(0.5) ? cr0::kTs : cr0::kMp);
        cr0_ = (cr0_ & ~0xFull) | src;
        qual = cr_qual(0, 3, 0, src);
        break;
      }
      case 5:
        qual = cr_qual(3, 0, cr_register(op, rng_.range(0x100, 0x3FFFF) << 12));
        break;
      case 6:
        qual = cr_qual(3, 1, cr_register(op, 0));
        break;
      case 7: {
        static constexpr std::uint64_t kBits[] = {1u << 4, 1u << 7, 1u << 9, 1u << 18};
        cr4_ ^= rng_.pick(kBits);
        qual = cr_qual(4, 0, cr_register(op, cr4_));
        break;
      }
      case 8:
        qual = cr_qual(4, 1, cr_register(op, 0));
        break;
      default:
        qual = cr_qual(8, rng_.below(2), cr_register(op, rng_.below(16)));
        break;
    }
    op.effects.push_back({kExitQualification, qual});
    return op;
  }

  SensitiveOp io() {
    SensitiveOp op = kernel_op(kIoInstruction, 2);
    std::uint64_t qual = 0;
    std::uint64_t rax = rng_.next() & 0xFFFFFFFF;
    switch (rng_.below(14)) {
      case 0: qual = io_qual(0, false, 0x20); rax = 0x20; break;
      case 1: qual = io_qual(0, false, rng_.chance(0.5) ? 0x21 : 0xA1); break;
      case 2: qual = io_qual(0, true, 0x21); break;
      case 3: qual = io_qual(0, false, 0x43); rax = 0x34; break;
      case 4: qual = io_qual(0, false, 0x40); rax = rng_.range(1, 0xFF); break;
      case 5: qual = io_qual(0, true, rng_.chance(0.5) ? 0x60 : 0x64); break;
      case 6: qual = io_qual(0, false, 0x70); rax = rng_.below(0x80); break;
      case 7: qual = io_qual(0, true, 0x71); break;
      case 8: qual = io_qual(0, false, 0x3F8); rax = rng_.range(0x20, 0x7E); break;
      case 9: qual = io_qual(0, true, 0x3FD); break;
      case 10:
        qual = io_qual(3, false, 0xCF8);
        rax = 0x80000000u | (rng_.below(4) << 11);
        break;
      case 11: qual = io_qual(3, true, 0xCFC); break;
      case 12: qual = io_qual(0, false, 0x80); break;
      default: qual = io_qual(1, true, 0x2F8); break;
    }
    set(op, GprId::kRax, rax);
    op.effects.push_back({kExitQualification, qual});
    return op;
  }

  SensitiveOp rdmsr() {
    static constexpr std::uint32_t kMsrs[] = {0x10,  0x1B,  0xFE,       0x174, 0x175, 0x176,
                                              0x1A0, 0x277, 0xC0000080, 0x200, 0x20F, 0x3A,
                                              0x808};
    SensitiveOp op = kernel_op(kRdmsr, 2);
    set(op, GprId::kRcx, rng_.pick(kMsrs));
    return op;
  }

  SensitiveOp wrmsr() {
    SensitiveOp op = kernel_op(kWrmsr, 2);
    std::uint32_t msr = 0;
    std::uint64_t value = rng_.next() & 0xFFFFFFFF;
    switch (rng_.below(8)) {
      case 0: msr = 0x1B; value = 0xFEE00900; break;
      case 1: msr = static_cast<std::uint32_t>(rng_.range(0x174, 0x176)); break;
      case 2: msr = 0x1A0; value = 0x1 | (rng_.below(2) << 3); break;
      case 3: msr = 0x277; value = 0x0007040600070406; break;
      case 4: msr = 0xC0000080; value = rng_.chance(0.5) ? 0x1 : 0x801; break;
      case 5: msr = static_cast<std::uint32_t>(rng_.range(0x200, 0x20F)); break;
      case 6: msr = 0x3A; break;
      default: msr = 0x10; break;
    }
    set(op, GprId::kRcx, msr);
    set(op, GprId::kRax, value & 0xFFFFFFFF);
    set(op, GprId::kRdx, value >> 32);
    return op;
  }

  SensitiveOp ept() {
    SensitiveOp op = kernel_op(kEptViolation, 3);
    std::uint64_t gpa = 0;
    std::uint64_t qual = rng_.chance(0.5) ? 1 : 2;  // read or write
    const std::uint64_t kind = rng_.below(20);
    if (kind < 12) {
      gpa = rng_.below(0x40000000) & ~0x3ull;
    } else if (kind < 13) {
      gpa = rng_.range(0xF0000, 0xFFFFF);
      qual = 2;
    } else if (kind < 18) {
      static constexpr std::uint64_t kRegs[] = {0xB0, 0x380, 0x300, 0x80, 0x30};
      gpa = 0xFEE00000 + rng_.pick(kRegs);
    } else if (kind < 19) {
      gpa = 0xFEC00000 + (rng_.below(2) << 4);
    } else {
      gpa = 0xFED000F0;
      qual = 1;
    }
    if (rng_.chance(0.3)) {
      qual |= 1ull << 7;
      op.effects.push_back({kGuestLinearAddress, 0xC0000000 + (gpa & 0x3FFFFFFF)});
    }
    set(op, GprId::kRax, rng_.next() & 0xFFFFFFFF);
    op.effects.push_back({kGuestPhysicalAddress, gpa});
    op.effects.push_back({kExitQualification, qual});
    return op;
  }

  const WorkloadProfile& profile_;
  Rng rng_;
  std::uint64_t cr0_ = kBootedCr0;
  std::uint64_t cr4_ = 0;
};

}  // namespace

std::string_view profile_name(Profile p) {
  switch (p) {
    case Profile::kOsBoot: return "OS_BOOT";
    case Profile::kCpuBound: return "CPU_BOUND";
    case Profile::kMemBound: return "MEM_BOUND";
    case Profile::kIoBound: return "IO_BOUND";
    case Profile::kIdle: return "IDLE";
  }
  return "?";
}

bool parse_profile(std::string_view text, Profile& out) {
  const std::string key = fold(text);
  for (Profile p : kAllProfiles) {
    if (fold(profile_name(p)) == key) {
      out = p;
      return true;
    }
  }
  return false;
}

double WorkloadProfile::share(ExitReason r) const {
  for (const auto& s : reason_mix) {
    if (s.reason == r) return s.probability;
  }
  return 0.0;
}

WorkloadProfile build_profile(Profile p) {
  switch (p) {
    case Profile::kOsBoot:
      return {p,
              {{kIoInstruction, 0.45},
               {kCrAccess, 0.20},
               {kCpuid, 0.10},
               {kRdmsr, 0.05},
               {kWrmsr, 0.05},
               {kEptViolation, 0.10},
               {kExternalInterrupt, 0.05}},
              50,
              200};
    case Profile::kCpuBound:
      return {p,
              {{kRdtsc, 0.80},
               {kCpuid, 0.08},
               {kExternalInterrupt, 0.06},
               {kInterruptWindow, 0.03},
               {kVmcall, 0.03}},
              500,
              2000};
    case Profile::kMemBound:
    case Profile::kIoBound:
      return {p,
              {{kRdtsc, 0.78},
               {p == Profile::kMemBound ? kEptViolation : kIoInstruction, 0.10},
               {kExternalInterrupt, 0.06},
               {kInterruptWindow, 0.03},
               {kVmcall, 0.03}},
              500,
              2000};
    case Profile::kIdle:
      return {p,
              {{kRdtsc, 0.80}, {kHlt, 0.10}, {kExternalInterrupt, 0.07}, {kInterruptWindow, 0.03}},
              50000,
              200000};
  }
  return build_profile(Profile::kCpuBound);
}

std::string profile_table_csv() {
  std::string out = "profile,reason,code,probability,compute_min,compute_max\n";
  for (Profile p : kAllProfiles) {
    const WorkloadProfile w = build_profile(p);
    for (const auto& s : w.reason_mix) {
      out += fmt::format("{},{},{},{:.2f},{},{}\n", profile_name(p), exit_reason_name(s.reason),
                         code_of(s.reason), s.probability, w.compute_min, w.compute_max);
    }
  }
  return out;
}

std::size_t GuestProgram::sensitive_count() const {
  return static_cast<std::size_t>(std::count_if(ops.begin(), ops.end(), [](const GuestOp& op) {
    return std::holds_alternative<SensitiveOp>(op);
  }));
}

GuestProgram protected_mode_switch_program() {
  GuestProgram p;
  auto add = [&p](SensitiveOp op) {
    p.ops.emplace_back(ComputeOp{100});
    p.ops.emplace_back(std::move(op));
  };
  // Interrupts off (CLI): the guest closes its interrupt window.
  add({kInterruptWindow,
       {},
       {{kGuestRip, 0x7C00}, {kGuestCsSelector, 0}, {kGuestCsBase, 0}, {kGuestRflags, 0x2}}});
  // Mask the PIC.
  add({kIoInstruction,
       {{GprId::kRax, 0xFF}},
       {{kGuestRip, 0x7C01}, {kVmExitInstructionLen, 2}, {kExitQualification, io_qual(0, false, 0x21)}}});
  // Load the GDT through the firmware port: base in RBX, limit in RCX.
  add({kIoInstruction,
       {{GprId::kRbx, 0x7E00}, {GprId::kRcx, 0x17}},
       {{kGuestRip, 0x7C05}, {kVmExitInstructionLen, 1}, {kExitQualification, io_qual(1, false, 0x510)}}});
  // mov cr0, eax with PE set.
  add({kCrAccess,
       {{GprId::kRax, cr0::kPe | cr0::kEt}},
       {{kGuestRip, 0x7C10}, {kVmExitInstructionLen, 3}, {kExitQualification, cr_qual(0, 0, 0)}}});
  // Far jump into the flat code segment, then mov eax, cr0.
  add({kCrAccess,
       {},
       {{kGuestRip, 0x9000},
        {kGuestCsSelector, 0x08},
        {kGuestDsSelector, 0x10},
        {kGuestSsSelector, 0x10},
        {kVmExitInstructionLen, 3},
        {kExitQualification, cr_qual(0, 1, 0)}}});
  // mov cr0, eax with PG set.
  add({kCrAccess,
       {{GprId::kRax, kBootedCr0}},
       {{kGuestRip, 0x9010}, {kVmExitInstructionLen, 3}, {kExitQualification, cr_qual(0, 0, 0)}}});
  return p;
}

GuestProgram generate_program(const WorkloadProfile& profile, std::size_t n_exits,
                              std::uint64_t rng_seed) {
  GuestProgram program;
  Generator gen(profile, rng_seed);
  std::size_t emitted = 0;
  if (profile.name == Profile::kOsBoot) {
    for (auto& op : protected_mode_switch_program().ops) {
      if (emitted == n_exits) break;
      if (std::holds_alternative<SensitiveOp>(op)) ++emitted;
      program.ops.push_back(std::move(op));
    }
  }
  while (emitted < n_exits) {
    gen.emit_compute(program);
    program.ops.emplace_back(gen.make(gen.draw_reason()));
    ++emitted;
  }
  return program;
}

GuestState guest_state_from(const Vcpu& vcpu) {
  GuestState g;
  const Vmcs& m = vcpu.vmcs;
  const std::uint64_t cr0v = m.raw(kGuestCr0);
  const std::uint64_t mask = m.raw(kCr0GuestHostMask);
  g.cr0_view = (cr0v & ~mask) | (m.raw(kCr0ReadShadow) & mask);
  g.mode = classify_cr0_mode(cr0v);
  g.halted = vcpu.hyp.halted;
  return g;
}

StepResult step(GuestState& guest, const GuestProgram& program, Vcpu& vcpu) {
  while (guest.pc < program.ops.size()) {
    const GuestOp& op = program.ops[guest.pc];
    if (const auto* c = std::get_if<ComputeOp>(&op)) {
      guest.virtual_cycles += c->cycles;
      vcpu.hyp.tsc += c->cycles;
      ++guest.pc;
      continue;
    }
    if (std::holds_alternative<HaltOp>(op)) break;
    const auto& s = std::get<SensitiveOp>(op);
    guest.halted = false;
    for (const auto& w : s.gprs) vcpu.gprs[w.reg] = w.value;
    raise_exit(vcpu.vmcs, s.reason);
    for (const auto& e : s.effects) vcpu.vmcs.set_raw(e.field, e.value);
    vcpu.vmcs.set_raw(kExitReason, code_of(s.reason));
    return {StepResult::Kind::kExit, s.reason};
  }
  return {StepResult::Kind::kCompleted, {}};
}

void resume(GuestState& guest, const Vcpu& vcpu) {
  ++guest.pc;
  const GuestState view = guest_state_from(vcpu);
  guest.cr0_view = view.cr0_view;
  guest.mode = view.mode;
  guest.halted = vcpu.hyp.halted;
}

RunResult run_program(Vcpu& vcpu, GuestState& guest, const GuestProgram& program,
                      std::size_t max_exits, ExitObserver* observer, const HypConfig& config) {
  RunResult result;
  while (result.exits < max_exits) {
    const StepResult s = step(guest, program, vcpu);
    if (s.kind == StepResult::Kind::kCompleted) {
      result.completed = true;
      break;
    }
    if (observer) observer->begin_exit(vcpu, s.reason);
    const ExitResult r = handle_exit(vcpu, config);
    if (observer) observer->end_exit(vcpu, r);
    ++result.exits;
    result.last = r.outcome;
    if (r.outcome.crashed()) return result;
    resume(guest, vcpu);
    result.mode_after_exit.push_back(guest.mode);
  }
  if (!result.completed && guest.pc >= program.ops.size()) result.completed = true;
  return result;
}

}  // namespace iris
