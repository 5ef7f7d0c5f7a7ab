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

#include "iris/hypervisor.h"

#include <fmt/format.h>

namespace iris {
namespace {

using enum Block;
using enum Field;
using Outcome = HandlerOutcome;

constexpr std::uint64_t kIntrValid = 1ull << 31;
constexpr std::uint64_t kRflagsTf = 1ull << 8;
constexpr std::uint64_t kRflagsIf = 1ull << 9;
constexpr std::uint64_t kBlockingMask = 0x3;  // STI | MOV-SS blocking

constexpr std::uint64_t kCpuIntWindow = 1ull << 2;
constexpr std::uint64_t kCpuTscOffsetting = 1ull << 3;
constexpr std::uint64_t kCpuRdtscExiting = 1ull << 12;
constexpr std::uint64_t kCpuSecondary = 1ull << 31;
constexpr std::uint64_t kSecTscScaling = 1ull << 25;
constexpr std::uint64_t kPinPreemptionTimer = 1ull << 6;

constexpr std::uint64_t kCr4Pse = 1ull << 4;
constexpr std::uint64_t kCr4Pae = 1ull << 5;
constexpr std::uint64_t kCr4Pge = 1ull << 7;
constexpr std::uint64_t kCr4Vmxe = 1ull << 13;
constexpr std::uint64_t kCr4Osxsave = 1ull << 18;

constexpr std::uint64_t kLow32 = 0xFFFFFFFFull;

struct Ctx {
  Vcpu& v;
  const HypConfig& cfg;

  void hit(Block b) { v.coverage.hit(b); }
  std::uint64_t rd(Field f) { return v.vmcs.read(f); }
  void wr(Field f, std::uint64_t x) { v.vmcs.write(f, x); }
  std::uint64_t& gpr(GprId id) { return v.gprs[id]; }
  HypState& hyp() { return v.hyp; }
};

// Intel register numbering used by exit qualifications (0=RAX, 1=RCX, 2=RDX,
// 3=RBX, 4=RSP, 5=RBP, 6=RSI, 7=RDI, 8..15=R8..R15).
constexpr GprId kIntelGpr[16] = {
    GprId::kRax, GprId::kRcx, GprId::kRdx, GprId::kRbx, GprId::kRax /*RSP*/,
    GprId::kRbp, GprId::kRsi, GprId::kRdi, GprId::kR8,  GprId::kR9,
    GprId::kR10, GprId::kR11, GprId::kR12, GprId::kR13, GprId::kR14,
    GprId::kR15};

std::uint64_t get_reg(Ctx& c, unsigned reg) {
  if (reg == 4) {
    c.hit(kCrSourceRsp);
    return c.rd(kGuestRsp);
  }
  return c.gpr(kIntelGpr[reg]);
}

void set_reg(Ctx& c, unsigned reg, std::uint64_t value) {
  if (reg == 4) {
    c.hit(kCrSourceRsp);
    c.wr(kGuestRsp, value);
    return;
  }
  c.gpr(kIntelGpr[reg]) = value;
}

void advance_rip(Ctx& c) {
  c.hit(kAdvanceRip);
  const std::uint64_t rip = c.rd(kGuestRip);
  const std::uint64_t len = c.rd(kVmExitInstructionLen);
  c.wr(kGuestRip, rip + len);
  const std::uint64_t intr = c.rd(kGuestInterruptibility);
  if (intr & kBlockingMask) {
    c.hit(kAdvanceRipClearShadow);
    c.wr(kGuestInterruptibility, intr & ~kBlockingMask);
  }
  if (c.rd(kGuestRflags) & kRflagsTf) {
    c.hit(kAdvanceRipSingleStep);
    c.wr(kGuestPendingDbgExceptions, c.rd(kGuestPendingDbgExceptions) | (1ull << 14));
  }
}

Outcome deliver_pending(Ctx& c) {
  c.hit(kDeliverCheck);
  const std::uint64_t flags = c.rd(kGuestRflags);
  const std::uint64_t intr = c.rd(kGuestInterruptibility);
  if ((flags & kRflagsIf) && !(intr & kBlockingMask)) {
    c.hit(kDeliverInject);
    c.wr(kVmEntryIntrInfo, kIntrValid | c.hyp().pending_vector);
    c.hyp().pending_vector = 0;
    c.hyp().halted = false;
  } else {
    c.hit(kDeliverOpenWindow);
    c.wr(kCpuBasedControls, c.rd(kCpuBasedControls) | kCpuIntWindow);
  }
  return Outcome::resume();
}

Outcome handle_external_interrupt(Ctx& c) {
  c.hit(kExtIntEntry);
  const std::uint64_t info = c.rd(kVmExitIntrInfo);
  if (!(info & kIntrValid)) {
    c.hit(kExtIntNotValid);
    return Outcome::resume();
  }
  const auto vector = static_cast<std::uint8_t>(info & 0xFF);
  if (vector < 0x20) {
    c.hit(kExtIntExceptionVector);
    throw HypervisorBug(fmt::format("external interrupt with exception vector {:#x}", vector));
  }
  if (vector == 0xEF) {
    c.hit(kExtIntTimer);
    c.hyp().pending_vector = 0xEC;
  } else if (vector >= 0xF0 && vector <= 0xFB) {
    c.hit(kExtIntIpi);
  } else if (vector == 0xFF) {
    c.hit(kExtIntSpurious);
  } else {
    c.hit(kExtIntDevice);
    c.hyp().pending_vector = vector;
  }
  if (c.hyp().halted) {
    c.hit(kExtIntWake);
    c.hyp().halted = false;
    c.wr(kGuestActivityState, 0);
  }
  if (c.hyp().pending_vector != 0) return deliver_pending(c);
  return Outcome::resume();
}

Outcome handle_interrupt_window(Ctx& c) {
  c.hit(kIntWinEntry);
  const std::uint64_t ctl = c.rd(kCpuBasedControls);
  if (!(ctl & kCpuIntWindow)) {
    c.hit(kIntWinSpurious);
  } else {
    c.hit(kIntWinCloseWindow);
    c.wr(kCpuBasedControls, ctl & ~kCpuIntWindow);
  }
  if (c.hyp().pending_vector == 0) {
    c.hit(kIntWinNothingPending);
    return Outcome::resume();
  }
  return deliver_pending(c);
}

Outcome handle_triple_fault(Ctx& c) {
  c.hit(kTripleFaultEntry);
  c.hit(kTripleFaultDump);
  // Register dump: the 31 lowest guest-state and control encodings.
  std::uint64_t digest = 0;
  for (unsigned e = 0; e < 31; ++e) digest ^= c.rd(static_cast<Field>(e)) + e;
  c.hit(kTripleFaultCrash);
  return Outcome::vm_crash(fmt::format("triple fault (state digest {:#x})", digest));
}

Outcome handle_cpuid(Ctx& c) {
  constexpr std::uint32_t kMaxBasic = 0xD;
  constexpr std::uint32_t kMaxHyper = 0x40000003;
  constexpr std::uint32_t kMaxExtended = 0x80000008;

  c.hit(kCpuidEntry);
  std::uint32_t leaf = static_cast<std::uint32_t>(c.gpr(GprId::kRax));
  const std::uint32_t subleaf = static_cast<std::uint32_t>(c.gpr(GprId::kRcx));
  std::uint32_t a = 0, b = 0, cx = 0, d = 0;

  if (leaf >= 0x40000000 && leaf < 0x40000100) {
    if (leaf == 0x40000000) {
      c.hit(kCpuidHypervisorBase);
      a = kMaxHyper;
      b = 0x73697249;  // "IrisIrisIris"
      cx = 0x73697249;
      d = 0x73697249;
    } else if (leaf <= kMaxHyper) {
      c.hit(kCpuidHypervisorLeaf);
      a = (leaf == 0x40000001) ? 0x00040011 : 0;
      b = (leaf == 0x40000002) ? 1 : 0;
    } else {
      c.hit(kCpuidHypervisorOutOfRange);
    }
  } else {
    if ((leaf >= 0x80000000 && leaf > kMaxExtended) || (leaf < 0x80000000 && leaf > kMaxBasic)) {
      c.hit(kCpuidClampToMax);
      leaf = kMaxBasic;
    }
    if (leaf >= 0x80000000) {
      if (leaf == 0x80000000) {
        c.hit(kCpuidExtendedBase);
        a = kMaxExtended;
      } else {
        c.hit(kCpuidExtended);
        a = leaf == 0x80000008 ? 0x3027 : 0;
        d = leaf == 0x80000001 ? (1u << 20) : 0;
      }
    } else {
      switch (leaf) {
        case 0x0:
          c.hit(kCpuidVendor);
          a = kMaxBasic;
          b = 0x756E6547;  // "GenuineIntel"
          d = 0x49656E69;
          cx = 0x6C65746E;
          break;
        case 0x1:
          c.hit(kCpuidFeatures);
          a = 0x000306A9;
          d = 0x178BFBFF;
          cx = 0x80982201;
          if (c.rd(kGuestCr4) & kCr4Osxsave) {
            c.hit(kCpuidOsxsave);
            cx |= 1u << 27;
          }
          break;
        case 0x4:
          if (subleaf < 4) {
            c.hit(kCpuidCacheParams);
            a = 0x121 + subleaf * 0x20;
            b = 0x1C0003F;
          } else {
            c.hit(kCpuidCacheInvalidSubleaf);
          }
          break;
        case 0x7:
          if (subleaf == 0) {
            c.hit(kCpuidStructuredFeatures);
            b = 0x281;
          } else {
            c.hit(kCpuidStructuredSubleaf);
          }
          break;
        case 0xB:
          c.hit(kCpuidTopology);
          a = subleaf == 0 ? 1 : 0;
          b = subleaf == 0 ? 1 : 0;
          cx = subleaf & 0xFF;
          break;
        default:
          break;
      }
    }
  }
  c.hit(kCpuidStore);
  c.gpr(GprId::kRax) = a;
  c.gpr(GprId::kRbx) = b;
  c.gpr(GprId::kRcx) = cx;
  c.gpr(GprId::kRdx) = d;
  advance_rip(c);
  return Outcome::resume();
}

Outcome handle_hlt(Ctx& c) {
  c.hit(kHltEntry);
  const std::uint64_t flags = c.rd(kGuestRflags);
  advance_rip(c);
  if (!(flags & kRflagsIf)) {
    c.hit(kHltIrqsDisabled);
    return Outcome::vm_crash("HLT with interrupts disabled");
  }
  if (c.hyp().pending_vector != 0) {
    c.hit(kHltPendingIrq);
    return deliver_pending(c);
  }
  c.hit(kHltBlock);
  c.hyp().halted = true;
  c.wr(kGuestActivityState, 1);
  return Outcome::resume();
}

Outcome handle_rdtsc(Ctx& c) {
  c.hit(kRdtscEntry);
  const std::uint64_t ctl = c.rd(kCpuBasedControls);
  if (!(ctl & kCpuRdtscExiting)) c.hit(kRdtscSpurious);
  std::uint64_t value = c.hyp().tsc;
  if (ctl & kCpuTscOffsetting) {
    c.hit(kRdtscOffset);
    value += c.rd(kTscOffset);
  } else {
    c.hit(kRdtscNoOffset);
  }
  if ((ctl & kCpuSecondary) && (c.rd(kSecondaryControls) & kSecTscScaling)) {
    c.hit(kRdtscScaled);
    const std::uint64_t mult = c.rd(kTscMultiplier);
    value = static_cast<std::uint64_t>((static_cast<unsigned __int128>(value) * mult) >> 48);
  }
  c.hit(kRdtscStore);
  c.gpr(GprId::kRax) = value & kLow32;
  c.gpr(GprId::kRdx) = value >> 32;
  advance_rip(c);
  return Outcome::resume();
}

Outcome handle_vmcall(Ctx& c) {
  constexpr std::int64_t kEperm = -1, kEinval = -22, kEnosys = -38;

  c.hit(kVmcallEntry);
  const std::uint64_t cs = c.rd(kGuestCsSelector);
  const std::uint64_t nr = c.gpr(GprId::kRax);
  const std::uint64_t arg1 = c.gpr(GprId::kRbx);
  const std::uint64_t arg2 = c.gpr(GprId::kRcx);
  std::int64_t ret = 0;

  if (cs & 3) {
    c.hit(kVmcallNotKernel);
    ret = kEperm;
  } else if (nr >= 64) {
    c.hit(kVmcallOutOfRange);
    ret = kEnosys;
  } else {
    switch (nr) {
      case 12:  // memory_op
        c.hit(kVmcallMemoryOp);
        if (arg1 == 2) {
          c.hit(kVmcallMemoryMaxRam);
          ret = 0x40000;
        }
        break;
      case 17:  // xen_version
        if (arg1 == 0) {
          c.hit(kVmcallXenVersion);
          ret = (4 << 16) | 17;
        } else {
          c.hit(kVmcallXenVersionOther);
        }
        break;
      case 18:  // console_io
        c.hit(kVmcallConsoleIo);
        c.hyp().dev.serial_tx += arg2 & 0xFFFF;
        ret = static_cast<std::int64_t>(arg2 & 0xFFFF);
        break;
      case 29:  // sched_op
        if (arg1 == 0) {
          c.hit(kVmcallSchedYield);
        } else if (arg1 == 1) {
          c.hit(kVmcallSchedBlock);
          c.hyp().halted = true;
        } else {
          c.hit(kVmcallSchedOther);
          ret = kEinval;
        }
        break;
      case 32:  // event_channel_op
        if (arg1 == 4) {
          c.hit(kVmcallEvtchnSend);
        } else {
          c.hit(kVmcallEvtchnOther);
          ret = kEinval;
        }
        break;
      case 34: {  // hvm_op: set_param (0) / get_param (1), index in RCX
        c.hit(kVmcallHvmOp);
        if (arg1 > 1) {
          ret = kEnosys;
          break;
        }
        auto& params = c.hyp().hvm_params;
        if (arg2 > params.size()) {
          c.hit(kVmcallHvmBadIndex);
          ret = kEinval;
        } else if (arg1 == 0) {
          c.hit(kVmcallHvmSetParam);
          params.at(arg2) = c.gpr(GprId::kRdx);
        } else {
          c.hit(kVmcallHvmGetParam);
          ret = static_cast<std::int64_t>(params.at(arg2));
        }
        break;
      }
      default:
        c.hit(kVmcallUnimplemented);
        ret = kEnosys;
        break;
    }
  }
  c.hit(kVmcallReturn);
  c.gpr(GprId::kRax) = static_cast<std::uint64_t>(ret) & kLow32;
  advance_rip(c);
  return Outcome::resume();
}

bool cr0_valid(std::uint64_t v) {
  if (v & ~cr0::kDefined) return false;
  if ((v & cr0::kPg) && !(v & cr0::kPe)) return false;
  if ((v & cr0::kNw) && !(v & cr0::kCd)) return false;
  return true;
}

Outcome cr_passthrough_stub(Ctx& c, unsigned cr, unsigned type, unsigned reg) {
  c.hit(kCrPassthroughStub);
  if (cr == 0 && type == 0) {
    const std::uint64_t value = get_reg(c, reg);
    const std::uint64_t old = c.rd(kGuestCr0);
    const std::uint64_t mask = c.rd(kCr0GuestHostMask);
    c.wr(kGuestCr0, (old & mask) | (value & ~mask));
  } else if (cr == 0 && type == 1) {
    set_reg(c, reg, c.rd(kGuestCr0));
  }
  advance_rip(c);
  return Outcome::resume();
}

Outcome handle_cr_access(Ctx& c) {
  c.hit(kCrEntry);
  const std::uint64_t qual = c.rd(kExitQualification);
  const unsigned cr = qual & 0xF;
  const unsigned type = (qual >> 4) & 0x3;
  const unsigned reg = (qual >> 8) & 0xF;
  if (!c.cfg.emulate_cr_access) return cr_passthrough_stub(c, cr, type, reg);

  const std::uint64_t mask = c.rd(kCr0GuestHostMask);
  c.hyp().cr0_guest_host_mask = mask;
  if (!(mask & cr0::kPe)) throw HypervisorBug("CR0 guest/host mask does not own CR0.PE");
  const std::uint64_t old = c.rd(kGuestCr0);
  bool sync_mode = false;

  if (type == 0 || type == 1) {
    const bool to = type == 0;
    switch (cr) {
      case 0:
        if (to) {
          c.hit(kCrMovToCr0);
          const std::uint64_t value = get_reg(c, reg);
          if (!cr0_valid(value)) {
            c.hit(kCrCr0Invalid);
            return Outcome::inject(kVectorGp);
          }
          std::uint64_t shadow = c.rd(kCr0ReadShadow);
          if ((value ^ shadow) & mask) {
            c.hit(kCrCr0MaskHit);
            shadow = (shadow & ~mask) | (value & mask);
          } else {
            c.hit(kCrCr0PassThrough);
          }
          c.wr(kCr0ReadShadow, shadow);
          c.hyp().cr0_read_shadow_cache = shadow;
          c.wr(kGuestCr0, value);
          if ((value ^ old) & (cr0::kPe | cr0::kPg)) c.hit(kCrCr0ModeChange);
        } else {
          c.hit(kCrMovFromCr0);
          const std::uint64_t shadow = c.rd(kCr0ReadShadow);
          set_reg(c, reg, (old & ~mask) | (shadow & mask));
        }
        sync_mode = true;
        break;
      case 3:
        if (to) {
          c.hit(kCrMovToCr3);
          const std::uint64_t value = get_reg(c, reg);
          if (value >= 0x40000000) {
            c.hit(kCrCr3OutOfRange);
            return Outcome::vm_crash(fmt::format("bad CR3 {:#x}", value));
          }
          c.wr(kGuestCr3, value);
          if (old & cr0::kPg) c.hit(kCrCr3Flush);
        } else {
          c.hit(kCrMovFromCr3);
          set_reg(c, reg, c.rd(kGuestCr3));
        }
        break;
      case 4:
        if (to) {
          c.hit(kCrMovToCr4);
          const std::uint64_t value = get_reg(c, reg);
          if (value & kCr4Vmxe) {
            c.hit(kCrCr4Invalid);
            return Outcome::inject(kVectorGp);
          }
          const std::uint64_t old4 = c.rd(kGuestCr4);
          if ((old4 ^ value) & (kCr4Pse | kCr4Pae | kCr4Pge)) c.hit(kCrCr4PagingChange);
          c.wr(kGuestCr4, value);
          c.wr(kCr4ReadShadow, value);
        } else {
          c.hit(kCrMovFromCr4);
          set_reg(c, reg, c.rd(kCr4ReadShadow));
        }
        break;
      case 8:
        c.hit(kCrCr8);
        if (to) {
          c.hyp().lapic.tpr = static_cast<std::uint32_t>((get_reg(c, reg) & 0xF) << 4);
        } else {
          set_reg(c, reg, c.hyp().lapic.tpr >> 4);
        }
        break;
      default:
        c.hit(kCrBadRegister);
        return Outcome::inject(kVectorGp);
    }
  } else if (type == 2) {
    c.hit(kCrClts);
    const std::uint64_t shadow = c.rd(kCr0ReadShadow) & ~cr0::kTs;
    c.wr(kCr0ReadShadow, shadow);
    c.hyp().cr0_read_shadow_cache = shadow;
    c.wr(kGuestCr0, old & ~cr0::kTs);
    sync_mode = true;
  } else {
    c.hit(kCrLmsw);
    // LMSW loads MP/EM/TS and can set, but never clear, PE.
    const std::uint64_t src = (qual >> 16) & 0xF;
    const std::uint64_t value = (old & ~0xEull) | (src & 0xF) | (old & cr0::kPe);
    const std::uint64_t shadow = (c.rd(kCr0ReadShadow) & ~0xFull) | (value & 0xF);
    c.wr(kCr0ReadShadow, shadow);
    c.hyp().cr0_read_shadow_cache = shadow;
    c.wr(kGuestCr0, value);
    sync_mode = true;
  }

  if (sync_mode) {
    c.hit(kCrModeSync);
    // Reload of the code segment that accompanies a mode switch.
    (void)c.rd(kGuestCsSelector);
    c.hyp().vcpu_mode = classify_cr0_mode(c.rd(kGuestCr0));
  }
  advance_rip(c);
  return Outcome::resume();
}

std::uint64_t cmos_value(std::uint8_t index) {
  switch (index) {
    case 0x0A: return 0x26;
    case 0x0B: return 0x02;
    case 0x0D: return 0x80;
    case 0x10: return 0x40;
    default: return index * 7u & 0xFF;
  }
}

Outcome handle_io(Ctx& c) {
  c.hit(kIoEntry);
  const std::uint64_t qual = c.rd(kExitQualification);
  const unsigned size_code = qual & 0x7;
  const bool in = (qual >> 3) & 1;
  const bool string_op = (qual >> 4) & 1;
  const auto port = static_cast<std::uint16_t>((qual >> 16) & 0xFFFF);

  if (string_op) {
    c.hit(kIoString);
    return Outcome::inject(kVectorGp);
  }
  std::uint64_t mask = 0;
  switch (size_code) {
    case 0: mask = 0xFF; break;
    case 1: mask = 0xFFFF; break;
    case 3: mask = 0xFFFFFFFF; break;
    default:
      c.hit(kIoBadSize);
      throw HypervisorBug(fmt::format("bad I/O access size code {}", size_code));
  }
  c.hit(in ? kIoIn : kIoOut);
  auto& dev = c.hyp().dev;
  const std::uint64_t out = c.gpr(GprId::kRax) & mask;
  std::uint64_t result = 0;

  if (port == 0x20 || port == 0x21 || port == 0xA0 || port == 0xA1) {
    c.hit(kIoPic);
    const bool data_port = port & 1;
    auto& pic_mask = port < 0xA0 ? dev.pic_master_mask : dev.pic_slave_mask;
    if (!in && data_port) {
      c.hit(kIoPicMask);
      pic_mask = static_cast<std::uint8_t>(out);
    }
    result = data_port ? pic_mask : 0;
  } else if (port >= 0x40 && port <= 0x43) {
    c.hit(kIoPit);
    if (!in && port == 0x43) {
      dev.pit_mode = static_cast<std::uint8_t>(out);
    } else if (!in && port == 0x40) {
      c.hit(kIoPitProgram);
      dev.pit_reload = static_cast<std::uint16_t>(out);
      if (dev.pit_reload == 0) throw HypervisorBug("divide error: PIT reload value is zero");
      dev.pit_period = 1193182u / dev.pit_reload;
    }
    result = dev.pit_reload & 0xFF;
  } else if (port == 0x60 || port == 0x64) {
    c.hit(kIoKeyboard);
    result = port == 0x64 ? 0x1C : 0;
  } else if (port == 0x70) {
    c.hit(kIoCmosIndex);
    if (!in) dev.cmos_index = static_cast<std::uint8_t>(out & 0x7F);
    result = dev.cmos_index;
  } else if (port == 0x71) {
    c.hit(kIoCmosData);
    result = cmos_value(dev.cmos_index);
  } else if (port >= 0x3F8 && port <= 0x3FF) {
    c.hit(kIoSerial);
    if (!in && port == 0x3F8) {
      c.hit(kIoSerialTx);
      ++dev.serial_tx;
    }
    result = port == 0x3FD ? 0x60 : 0;
  } else if (port == 0xCF8) {
    c.hit(kIoPciAddress);
    if (!in) dev.pci_address = static_cast<std::uint32_t>(out);
    result = dev.pci_address;
  } else if (port >= 0xCFC && port <= 0xCFF) {
    c.hit(kIoPciData);
    const bool host_bridge = (dev.pci_address & 0x80FFFF00u) == 0x80000000u;
    result = host_bridge ? 0x12378086 : 0xFFFFFFFF;
  } else if (port == 0x510) {
    c.hit(kIoGdtLoad);
    if (!in) {
      c.wr(kGuestGdtrBase, c.gpr(GprId::kRbx));
      c.wr(kGuestGdtrLimit, c.gpr(GprId::kRcx));
    }
  } else if (in) {
    c.hit(kIoUnclaimedIn);
    result = mask;
  } else {
    c.hit(kIoUnclaimedOut);
  }

  if (in) {
    c.hit(kIoStoreResult);
    auto& rax = c.gpr(GprId::kRax);
    rax = (rax & ~mask) | (result & mask);
  }
  advance_rip(c);
  return Outcome::resume();
}

bool is_mtrr(std::uint32_t msr) { return msr >= 0x200 && msr <= 0x20F; }
bool is_x2apic(std::uint32_t msr) { return msr >= 0x800 && msr <= 0x8FF; }
bool is_sysenter(std::uint32_t msr) { return msr >= 0x174 && msr <= 0x176; }

Outcome handle_rdmsr(Ctx& c) {
  c.hit(kRdmsrEntry);
  const auto msr = static_cast<std::uint32_t>(c.gpr(GprId::kRcx));
  const MsrState& s = c.hyp().msr;
  std::uint64_t value = 0;
  if (msr == 0x10) {
    c.hit(kRdmsrTsc);
    value = c.hyp().tsc;
  } else if (msr == 0x1B) {
    c.hit(kRdmsrApicBase);
    value = s.apic_base;
  } else if (msr == 0xFE) {
    c.hit(kRdmsrMtrrCap);
    value = 0x508;
  } else if (is_sysenter(msr)) {
    c.hit(kRdmsrSysenter);
    value = s.sysenter[msr - 0x174];
  } else if (msr == 0x1A0) {
    c.hit(kRdmsrMiscEnable);
    value = s.misc_enable;
  } else if (msr == 0x277) {
    c.hit(kRdmsrPat);
    value = s.pat;
  } else if (msr == 0xC0000080) {
    c.hit(kRdmsrEfer);
    value = s.efer;
  } else if (is_mtrr(msr)) {
    c.hit(kRdmsrMtrr);
    value = s.mtrr[msr - 0x200];
  } else if (is_x2apic(msr)) {
    if (!s.x2apic) {
      c.hit(kRdmsrX2apicDisabled);
      return Outcome::inject(kVectorGp);
    }
    c.hit(kRdmsrX2apic);
    value = msr == 0x808 ? c.hyp().lapic.tpr : 0;
  } else {
    c.hit(kRdmsrUnknown);
    return Outcome::inject(kVectorGp);
  }
  c.hit(kRdmsrStore);
  c.gpr(GprId::kRax) = value & kLow32;
  c.gpr(GprId::kRdx) = value >> 32;
  advance_rip(c);
  return Outcome::resume();
}

bool pat_valid(std::uint64_t pat) {
  for (int i = 0; i < 8; ++i) {
    const auto type = (pat >> (8 * i)) & 0xFF;
    if (type == 2 || type == 3 || type > 7) return false;
  }
  return true;
}

Outcome handle_wrmsr(Ctx& c) {
  c.hit(kWrmsrEntry);
  const auto msr = static_cast<std::uint32_t>(c.gpr(GprId::kRcx));
  const std::uint64_t value = (c.gpr(GprId::kRdx) << 32) | (c.gpr(GprId::kRax) & kLow32);
  MsrState& s = c.hyp().msr;
  if (msr == 0x1B) {
    c.hit(kWrmsrApicBase);
    if ((value & (1ull << 10)) && !s.x2apic) {
      c.hit(kWrmsrX2apicEnable);
      s.x2apic = true;
    }
    s.apic_base = value;
  } else if (msr == 0x10 || msr == 0xFE) {
    c.hit(kWrmsrReadOnly);
    return Outcome::inject(kVectorGp);
  } else if (is_sysenter(msr)) {
    c.hit(kWrmsrSysenter);
    s.sysenter[msr - 0x174] = value;
  } else if (msr == 0x1A0) {
    c.hit(kWrmsrMiscEnable);
    s.misc_enable = value;
  } else if (msr == 0x277) {
    if (!pat_valid(value)) {
      c.hit(kWrmsrPatInvalid);
      return Outcome::inject(kVectorGp);
    }
    c.hit(kWrmsrPat);
    s.pat = value;
  } else if (msr == 0xC0000080) {
    c.hit(kWrmsrEfer);
    if (value & (1ull << 8)) {
      c.hit(kWrmsrEferLongMode);
      return Outcome::inject(kVectorGp);
    }
    s.efer = value;
  } else if (is_mtrr(msr)) {
    c.hit(kWrmsrMtrr);
    s.mtrr[msr - 0x200] = value;
  } else if (is_x2apic(msr)) {
    if (!s.x2apic) {
      c.hit(kWrmsrX2apicDisabled);
      return Outcome::inject(kVectorGp);
    }
    c.hit(kWrmsrX2apic);
    if (msr == 0x808) c.hyp().lapic.tpr = static_cast<std::uint32_t>(value & 0xFF);
  } else {
    c.hit(kWrmsrUnknown);
    return Outcome::inject(kVectorGp);
  }
  advance_rip(c);
  return Outcome::resume();
}

constexpr std::uint64_t kRamTop = 0x40000000;
constexpr std::uint64_t kLapicBase = 0xFEE00000;
constexpr std::uint64_t kIoapicBase = 0xFEC00000;
constexpr std::uint64_t kHpetBase = 0xFED00000;

Outcome handle_ept_violation(Ctx& c) {
  c.hit(kEptEntry);
  const std::uint64_t qual = c.rd(kExitQualification);
  const std::uint64_t gpa = c.rd(kGuestPhysicalAddress);
  if (qual & (1ull << 7)) {
    c.hit(kEptLinearValid);
    (void)c.rd(kGuestLinearAddress);
  }
  const bool write = qual & 2;
  const bool fetch = qual & 4;

  if (gpa < kRamTop) {
    if (write && gpa >= 0xF0000 && gpa < 0x100000) {
      c.hit(kEptRomWrite);
      advance_rip(c);
    } else {
      // Populate the page; the faulting access is retried.
      c.hit(kEptRam);
    }
    return Outcome::resume();
  }

  const bool lapic = gpa >= kLapicBase && gpa < kLapicBase + 0x1000;
  const bool ioapic = gpa >= kIoapicBase && gpa < kIoapicBase + 0x1000;
  const bool hpet = gpa >= kHpetBase && gpa < kHpetBase + 0x400;
  if (!lapic && !ioapic && !hpet) {
    c.hit(kEptUnmapped);
    return Outcome::vm_crash(fmt::format("EPT violation on unmapped GPA {:#x}", gpa));
  }
  if (fetch) {
    c.hit(kEptMmioFetch);
    return Outcome::vm_crash(fmt::format("instruction fetch from MMIO GPA {:#x}", gpa));
  }

  const std::uint64_t data = c.gpr(GprId::kRax) & kLow32;
  std::uint64_t result = 0;
  if (lapic) {
    c.hit(kEptLapic);
    LapicState& l = c.hyp().lapic;
    switch (gpa & 0xFFF) {
      case 0xB0:
        if (write) {
          c.hit(kEptLapicEoi);
          ++l.eoi_count;
        }
        break;
      case 0x380:
        if (write) {
          c.hit(kEptLapicTimer);
          l.timer_initial = static_cast<std::uint32_t>(data);
        }
        result = l.timer_initial;
        break;
      case 0x300:
        if (write) {
          c.hit(kEptLapicIcr);
          l.icr = data;
        }
        result = l.icr & kLow32;
        break;
      case 0x80:
        if (write) l.tpr = static_cast<std::uint32_t>(data & 0xFF);
        result = l.tpr;
        break;
      case 0x30:
        result = 0x50014;  // version
        break;
      default:
        break;
    }
  } else if (ioapic) {
    c.hit(kEptIoapic);
    result = 0x00170011;
  } else {
    c.hit(kEptHpet);
    result = 0x8086A201;
  }
  if (write) {
    c.hit(kEptMmioWrite);
  } else {
    c.hit(kEptMmioRead);
    c.gpr(GprId::kRax) = result & kLow32;
  }
  advance_rip(c);
  return Outcome::resume();
}

Outcome handle_preemption_timer(Ctx& c) {
  c.hit(kTimerEntry);
  if (!(c.rd(kPinBasedControls) & kPinPreemptionTimer)) {
    c.hit(kTimerSpurious);
    return Outcome::resume();
  }
  c.hit(kTimerRearm);
  c.wr(kPreemptionTimerValue, 0);
  return Outcome::resume();
}

Outcome dispatch(Ctx& c, ExitReason reason) {
  switch (reason) {
    case ExitReason::kExternalInterrupt: return handle_external_interrupt(c);
    case ExitReason::kTripleFault: return handle_triple_fault(c);
    case ExitReason::kInterruptWindow: return handle_interrupt_window(c);
    case ExitReason::kCpuid: return handle_cpuid(c);
    case ExitReason::kHlt: return handle_hlt(c);
    case ExitReason::kRdtsc: return handle_rdtsc(c);
    case ExitReason::kVmcall: return handle_vmcall(c);
    case ExitReason::kCrAccess: return handle_cr_access(c);
    case ExitReason::kIoInstruction: return handle_io(c);
    case ExitReason::kRdmsr: return handle_rdmsr(c);
    case ExitReason::kWrmsr: return handle_wrmsr(c);
    case ExitReason::kEptViolation: return handle_ept_violation(c);
    case ExitReason::kPreemptionTimer: return handle_preemption_timer(c);
  }
  c.hit(kDispatchUnhandled);
  throw HypervisorBug(fmt::format("unhandled exit reason {}", code_of(reason)));
}

Outcome vm_entry(Ctx& c, Outcome out) {
  if (out.kind == Outcome::Kind::kInjectFault) {
    c.hit(kDispatchInjectEvent);
    // Hardware exception, error code delivered for #GP.
    std::uint64_t info = kIntrValid | (3ull << 8) | out.vector;
    if (out.vector == kVectorGp) info |= 1ull << 11;
    c.wr(kVmEntryIntrInfo, info);
  }
  c.hit(kDispatchVmEntry);
  const CheckResult check = vm_entry_check(c.v.vmcs);
  if (!check.ok()) {
    c.hit(kDispatchEntryCheckFailed);
    return Outcome::vm_crash(check.first_log());
  }
  // Successful entry: the processor consumes the event and loads guest state.
  Vmcs& vmcs = c.v.vmcs;
  vmcs.set_raw(kVmEntryIntrInfo, vmcs.raw(kVmEntryIntrInfo) & ~kIntrValid);
  c.v.hyp.vcpu_mode = classify_cr0_mode(vmcs.raw(kGuestCr0));
  return out;
}

}  // namespace

std::string_view outcome_kind_name(HandlerOutcome::Kind kind) {
  switch (kind) {
    case HandlerOutcome::Kind::kResume: return "Resume";
    case HandlerOutcome::Kind::kInjectFault: return "InjectFault";
    case HandlerOutcome::Kind::kVmCrash: return "VmCrash";
    case HandlerOutcome::Kind::kHypCrash: return "HypCrash";
  }
  return "?";
}

std::uint64_t exit_cost(ExitReason reason) {
  switch (reason) {
    case ExitReason::kRdtsc: return kDispatchCycles + kRdtscCycles;
    case ExitReason::kCrAccess: return kDispatchCycles + kCrAccessCycles;
    case ExitReason::kIoInstruction: return kDispatchCycles + kIoCycles;
    default: return kDispatchCycles + kDefaultHandlerCycles;
  }
}

void raise_exit(Vmcs& vmcs, ExitReason reason) {
  for (const auto& spec : vmcs_field_table()) {
    if (spec.area == VmcsArea::kExitInfo) {
      vmcs.set_raw(static_cast<Field>(spec.compact_encoding), 0);
    }
  }
  vmcs.set_raw(kExitReason, code_of(reason));
}

void construct_vcpu(Vcpu& v) {
  v.gprs = GprFile{};
  v.hyp = HypState{};
  v.coverage.reset();
  Vmcs& m = v.vmcs;
  m.clear();
  m.load();

  const std::uint64_t cr0_mask = cr0::kPe | cr0::kTs | cr0::kNw | cr0::kCd;
  m.set_raw(kGuestCr0, cr0::kEt);
  m.set_raw(kGuestRip, 0xFFF0);
  m.set_raw(kGuestRflags, 0x2);
  m.set_raw(kGuestCsSelector, 0xF000);
  m.set_raw(kGuestCsBase, 0xF0000);
  m.set_raw(kGuestGdtrLimit, 0xFFFF);
  m.set_raw(kGuestLdtrLimit, 0xFFFF);
  m.set_raw(kPinBasedControls, (1ull << 0) | (1ull << 3));
  m.set_raw(kCpuBasedControls, (1ull << 7) | kCpuRdtscExiting | kCpuTscOffsetting |
                                   (1ull << 15) | (1ull << 24) | kCpuSecondary);
  m.set_raw(kSecondaryControls, (1ull << 1) | (1ull << 7));
  m.set_raw(kExceptionBitmap, 1ull << 18);
  m.set_raw(kCr0GuestHostMask, cr0_mask);
  m.set_raw(kCr4GuestHostMask, kCr4Vmxe);
  m.set_raw(kCr0ReadShadow, cr0::kEt);
  m.set_raw(kTscMultiplier, 1ull << 48);
  m.set_raw(kVmExitControls, 0x36DFF);
  m.set_raw(kVmEntryControls, 0x13FF);
  m.set_raw(kEptPointer, 0x10005E);
  m.set_raw(kHostCr0, 0x80050033);
  m.set_raw(kHostCr3, 0x1000);
  m.set_raw(kHostCr4, 0x3726E0);
  m.set_raw(kHostRip, 0xFFFF82D0402E8000);
  m.set_raw(kHostRsp, 0xFFFF83003FFF7F90);

  v.hyp.cr0_guest_host_mask = cr0_mask;
  v.hyp.cr0_read_shadow_cache = cr0::kEt;
  v.hyp.vcpu_mode = classify_cr0_mode(m.raw(kGuestCr0));
  m.launch();
}

ExitResult handle_exit(Vcpu& vcpu, const HypConfig& config) {
  Ctx c{vcpu, config};
  Outcome out;
  std::uint64_t cost = kDispatchCycles + kDefaultHandlerCycles;
  try {
    c.hit(kDispatchEntry);
    const std::uint64_t raw_reason = c.rd(kExitReason);
    const auto reason = static_cast<ExitReason>(raw_reason & 0xFFFF);
    cost = exit_cost(reason);
    if (raw_reason & (1ull << 31)) {
      c.hit(kDispatchFailedEntry);
      out = Outcome::vm_crash(
          fmt::format("VM entry failure (exit reason {:#x})", raw_reason & kLow32));
    } else {
      bool wide = false;
      for (std::size_t i = 0; i < kGprCount; ++i) wide |= (vcpu.gprs.at(i) >> 32) != 0;
      if (wide) {
        // 32-bit guest: upper register halves are not architecturally visible.
        c.hit(kDispatchTruncateGprs);
        for (std::size_t i = 0; i < kGprCount; ++i) vcpu.gprs.at(i) &= kLow32;
      }
      out = dispatch(c, reason);
    }
  } catch (const HypervisorBug& e) {
    out = Outcome::hyp_crash(e.what());
  } catch (const VmxError& e) {
    out = Outcome::hyp_crash(e.what());
  } catch (const std::out_of_range& e) {
    out = Outcome::hyp_crash(fmt::format("out-of-bounds access: {}", e.what()));
  }
  if (!out.crashed()) out = vm_entry(c, std::move(out));
  if (out.crashed()) vcpu.hyp.crash_log.push_back(out.log);
  vcpu.hyp.tsc += cost;
  return ExitResult{std::move(out), cost};
}

}  // namespace iris
