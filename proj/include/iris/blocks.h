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

// Basic-block labels of the instrumented reference exit handler.
//
// Each entry is X(Id, handler, async). `async` marks the interrupt-delivery
// blocks (irq/vlapic/vpt analogs) that asynchronous host activity can execute
// during any exit; the replay noise injector draws from that pool. The last
// two async blocks are never reached by handler code at all.

#ifndef IRIS_BLOCKS_H_
#define IRIS_BLOCKS_H_

#include <bitset>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#define IRIS_BLOCK_LIST(X)                      \
  X(DispatchEntry, dispatch, false)             \
  X(DispatchFailedEntry, dispatch, false)       \
  X(DispatchUnhandled, dispatch, false)         \
  X(DispatchTruncateGprs, dispatch, false)      \
  X(DispatchInjectEvent, dispatch, false)       \
  X(DispatchVmEntry, dispatch, false)           \
  X(DispatchEntryCheckFailed, dispatch, false)  \
  X(AdvanceRip, advance_rip, false)             \
  X(AdvanceRipClearShadow, advance_rip, false)  \
  X(AdvanceRipSingleStep, advance_rip, false)   \
  X(ExtIntEntry, external_interrupt, false)     \
  X(ExtIntNotValid, external_interrupt, false)  \
  X(ExtIntExceptionVector, external_interrupt, false) \
  X(ExtIntTimer, external_interrupt, true)      \
  X(ExtIntIpi, external_interrupt, true)        \
  X(ExtIntDevice, external_interrupt, true)     \
  X(ExtIntSpurious, external_interrupt, false)  \
  X(ExtIntWake, external_interrupt, false)      \
  X(DeliverCheck, vlapic_deliver, true)         \
  X(DeliverInject, vlapic_deliver, true)        \
  X(DeliverOpenWindow, vlapic_deliver, true)    \
  X(IntWinEntry, interrupt_window, false)       \
  X(IntWinSpurious, interrupt_window, false)    \
  X(IntWinCloseWindow, interrupt_window, false) \
  X(IntWinNothingPending, interrupt_window, false) \
  X(TripleFaultEntry, triple_fault, false)      \
  X(TripleFaultDump, triple_fault, false)       \
  X(TripleFaultCrash, triple_fault, false)      \
  X(CpuidEntry, cpuid, false)                   \
  X(CpuidVendor, cpuid, false)                  \
  X(CpuidFeatures, cpuid, false)                \
  X(CpuidOsxsave, cpuid, false)                 \
  X(CpuidCacheParams, cpuid, false)             \
  X(CpuidCacheInvalidSubleaf, cpuid, false)     \
  X(CpuidStructuredFeatures, cpuid, false)      \
  X(CpuidStructuredSubleaf, cpuid, false)       \
  X(CpuidTopology, cpuid, false)                \
  X(CpuidHypervisorBase, cpuid, false)          \
  X(CpuidHypervisorLeaf, cpuid, false)          \
  X(CpuidHypervisorOutOfRange, cpuid, false)    \
  X(CpuidExtendedBase, cpuid, false)            \
  X(CpuidExtended, cpuid, false)                \
  X(CpuidClampToMax, cpuid, false)              \
  X(CpuidStore, cpuid, false)                   \
  X(HltEntry, hlt, false)                       \
  X(HltIrqsDisabled, hlt, false)                \
  X(HltPendingIrq, hlt, false)                  \
  X(HltBlock, hlt, false)                       \
  X(RdtscEntry, rdtsc, false)                   \
  X(RdtscSpurious, rdtsc, false)                \
  X(RdtscOffset, rdtsc, false)                  \
  X(RdtscNoOffset, rdtsc, false)                \
  X(RdtscScaled, rdtsc, false)                  \
  X(RdtscStore, rdtsc, false)                   \
  X(VmcallEntry, vmcall, false)                 \
  X(VmcallNotKernel, vmcall, false)             \
  X(VmcallOutOfRange, vmcall, false)            \
  X(VmcallUnimplemented, vmcall, false)         \
  X(VmcallMemoryOp, vmcall, false)              \
  X(VmcallMemoryMaxRam, vmcall, false)          \
  X(VmcallXenVersion, vmcall, false)            \
  X(VmcallXenVersionOther, vmcall, false)       \
  X(VmcallConsoleIo, vmcall, false)             \
  X(VmcallSchedYield, vmcall, false)            \
  X(VmcallSchedBlock, vmcall, false)            \
  X(VmcallSchedOther, vmcall, false)            \
  X(VmcallEvtchnSend, vmcall, false)            \
  X(VmcallEvtchnOther, vmcall, false)           \
  X(VmcallHvmOp, vmcall, false)                 \
  X(VmcallHvmSetParam, vmcall, false)           \
  X(VmcallHvmGetParam, vmcall, false)           \
  X(VmcallHvmBadIndex, vmcall, false)           \
  X(VmcallReturn, vmcall, false)                \
  X(CrEntry, cr_access, false)                  \
  X(CrPassthroughStub, cr_access, false)        \
  X(CrSourceRsp, cr_access, false)              \
  X(CrMovToCr0, cr_access, false)               \
  X(CrCr0Invalid, cr_access, false)             \
  X(CrCr0MaskHit, cr_access, false)             \
  X(CrCr0PassThrough, cr_access, false)         \
  X(CrCr0ModeChange, cr_access, false)          \
  X(CrMovFromCr0, cr_access, false)             \
  X(CrClts, cr_access, false)                   \
  X(CrLmsw, cr_access, false)                   \
  X(CrMovToCr3, cr_access, false)               \
  X(CrCr3OutOfRange, cr_access, false)          \
  X(CrCr3Flush, cr_access, false)               \
  X(CrMovFromCr3, cr_access, false)             \
  X(CrMovToCr4, cr_access, false)               \
  X(CrCr4Invalid, cr_access, false)             \
  X(CrCr4PagingChange, cr_access, false)        \
  X(CrMovFromCr4, cr_access, false)             \
  X(CrCr8, cr_access, false)                    \
  X(CrBadRegister, cr_access, false)            \
  X(CrModeSync, cr_access, false)               \
  X(IoEntry, io_instruction, false)             \
  X(IoString, io_instruction, false)            \
  X(IoBadSize, io_instruction, false)           \
  X(IoIn, io_instruction, false)                \
  X(IoOut, io_instruction, false)               \
  X(IoPic, io_instruction, false)               \
  X(IoPicMask, io_instruction, false)           \
  X(IoPit, io_instruction, false)               \
  X(IoPitProgram, io_instruction, false)        \
  X(IoKeyboard, io_instruction, false)          \
  X(IoCmosIndex, io_instruction, false)         \
  X(IoCmosData, io_instruction, false)          \
  X(IoSerial, io_instruction, false)            \
  X(IoSerialTx, io_instruction, false)          \
  X(IoPciAddress, io_instruction, false)        \
  X(IoPciData, io_instruction, false)           \
  X(IoGdtLoad, io_instruction, false)           \
  X(IoUnclaimedIn, io_instruction, false)       \
  X(IoUnclaimedOut, io_instruction, false)      \
  X(IoStoreResult, io_instruction, false)       \
  X(RdmsrEntry, rdmsr, false)                   \
  X(RdmsrTsc, rdmsr, false)                     \
  X(RdmsrApicBase, rdmsr, false)                \
  X(RdmsrMtrrCap, rdmsr, false)                 \
  X(RdmsrSysenter, rdmsr, false)                \
  X(RdmsrMiscEnable, rdmsr, false)              \
  X(RdmsrPat, rdmsr, false)                     \
  X(RdmsrEfer, rdmsr, false)                    \
  X(RdmsrMtrr, rdmsr, false)                    \
  X(RdmsrX2apic, rdmsr, false)                  \
  X(RdmsrX2apicDisabled, rdmsr, false)          \
  X(RdmsrUnknown, rdmsr, false)                 \
  X(RdmsrStore, rdmsr, false)                   \
  X(WrmsrEntry, wrmsr, false)                   \
  X(WrmsrApicBase, wrmsr, false)                \
  X(WrmsrX2apicEnable, wrmsr, false)            \
  X(WrmsrReadOnly, wrmsr, false)                \
  X(WrmsrSysenter, wrmsr, false)                \
  X(WrmsrMiscEnable, wrmsr, false)              \
  X(WrmsrPat, wrmsr, false)                     \
  X(WrmsrPatInvalid, wrmsr, false)              \
  X(WrmsrEfer, wrmsr, false)                    \
  X(WrmsrEferLongMode, wrmsr, false)            \
  X(WrmsrMtrr, wrmsr, false)                    \
  X(WrmsrX2apic, wrmsr, false)                  \
  X(WrmsrX2apicDisabled, wrmsr, false)          \
  X(WrmsrUnknown, wrmsr, false)                 \
  X(EptEntry, ept_violation, false)             \
  X(EptLinearValid, ept_violation, false)       \
  X(EptRam, ept_violation, false)               \
  X(EptRomWrite, ept_violation, false)          \
  X(EptLapic, ept_violation, false)             \
  X(EptLapicEoi, ept_violation, false)          \
  X(EptLapicTimer, ept_violation, false)        \
  X(EptLapicIcr, ept_violation, false)          \
  X(EptIoapic, ept_violation, false)            \
  X(EptHpet, ept_violation, false)              \
  X(EptMmioRead, ept_violation, false)          \
  X(EptMmioWrite, ept_violation, false)         \
  X(EptMmioFetch, ept_violation, false)         \
  X(EptUnmapped, ept_violation, false)          \
  X(TimerEntry, preemption_timer, false)        \
  X(TimerSpurious, preemption_timer, false)     \
  X(TimerRearm, preemption_timer, false)        \
  X(VptTickAccounting, vpt, true)               \
  X(IrqRebalance, irq, true)

namespace iris {

enum class Block : std::uint16_t {
#define IRIS_BLOCK_ENUM(id, handler, async) k##id,
  IRIS_BLOCK_LIST(IRIS_BLOCK_ENUM)
#undef IRIS_BLOCK_ENUM
};

#define IRIS_BLOCK_COUNT(id, handler, async) +1
inline constexpr std::size_t kBlockCount = 0 IRIS_BLOCK_LIST(IRIS_BLOCK_COUNT);
#undef IRIS_BLOCK_COUNT

// Bytes of a serialized bitmap: bit i of byte i/8 is block i.
inline constexpr std::size_t kCoverageBytes = (kBlockCount + 7) / 8;

struct BlockInfo {
  Block id;
  std::string_view name;
  std::string_view handler;
  // Position of the block inside its handler, 0-based.
  std::uint16_t ordinal;
  bool async;
};

std::span<const BlockInfo> block_table();
const BlockInfo& block_info(Block b);
std::vector<Block> async_block_pool();

// "block_id,name,handler,ordinal,async".
std::string block_table_csv();

class CoverageBitmap {
 public:
  void hit(Block b) { bits_.set(static_cast<std::size_t>(b)); }
  bool covers(Block b) const { return bits_.test(static_cast<std::size_t>(b)); }
  void reset() { bits_.reset(); }
  std::size_t count() const { return bits_.count(); }
  bool empty() const { return bits_.none(); }

  CoverageBitmap& operator|=(const CoverageBitmap& o) {
    bits_ |= o.bits_;
    return *this;
  }
  // Blocks in this bitmap and not in `o`.
  CoverageBitmap minus(const CoverageBitmap& o) const {
    CoverageBitmap r;
    r.bits_ = bits_ & ~o.bits_;
    return r;
  }
  CoverageBitmap intersect(const CoverageBitmap& o) const {
    CoverageBitmap r;
    r.bits_ = bits_ & o.bits_;
    return r;
  }
  std::size_t symmetric_difference(const CoverageBitmap& o) const {
    return (bits_ ^ o.bits_).count();
  }
  std::vector<Block> blocks() const;

  void to_bytes(std::span<std::uint8_t, kCoverageBytes> out) const;
  static CoverageBitmap from_bytes(std::span<const std::uint8_t, kCoverageBytes> in);

  friend bool operator==(const CoverageBitmap&, const CoverageBitmap&) = default;

 private:
  std::bitset<kBlockCount> bits_;
};

}  // namespace iris

#endif  // IRIS_BLOCKS_H_
