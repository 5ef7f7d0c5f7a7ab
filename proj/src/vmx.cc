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

#include "iris/vmx.h"

#include <algorithm>
#include <cctype>

#include <fmt/format.h>

namespace iris {
namespace {

using enum VmcsArea;
using enum FieldAccess;

constexpr VmcsFieldSpec kFieldTable[] = {
    {0, "GUEST_CR0", kGuestState, kReadWrite},
    {1, "GUEST_CR3", kGuestState, kReadWrite},
    {2, "GUEST_CR4", kGuestState, kReadWrite},
    {3, "GUEST_RIP", kGuestState, kReadWrite},
    {4, "GUEST_RSP", kGuestState, kReadWrite},
    {5, "GUEST_RFLAGS", kGuestState, kReadWrite},
    {6, "GUEST_CS_SELECTOR", kGuestState, kReadWrite},
    {7, "GUEST_CS_BASE", kGuestState, kReadWrite},
    {8, "GUEST_DS_SELECTOR", kGuestState, kReadWrite},
    {9, "GUEST_DS_BASE", kGuestState, kReadWrite},
    {10, "GUEST_SS_SELECTOR", kGuestState, kReadWrite},
    {11, "GUEST_SS_BASE", kGuestState, kReadWrite},
    {12, "GUEST_GDTR_BASE", kGuestState, kReadWrite},
    {13, "GUEST_GDTR_LIMIT", kGuestState, kReadWrite},
    {14, "GUEST_LDTR_BASE", kGuestState, kReadWrite},
    {15, "GUEST_LDTR_LIMIT", kGuestState, kReadWrite},
    {16, "GUEST_INTERRUPTIBILITY_STATE", kGuestState, kReadWrite},
    {17, "GUEST_ACTIVITY_STATE", kGuestState, kReadWrite},
    {18, "GUEST_PENDING_DBG_EXCEPTIONS", kGuestState, kReadWrite},
    {19, "PIN_BASED_VM_EXEC_CONTROL", kControl, kReadWrite},
    {20, "CPU_BASED_VM_EXEC_CONTROL", kControl, kReadWrite},
    {21, "SECONDARY_VM_EXEC_CONTROL", kControl, kReadWrite},
    {22, "EXCEPTION_BITMAP", kControl, kReadWrite},
    {23, "CR0_GUEST_HOST_MASK", kControl, kReadWrite},
    {24, "CR4_GUEST_HOST_MASK", kControl, kReadWrite},
    {25, "CR0_READ_SHADOW", kControl, kReadWrite},
    {26, "CR4_READ_SHADOW", kControl, kReadWrite},
    {27, "TSC_OFFSET", kControl, kReadWrite},
    {28, "TSC_MULTIPLIER", kControl, kReadWrite},
    {29, "VM_EXIT_CONTROLS", kControl, kReadWrite},
    {30, "VM_ENTRY_CONTROLS", kControl, kReadWrite},
    {31, "VM_ENTRY_INTR_INFO", kControl, kReadWrite},
    {32, "VMX_PREEMPTION_TIMER_VALUE", kControl, kReadWrite},
    {33, "EPT_POINTER", kControl, kReadWrite},
    {34, "HOST_CR0", kHostState, kReadWrite},
    {35, "HOST_CR3", kHostState, kReadWrite},
    {36, "HOST_CR4", kHostState, kReadWrite},
    {37, "HOST_RIP", kHostState, kReadWrite},
    {38, "HOST_RSP", kHostState, kReadWrite},
    {39, "EXIT_REASON", kExitInfo, kReadOnly},
    {40, "EXIT_QUALIFICATION", kExitInfo, kReadOnly},
    {41, "GUEST_LINEAR_ADDRESS", kExitInfo, kReadOnly},
    {42, "GUEST_PHYSICAL_ADDRESS", kExitInfo, kReadOnly},
    {43, "VM_EXIT_INTR_INFO", kExitInfo, kReadOnly},
    {44, "VM_EXIT_INTR_ERROR_CODE", kExitInfo, kReadOnly},
    {45, "VM_EXIT_INSTRUCTION_LEN", kExitInfo, kReadOnly},
    {46, "VM_EXIT_INSTRUCTION_INFO", kExitInfo, kReadOnly},
    {47, "IDT_VECTORING_INFO", kExitInfo, kReadOnly},
    {48, "VM_INSTRUCTION_ERROR", kExitInfo, kReadOnly},
};

constexpr bool table_is_dense() {
  for (std::size_t i = 0; i < std::size(kFieldTable); ++i) {
    if (kFieldTable[i].compact_encoding != i) return false;
  }
  return true;
}
static_assert(table_is_dense());
static_assert(std::size(kFieldTable) <= kVmcsEncodingSpace);

constexpr ExitReasonSpec kExitReasons[] = {
    {ExitReason::kExternalInterrupt, "ExternalInterrupt"},
    {ExitReason::kTripleFault, "TripleFault"},
    {ExitReason::kInterruptWindow, "InterruptWindow"},
    {ExitReason::kCpuid, "Cpuid"},
    {ExitReason::kHlt, "Hlt"},
    {ExitReason::kRdtsc, "Rdtsc"},
    {ExitReason::kVmcall, "Vmcall"},
    {ExitReason::kCrAccess, "CrAccess"},
    {ExitReason::kIoInstruction, "IoInstruction"},
    {ExitReason::kRdmsr, "Rdmsr"},
    {ExitReason::kWrmsr, "Wrmsr"},
    {ExitReason::kEptViolation, "EptViolation"},
    {ExitReason::kPreemptionTimer, "PreemptionTimer"},
};

constexpr std::string_view kGprNames[kGprCount] = {
    "RAX", "RBX", "RCX", "RDX", "RSI", "RDI", "RBP", "R8",
    "R9",  "R10", "R11", "R12", "R13", "R14", "R15",
};

// Lowercase with '_' and '-' removed, so "CR_ACCESS" matches "CrAccess".
std::string fold(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '_' || c == '-') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

}  // namespace

std::span<const VmcsFieldSpec> vmcs_field_table() { return kFieldTable; }

const VmcsFieldSpec* find_field(unsigned encoding) {
  if (encoding >= std::size(kFieldTable)) return nullptr;
  return &kFieldTable[encoding];
}

const VmcsFieldSpec& field_spec(Field field) {
  return kFieldTable[encoding_of(field)];
}

Field field_from_encoding(unsigned encoding) {
  if (find_field(encoding) == nullptr) {
    throw VmxError(VmxErrc::kUnknownField, encoding,
                   fmt::format("unknown VMCS field encoding {}", encoding));
  }
  return static_cast<Field>(encoding);
}

std::string_view area_name(VmcsArea area) {
  switch (area) {
    case kGuestState: return "GuestState";
    case kHostState: return "HostState";
    case kControl: return "Control";
    case kExitInfo: return "ExitInfo";
  }
  return "?";
}

std::string_view access_name(FieldAccess access) {
  return access == kReadOnly ? "ReadOnly" : "ReadWrite";
}

std::string_view gpr_name(GprId id) {
  return kGprNames[static_cast<std::size_t>(id)];
}

std::span<const ExitReasonSpec> named_exit_reasons() { return kExitReasons; }

bool is_named(ExitReason reason) {
  return std::any_of(std::begin(kExitReasons), std::end(kExitReasons),
                     [&](const ExitReasonSpec& s) { return s.reason == reason; });
}

std::string exit_reason_name(ExitReason reason) {
  for (const auto& s : kExitReasons) {
    if (s.reason == reason) return std::string(s.name);
  }
  return fmt::format("Other({})", code_of(reason));
}

bool parse_exit_reason(std::string_view text, ExitReason& out) {
  const std::string key = fold(text);
  for (const auto& s : kExitReasons) {
    if (fold(s.name) == key) {
      out = s.reason;
      return true;
    }
  }
  // Short spellings used in reports.
  if (key == "extint") { out = ExitReason::kExternalInterrupt; return true; }
  if (key == "intwindow") { out = ExitReason::kInterruptWindow; return true; }
  if (key == "io" || key == "ioinst") { out = ExitReason::kIoInstruction; return true; }
  if (key == "ept") { out = ExitReason::kEptViolation; return true; }
  return false;
}

CpuMode classify_cr0_mode(std::uint64_t cr0) {
  using namespace cr0;
  if (!(cr0 & kPe)) return CpuMode::kMode1;
  if (!(cr0 & kPg)) return CpuMode::kMode2;
  if (!(cr0 & kAm)) return CpuMode::kMode3;
  const bool cd = cr0 & kCd;
  if (cr0 & kTs) return cd ? CpuMode::kMode7 : CpuMode::kMode5;
  if (!cd && !(cr0 & kNw)) return CpuMode::kMode6;
  return CpuMode::kMode4;
}

void Vmcs::clear() {
  values_.fill(0);
  state_ = LaunchState::kActiveCurrentClear;
}

void Vmcs::load() {
  if (state_ == LaunchState::kInactive) state_ = LaunchState::kActiveCurrentClear;
}

void Vmcs::launch() {
  if (state_ != LaunchState::kActiveCurrentClear) {
    throw VmxError(VmxErrc::kBadLaunchState, 0,
                   "VMLAUNCH requires an active, current and clear VMCS");
  }
  state_ = LaunchState::kActiveCurrentLaunched;
}

std::uint64_t Vmcs::read(Field field) const {
  std::uint64_t value = values_[encoding_of(field)];
  for (VmcsHook* hook : hooks_) value = hook->on_read(field, value);
  return value;
}

std::uint64_t Vmcs::read(unsigned encoding) const {
  return read(field_from_encoding(encoding));
}

void Vmcs::write(Field field, std::uint64_t value) {
  if (is_read_only(field)) {
    throw VmxError(VmxErrc::kReadOnlyField, encoding_of(field),
                   fmt::format("VMWRITE to read-only field {}", field_spec(field).name));
  }
  values_[encoding_of(field)] = value;
  for (VmcsHook* hook : hooks_) hook->on_write(field, value);
}

void Vmcs::write(unsigned encoding, std::uint64_t value) {
  write(field_from_encoding(encoding), value);
}

void Vmcs::attach_hook(VmcsHook* hook) {
  if (std::find(hooks_.begin(), hooks_.end(), hook) == hooks_.end()) {
    hooks_.push_back(hook);
  }
}

void Vmcs::detach_hook(VmcsHook* hook) {
  hooks_.erase(std::remove(hooks_.begin(), hooks_.end(), hook), hooks_.end());
}

std::string_view violation_name(EntryViolation v) {
  switch (v) {
    case EntryViolation::kCr0PgWithoutPe: return "Cr0PgWithoutPe";
    case EntryViolation::kBadRipForMode: return "BadRipForMode";
    case EntryViolation::kCr0ReservedBits: return "Cr0ReservedBits";
    case EntryViolation::kCr0NwWithoutCd: return "Cr0NwWithoutCd";
    case EntryViolation::kBadCsForMode: return "BadCsForMode";
    case EntryViolation::kGdtrLimitTooLarge: return "GdtrLimitTooLarge";
  }
  return "?";
}

CheckResult vm_entry_check(const Vmcs& vmcs) {
  if (vmcs.launch_state() == LaunchState::kInactive) {
    throw VmxError(VmxErrc::kBadLaunchState, 0, "VM entry on an inactive VMCS");
  }
  CheckResult result;
  auto fail = [&](EntryViolation kind, std::string log) {
    result.violations.push_back({kind, std::move(log)});
  };

  const std::uint64_t cr0 = vmcs.raw(Field::kGuestCr0);
  const std::uint64_t rip = vmcs.raw(Field::kGuestRip);
  const CpuMode mode = classify_cr0_mode(cr0);
  // Logged modes are 0-based, the way the hypervisor prints them.
  const int logged_mode = mode_number(mode) - 1;

  if ((cr0 & cr0::kPg) && !(cr0 & cr0::kPe)) {
    fail(EntryViolation::kCr0PgWithoutPe, "CR0.PG set without CR0.PE");
  }
  const std::uint64_t rip_limit = mode == CpuMode::kMode1 ? (1ull << 20) : (1ull << 32);
  if (rip >= rip_limit) {
    fail(EntryViolation::kBadRipForMode, fmt::format("bad RIP for mode {}", logged_mode));
  }
  if (cr0 & ~cr0::kDefined) {
    fail(EntryViolation::kCr0ReservedBits,
         fmt::format("reserved CR0 bits set: {:#x}", cr0 & ~cr0::kDefined));
  }
  if ((cr0 & cr0::kNw) && !(cr0 & cr0::kCd)) {
    fail(EntryViolation::kCr0NwWithoutCd, "CR0.NW set without CR0.CD");
  }
  const std::uint64_t cs = vmcs.raw(Field::kGuestCsSelector);
  const std::uint64_t gdtr_limit = vmcs.raw(Field::kGuestGdtrLimit);
  bool cs_ok;
  if (mode == CpuMode::kMode1) {
    // Real mode: selector << 4 plus offset must stay inside the first MiB.
    cs_ok = cs <= 0xFFFF && rip < (1ull << 20) && cs * 16 + rip < (1ull << 20);
  } else {
    cs_ok = cs <= 0xFFFF && (cs & 3) == 0 && (cs & 4) == 0 && (cs | 7) <= gdtr_limit;
  }
  if (!cs_ok) {
    fail(EntryViolation::kBadCsForMode,
         fmt::format("bad CS selector {:#x} for mode {}", cs, logged_mode));
  }
  if (gdtr_limit > 0xFFFF) {
    fail(EntryViolation::kGdtrLimitTooLarge,
         fmt::format("GDTR limit {:#x} exceeds 0xffff", gdtr_limit));
  }
  return result;
}

std::string field_table_csv() {
  std::string out = "compact_encoding,name,area,access\n";
  for (const auto& f : kFieldTable) {
    out += fmt::format("{},{},{},{}\n", f.compact_encoding, f.name, area_name(f.area),
                       access_name(f.access));
  }
  return out;
}

std::string exit_reason_csv() {
  std::string out = "name,code\n";
  for (const auto& r : kExitReasons) {
    out += fmt::format("{},{}\n", r.name, code_of(r.reason));
  }
  return out;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t field_table_hash() {
  static const std::uint64_t hash = [] {
    const std::string csv = field_table_csv();
    return fnv1a64({reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()});
  }();
  return hash;
}

}  // namespace iris
