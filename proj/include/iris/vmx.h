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

// Software model of a VMX virtual-machine control structure (VMCS), the
// guest general-purpose register file, VM-exit reasons, CR0 operating-mode
// classification and the VM-entry guest-state checks.
//
// Fields are addressed by a 1-byte "compact encoding" in [0, 147). Only a
// subset of that space is assigned (see vmcs_field_table()); the rest is
// reserved and rejected by vmread/vmwrite.

#ifndef IRIS_VMX_H_
#define IRIS_VMX_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace iris {

inline constexpr std::size_t kVmcsEncodingSpace = 147;

enum class VmcsArea : std::uint8_t { kGuestState, kHostState, kControl, kExitInfo };
enum class FieldAccess : std::uint8_t { kReadWrite, kReadOnly };

// Compact encodings. The numbering is this project's own; it is published in
// data/vmcs_fields.csv and hashed into every trace header.
enum class Field : std::uint8_t {
  kGuestCr0 = 0,
  kGuestCr3 = 1,
  kGuestCr4 = 2,
  kGuestRip = 3,
  kGuestRsp = 4,
  kGuestRflags = 5,
  kGuestCsSelector = 6,
  kGuestCsBase = 7,
  kGuestDsSelector = 8,
  kGuestDsBase = 9,
  kGuestSsSelector = 10,
  kGuestSsBase = 11,
  kGuestGdtrBase = 12,
  kGuestGdtrLimit = 13,
  kGuestLdtrBase = 14,
  kGuestLdtrLimit = 15,
  kGuestInterruptibility = 16,
  kGuestActivityState = 17,
  kGuestPendingDbgExceptions = 18,
  kPinBasedControls = 19,
  kCpuBasedControls = 20,
  kSecondaryControls = 21,
  kExceptionBitmap = 22,
  kCr0GuestHostMask = 23,
  kCr4GuestHostMask = 24,
  kCr0ReadShadow = 25,
  kCr4ReadShadow = 26,
  kTscOffset = 27,
  kTscMultiplier = 28,
  kVmExitControls = 29,
  kVmEntryControls = 30,
  kVmEntryIntrInfo = 31,
  kPreemptionTimerValue = 32,
  kEptPointer = 33,
  kHostCr0 = 34,
  kHostCr3 = 35,
  kHostCr4 = 36,
  kHostRip = 37,
  kHostRsp = 38,
  kExitReason = 39,
  kExitQualification = 40,
  kGuestLinearAddress = 41,
  kGuestPhysicalAddress = 42,
  kVmExitIntrInfo = 43,
  kVmExitIntrErrorCode = 44,
  kVmExitInstructionLen = 45,
  kVmExitInstructionInfo = 46,
  kIdtVectoringInfo = 47,
  kVmInstructionError = 48,
};

struct VmcsFieldSpec {
  std::uint8_t compact_encoding;
  std::string_view name;
  VmcsArea area;
  FieldAccess access;
};

// Sorted by compact_encoding; entry i has encoding i.
std::span<const VmcsFieldSpec> vmcs_field_table();

// nullptr for encodings outside the table (reserved or >= 147).
const VmcsFieldSpec* find_field(unsigned encoding);
const VmcsFieldSpec& field_spec(Field field);
// Throws VmxError(kUnknownField).
Field field_from_encoding(unsigned encoding);

inline constexpr std::uint8_t encoding_of(Field f) {
  return static_cast<std::uint8_t>(f);
}
inline bool is_read_only(Field f) {
  return field_spec(f).access == FieldAccess::kReadOnly;
}

std::string_view area_name(VmcsArea area);
std::string_view access_name(FieldAccess access);

// --- General-purpose registers ---------------------------------------------

// RSP is not here: it lives in the VMCS guest-state area.
enum class GprId : std::uint8_t {
  kRax = 0, kRbx, kRcx, kRdx, kRsi, kRdi, kRbp,
  kR8, kR9, kR10, kR11, kR12, kR13, kR14, kR15,
};
inline constexpr std::size_t kGprCount = 15;

std::string_view gpr_name(GprId id);

class GprFile {
 public:
  std::uint64_t& operator[](GprId id) { return regs_[static_cast<std::size_t>(id)]; }
  std::uint64_t operator[](GprId id) const { return regs_[static_cast<std::size_t>(id)]; }
  std::uint64_t& at(std::size_t i) { return regs_.at(i); }
  std::uint64_t at(std::size_t i) const { return regs_.at(i); }

  std::span<const std::uint64_t, kGprCount> values() const { return regs_; }
  friend bool operator==(const GprFile&, const GprFile&) = default;

 private:
  std::array<std::uint64_t, kGprCount> regs_{};
};

// --- Exit reasons ----------------------------------------------------------

// Basic exit-reason codes. Any 16-bit value is representable; codes without a
// named enumerator are "Other(code)" and have no handler.
enum class ExitReason : std::uint16_t {
  kExternalInterrupt = 1,
  kTripleFault = 2,
  kInterruptWindow = 7,
  kCpuid = 10,
  kHlt = 12,
  kRdtsc = 16,
  kVmcall = 18,
  kCrAccess = 28,
  kIoInstruction = 30,
  kRdmsr = 31,
  kWrmsr = 32,
  kEptViolation = 48,
  kPreemptionTimer = 52,
};

struct ExitReasonSpec {
  ExitReason reason;
  std::string_view name;
};

std::span<const ExitReasonSpec> named_exit_reasons();
bool is_named(ExitReason reason);
// "CrAccess" etc.; "Other(63)" for unnamed codes.
std::string exit_reason_name(ExitReason reason);
// Accepts the names above plus the CLI spellings ("CR_ACCESS", "cr-access").
bool parse_exit_reason(std::string_view text, ExitReason& out);

inline constexpr std::uint16_t code_of(ExitReason r) {
  return static_cast<std::uint16_t>(r);
}

// --- CR0 -----------------------------------------------------------------

namespace cr0 {
inline constexpr std::uint64_t kPe = 1ull << 0;
inline constexpr std::uint64_t kMp = 1ull << 1;
inline constexpr std::uint64_t kEm = 1ull << 2;
inline constexpr std::uint64_t kTs = 1ull << 3;
inline constexpr std::uint64_t kEt = 1ull << 4;
inline constexpr std::uint64_t kNe = 1ull << 5;
inline constexpr std::uint64_t kWp = 1ull << 16;
inline constexpr std::uint64_t kAm = 1ull << 18;
inline constexpr std::uint64_t kNw = 1ull << 29;
inline constexpr std::uint64_t kCd = 1ull << 30;
inline constexpr std::uint64_t kPg = 1ull << 31;
inline constexpr std::uint64_t kDefined =
    kPe | kMp | kEm | kTs | kEt | kNe | kWp | kAm | kNw | kCd | kPg;
}  // namespace cr0

enum class CpuMode : std::uint8_t {
  kMode1 = 1, kMode2, kMode3, kMode4, kMode5, kMode6, kMode7,
};

// Total over all 64-bit inputs:
//   Mode1  PE=0                      real mode
//   Mode2  PE=1 PG=0                 protected mode
//   Mode3  PE=1 PG=1 AM=0            paging
//   Mode4  paging AM=1 TS=0, caching not confirmed (CD=1 or NW=1)
//   Mode5  paging AM=1 TS=1 CD=0
//   Mode6  paging AM=1 TS=0 CD=0 NW=0
//   Mode7  paging AM=1 TS=1 CD=1
CpuMode classify_cr0_mode(std::uint64_t cr0);
// 1-based ("Mode3" -> 3).
inline int mode_number(CpuMode m) { return static_cast<int>(m); }

// --- VMCS ----------------------------------------------------------------

enum class LaunchState : std::uint8_t {
  kInactive,
  kActiveCurrentClear,
  kActiveCurrentLaunched,
};

enum class VmxErrc {
  kUnknownField,
  kReadOnlyField,
  kBadLaunchState,
};

class VmxError : public std::runtime_error {
 public:
  VmxError(VmxErrc code, unsigned encoding, const std::string& what)
      : std::runtime_error(what), code_(code), encoding_(encoding) {}
  VmxErrc code() const { return code_; }
  unsigned encoding() const { return encoding_; }

 private:
  VmxErrc code_;
  unsigned encoding_;
};

// Observer of handler-visible VMCS accesses. on_read may substitute the value
// returned to the caller; hooks run in attach order, each seeing the previous
// hook's result.
class VmcsHook {
 public:
  virtual ~VmcsHook() = default;
  virtual std::uint64_t on_read(Field field, std::uint64_t value) = 0;
  virtual void on_write(Field field, std::uint64_t value) = 0;
};

class Vmcs {
 public:
  Vmcs() = default;
  // Copies carry field values and launch state only. Hooks belong to a live
  // instance: a copy starts with none, and assigning into a Vmcs keeps the
  // destination's hooks (restoring a snapshot into a hooked session).
  Vmcs(const Vmcs& other) : values_(other.values_), state_(other.state_) {}
  Vmcs& operator=(const Vmcs& other) {
    values_ = other.values_;
    state_ = other.state_;
    return *this;
  }

  // VMCLEAR: zero every field; Inactive or any active state -> ActiveCurrentClear.
  void clear();
  // VMPTRLD: Inactive -> ActiveCurrentClear; no-op when already current.
  void load();
  // VMLAUNCH: ActiveCurrentClear -> ActiveCurrentLaunched.
  void launch();
  LaunchState launch_state() const { return state_; }

  // Handler-visible accessors (VMREAD/VMWRITE); these run the hooks.
  std::uint64_t read(Field field) const;
  std::uint64_t read(unsigned encoding) const;
  void write(Field field, std::uint64_t value);
  void write(unsigned encoding, std::uint64_t value);

  // Processor-side accessors: no hooks, no access checks. Used for exit-info
  // population on VM exit, the VM-entry checks, and replay plumbing.
  std::uint64_t raw(Field field) const { return values_[encoding_of(field)]; }
  void set_raw(Field field, std::uint64_t value) { values_[encoding_of(field)] = value; }

  void attach_hook(VmcsHook* hook);
  void detach_hook(VmcsHook* hook);
  std::span<VmcsHook* const> hooks() const { return hooks_; }

  std::span<const std::uint64_t, kVmcsEncodingSpace> values() const { return values_; }
  std::span<std::uint64_t, kVmcsEncodingSpace> mutable_values() { return values_; }

  friend bool operator==(const Vmcs& a, const Vmcs& b) {
    return a.values_ == b.values_ && a.state_ == b.state_;
  }

 private:
  std::array<std::uint64_t, kVmcsEncodingSpace> values_{};
  LaunchState state_ = LaunchState::kInactive;
  std::vector<VmcsHook*> hooks_;
};

// --- VM-entry checks -------------------------------------------------------

enum class EntryViolation : std::uint8_t {
  kCr0PgWithoutPe,
  kBadRipForMode,
  kCr0ReservedBits,
  kCr0NwWithoutCd,
  kBadCsForMode,
  kGdtrLimitTooLarge,
};

std::string_view violation_name(EntryViolation v);

struct ViolationRecord {
  EntryViolation kind;
  std::string log;
};

struct CheckResult {
  std::vector<ViolationRecord> violations;

  bool ok() const { return violations.empty(); }
  // Empty when ok().
  std::string first_log() const {
    return violations.empty() ? std::string() : violations.front().log;
  }
};

// Evaluates, in order: (1) CR0.PG => CR0.PE; (2) RIP inside the mode's range
// (Mode1 < 2^20, otherwise < 2^32); (3) undefined CR0 bits clear; (4) not
// (NW=1 and CD=0); (5) CS selector consistent with the mode; (6) GDTR limit
// <= 0xFFFF. Throws VmxError(kBadLaunchState) on an inactive VMCS.
CheckResult vm_entry_check(const Vmcs& vmcs);

// --- Published constant tables ---------------------------------------------

// "compact_encoding,name,area,access" with an LF after every row.
std::string field_table_csv();
// "name,code".
std::string exit_reason_csv();
// 64-bit FNV-1a over field_table_csv().
std::uint64_t field_table_hash();
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

}  // namespace iris

#endif  // IRIS_VMX_H_
