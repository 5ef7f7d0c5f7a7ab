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

// VM seeds, per-exit metrics and the `.iris` trace container.
//
// Layout (all integers little-endian):
//
//   header  "IRIS" | version u16 | workload str8 | rng algorithm str8 |
//           rng seed u64 | exit count u64 | field-table hash u64 |
//           block count u16 | record cycles u64
//   frame   reason u16 | gpr count u8 (=15) | read count u8 | write count u8 |
//           cycles u64 | coverage bitmap (ceil(block count / 8) bytes) |
//           entries: GPR, VMCS read, VMCS write (10 bytes each)
//   entry   flag u8 | encoding u8 | value u64
//
// str8 is a u8 length followed by that many bytes. Guest programs written by
// `gen-workload` use the same conventions under the magic "IRPG".

#ifndef IRIS_TRACE_H_
#define IRIS_TRACE_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "iris/blocks.h"
#include "iris/vmx.h"

namespace iris {

struct GuestProgram;

enum class TraceErrc {
  kBadMagic,
  kUnsupportedVersion,
  kFieldTableMismatch,
  kTruncatedStream,
  kMalformed,
  kIo,
};

std::string_view trace_errc_name(TraceErrc code);

class TraceError : public std::runtime_error {
 public:
  TraceError(TraceErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  TraceErrc code() const { return code_; }

 private:
  TraceErrc code_;
};

enum class EntryFlag : std::uint8_t { kGpr = 0x01, kVmcsRead = 0x02, kVmcsWrite = 0x03 };

struct SeedEntry {
  EntryFlag flag;
  std::uint8_t encoding;
  std::uint64_t value;
  friend bool operator==(const SeedEntry&, const SeedEntry&) = default;
};

inline constexpr std::size_t kSeedEntryBytes = 10;
inline constexpr std::size_t kMaxSeedReads = 32;
// 15 GPR entries plus the worst-case 32 VMREADs.
inline constexpr std::size_t kMaxSeedPayloadBytes = kSeedEntryBytes * (kGprCount + kMaxSeedReads);

struct VmSeed {
  std::uint16_t exit_reason = 0;
  std::vector<SeedEntry> gpr_entries;   // 15, in GprId order
  std::vector<SeedEntry> read_entries;  // VMREAD order, duplicates kept
  friend bool operator==(const VmSeed&, const VmSeed&) = default;
};

struct ExitMetrics {
  CoverageBitmap coverage;
  std::vector<SeedEntry> write_entries;  // VMWRITE order
  std::uint64_t cycles = 0;
  friend bool operator==(const ExitMetrics&, const ExitMetrics&) = default;
};

struct TraceRecord {
  VmSeed seed;
  ExitMetrics metrics;
  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

inline constexpr std::uint16_t kTraceVersion = 1;

struct TraceHeader {
  std::string workload;
  std::string rng_algorithm;
  std::uint64_t rng_seed = 0;
  std::uint64_t exit_count = 0;
  std::uint64_t field_table_hash = 0;
  std::uint16_t block_count = static_cast<std::uint16_t>(kBlockCount);
  // Total virtual cycles of the recording run (guest and hypervisor).
  std::uint64_t record_cycles = 0;
  friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

struct TraceFile {
  TraceHeader header;
  std::vector<TraceRecord> records;
  friend bool operator==(const TraceFile&, const TraceFile&) = default;
};

void write_entry(std::vector<std::uint8_t>& out, const SeedEntry& e);

// The seed's entries (GPRs then reads): 10 * (15 + reads) bytes.
std::vector<std::uint8_t> seed_payload(const VmSeed& seed);
// Exit reason (u16) followed by the payload.
std::vector<std::uint8_t> serialize_seed(const VmSeed& seed);
inline std::size_t serialized_seed_size(const VmSeed& seed) {
  return 2 + kSeedEntryBytes * (seed.gpr_entries.size() + seed.read_entries.size());
}

// Builds the 15 flag-0x01 entries for a register file.
std::vector<SeedEntry> gpr_entries_of(const GprFile& gprs);

std::vector<std::uint8_t> serialize_trace(const TraceFile& trace);
// Throws TraceError: kBadMagic, kUnsupportedVersion, kFieldTableMismatch,
// kTruncatedStream or kMalformed.
TraceFile deserialize_trace(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

TraceFile load_trace(const std::filesystem::path& path);
void save_trace(const std::filesystem::path& path, const TraceFile& trace);

std::vector<std::uint8_t> serialize_program(const GuestProgram& program);
GuestProgram deserialize_program(std::span<const std::uint8_t> bytes);

}  // namespace iris

#endif  // IRIS_TRACE_H_
