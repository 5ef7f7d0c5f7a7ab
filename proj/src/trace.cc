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

#include "iris/trace.h"

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "bytes.h"
#include "iris/guest.h"

namespace iris {
namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr std::array<std::uint8_t, 4> kTraceMagic = {'I', 'R', 'I', 'S'};
constexpr std::array<std::uint8_t, 4> kProgramMagic = {'I', 'R', 'P', 'G'};
constexpr std::uint16_t kProgramVersion = 1;

[[noreturn]] void malformed(const std::string& what) {
  throw TraceError(TraceErrc::kMalformed, what);
}

SeedEntry read_entry(ByteReader& r, EntryFlag expected) {
  SeedEntry e;
  const std::uint8_t flag = r.u8();
  if (flag != static_cast<std::uint8_t>(expected)) {
    malformed(fmt::format("entry flag {:#04x}, expected {:#04x}", flag,
                          static_cast<unsigned>(expected)));
  }
  e.flag = expected;
  e.encoding = r.u8();
  if (expected == EntryFlag::kGpr) {
    if (e.encoding >= kGprCount) malformed(fmt::format("GPR index {} out of range", e.encoding));
  } else if (find_field(e.encoding) == nullptr) {
    throw TraceError(TraceErrc::kFieldTableMismatch,
                     fmt::format("VMCS encoding {} is not in the field table", e.encoding));
  }
  e.value = r.u64();
  return e;
}

void check_magic(ByteReader& r, const std::array<std::uint8_t, 4>& magic) {
  if (r.remaining() < magic.size()) {
    throw TraceError(TraceErrc::kBadMagic, "stream shorter than the magic");
  }
  auto m = r.bytes(magic.size());
  if (!std::equal(m.begin(), m.end(), magic.begin())) {
    throw TraceError(TraceErrc::kBadMagic, "bad magic bytes");
  }
}

std::size_t checked_count(std::size_t n, const char* what) {
  if (n > 0xFF) malformed(fmt::format("{} count {} exceeds 255", what, n));
  return n;
}

}  // namespace

std::string_view trace_errc_name(TraceErrc code) {
  switch (code) {
    case TraceErrc::kBadMagic: return "BadMagic";
    case TraceErrc::kUnsupportedVersion: return "UnsupportedVersion";
    case TraceErrc::kFieldTableMismatch: return "FieldTableMismatch";
    case TraceErrc::kTruncatedStream: return "TruncatedStream";
    case TraceErrc::kMalformed: return "Malformed";
    case TraceErrc::kIo: return "Io";
  }
  return "?";
}

void write_entry(std::vector<std::uint8_t>& out, const SeedEntry& e) {
  ByteWriter w(out);
  w.u8(static_cast<std::uint8_t>(e.flag));
  w.u8(e.encoding);
  w.u64(e.value);
}

std::vector<std::uint8_t> seed_payload(const VmSeed& seed) {
  std::vector<std::uint8_t> out;
  out.reserve(kSeedEntryBytes * (seed.gpr_entries.size() + seed.read_entries.size()));
  for (const auto& e : seed.gpr_entries) write_entry(out, e);
  for (const auto& e : seed.read_entries) write_entry(out, e);
  return out;
}

std::vector<std::uint8_t> serialize_seed(const VmSeed& seed) {
  std::vector<std::uint8_t> out;
  ByteWriter(out).u16(seed.exit_reason);
  const auto payload = seed_payload(seed);
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<SeedEntry> gpr_entries_of(const GprFile& gprs) {
  std::vector<SeedEntry> out;
  out.reserve(kGprCount);
  for (std::size_t i = 0; i < kGprCount; ++i) {
    out.push_back({EntryFlag::kGpr, static_cast<std::uint8_t>(i), gprs.at(i)});
  }
  return out;
}

std::vector<std::uint8_t> serialize_trace(const TraceFile& trace) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.bytes(kTraceMagic);
  w.u16(kTraceVersion);
  w.str8(trace.header.workload);
  w.str8(trace.header.rng_algorithm);
  w.u64(trace.header.rng_seed);
  w.u64(trace.records.size());
  w.u64(trace.header.field_table_hash);
  w.u16(static_cast<std::uint16_t>(kBlockCount));
  w.u64(trace.header.record_cycles);
  std::array<std::uint8_t, kCoverageBytes> bitmap{};
  for (const auto& rec : trace.records) {
    if (rec.seed.gpr_entries.size() != kGprCount) {
      malformed(fmt::format("seed has {} GPR entries", rec.seed.gpr_entries.size()));
    }
    w.u16(rec.seed.exit_reason);
    w.u8(static_cast<std::uint8_t>(kGprCount));
    w.u8(static_cast<std::uint8_t>(checked_count(rec.seed.read_entries.size(), "read")));
    w.u8(static_cast<std::uint8_t>(checked_count(rec.metrics.write_entries.size(), "write")));
    w.u64(rec.metrics.cycles);
    rec.metrics.coverage.to_bytes(bitmap);
    w.bytes(bitmap);
    for (const auto& e : rec.seed.gpr_entries) write_entry(out, e);
    for (const auto& e : rec.seed.read_entries) write_entry(out, e);
    for (const auto& e : rec.metrics.write_entries) write_entry(out, e);
  }
  return out;
}

TraceFile deserialize_trace(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, kTraceMagic);
  const std::uint16_t version = r.u16();
  if (version != kTraceVersion) {
    throw TraceError(TraceErrc::kUnsupportedVersion,
                     fmt::format("unsupported trace version {}", version));
  }
  TraceFile t;
  t.header.workload = r.str8();
  t.header.rng_algorithm = r.str8();
  t.header.rng_seed = r.u64();
  t.header.exit_count = r.u64();
  t.header.field_table_hash = r.u64();
  if (t.header.field_table_hash != field_table_hash()) {
    throw TraceError(TraceErrc::kFieldTableMismatch,
                     fmt::format("trace field-table hash {:#018x} does not match {:#018x}",
                                 t.header.field_table_hash, field_table_hash()));
  }
  t.header.block_count = r.u16();
  if (t.header.block_count != kBlockCount) {
    malformed(fmt::format("trace has {} coverage blocks, this build has {}",
                          t.header.block_count, kBlockCount));
  }
  t.header.record_cycles = r.u64();
  // Every frame is at least its fixed part plus 15 GPR entries.
  constexpr std::size_t kMinFrame = 2 + 3 + 8 + kCoverageBytes + kGprCount * kSeedEntryBytes;
  if (t.header.exit_count > r.remaining() / kMinFrame) {
    throw TraceError(TraceErrc::kTruncatedStream,
                     fmt::format("header announces {} exits, stream too short",
                                 t.header.exit_count));
  }
  t.records.reserve(t.header.exit_count);
  for (std::uint64_t i = 0; i < t.header.exit_count; ++i) {
    TraceRecord rec;
    rec.seed.exit_reason = r.u16();
    const std::uint8_t gprs = r.u8();
    if (gprs != kGprCount) malformed(fmt::format("frame {} has {} GPR entries", i, gprs));
    const std::uint8_t reads = r.u8();
    const std::uint8_t writes = r.u8();
    rec.metrics.cycles = r.u64();
    auto bitmap = r.bytes(kCoverageBytes);
    if (kBlockCount % 8 != 0 && (bitmap.back() >> (kBlockCount % 8)) != 0) {
      malformed(fmt::format("frame {} sets coverage bits past the block table", i));
    }
    rec.metrics.coverage =
        CoverageBitmap::from_bytes(std::span<const std::uint8_t, kCoverageBytes>(bitmap));
    for (unsigned k = 0; k < gprs; ++k) {
      rec.seed.gpr_entries.push_back(read_entry(r, EntryFlag::kGpr));
      if (rec.seed.gpr_entries.back().encoding != k) {
        malformed(fmt::format("frame {} GPR entries out of order", i));
      }
    }
    for (unsigned k = 0; k < reads; ++k) rec.seed.read_entries.push_back(read_entry(r, EntryFlag::kVmcsRead));
    for (unsigned k = 0; k < writes; ++k) {
      rec.metrics.write_entries.push_back(read_entry(r, EntryFlag::kVmcsWrite));
    }
    t.records.push_back(std::move(rec));
  }
  if (!r.at_end()) malformed(fmt::format("{} trailing bytes after the last frame", r.remaining()));
  return t;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(TraceErrc::kIo, fmt::format("cannot open {}", path.string()));
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(TraceErrc::kIo, fmt::format("cannot create {}", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw TraceError(TraceErrc::kIo, fmt::format("write to {} failed", path.string()));
}

TraceFile load_trace(const std::filesystem::path& path) {
  return deserialize_trace(read_file(path));
}

void save_trace(const std::filesystem::path& path, const TraceFile& trace) {
  write_file(path, serialize_trace(trace));
}

std::vector<std::uint8_t> serialize_program(const GuestProgram& program) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.bytes(kProgramMagic);
  w.u16(kProgramVersion);
  w.u64(field_table_hash());
  w.u64(program.ops.size());
  for (const auto& op : program.ops) {
    if (const auto* c = std::get_if<ComputeOp>(&op)) {
      w.u8(0);
      w.u64(c->cycles);
    } else if (const auto* s = std::get_if<SensitiveOp>(&op)) {
      w.u8(1);
      w.u16(code_of(s->reason));
      w.u8(static_cast<std::uint8_t>(checked_count(s->gprs.size(), "gpr write")));
      for (const auto& g : s->gprs) {
        w.u8(static_cast<std::uint8_t>(g.reg));
        w.u64(g.value);
      }
      w.u8(static_cast<std::uint8_t>(checked_count(s->effects.size(), "effect")));
      for (const auto& e : s->effects) {
        w.u8(encoding_of(e.field));
        w.u64(e.value);
      }
    } else {
      w.u8(2);
    }
  }
  return out;
}

GuestProgram deserialize_program(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  check_magic(r, kProgramMagic);
  const std::uint16_t version = r.u16();
  if (version != kProgramVersion) {
    throw TraceError(TraceErrc::kUnsupportedVersion,
                     fmt::format("unsupported program version {}", version));
  }
  if (r.u64() != field_table_hash()) {
    throw TraceError(TraceErrc::kFieldTableMismatch, "program field-table hash mismatch");
  }
  const std::uint64_t n = r.u64();
  if (n > r.remaining()) throw TraceError(TraceErrc::kTruncatedStream, "op count exceeds stream");
  GuestProgram p;
  p.ops.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    switch (r.u8()) {
      case 0:
        p.ops.emplace_back(ComputeOp{r.u64()});
        break;
      case 1: {
        SensitiveOp s;
        s.reason = static_cast<ExitReason>(r.u16());
        const unsigned gprs = r.u8();
        for (unsigned k = 0; k < gprs; ++k) {
          const std::uint8_t reg = r.u8();
          if (reg >= kGprCount) malformed(fmt::format("op {} writes GPR {}", i, reg));
          s.gprs.push_back({static_cast<GprId>(reg), r.u64()});
        }
        const unsigned effects = r.u8();
        for (unsigned k = 0; k < effects; ++k) {
          const std::uint8_t enc = r.u8();
          if (!find_field(enc)) {
            throw TraceError(TraceErrc::kFieldTableMismatch,
                             fmt::format("op {} references unassigned encoding {}", i, enc));
          }
          s.effects.push_back({static_cast<Field>(enc), r.u64()});
        }
        p.ops.emplace_back(std::move(s));
        break;
      }
      case 2:
        p.ops.emplace_back(HaltOp{});
        break;
      default:
        malformed(fmt::format("op {} has an unknown tag", i));
    }
  }
  if (!r.at_end()) malformed("trailing bytes after the last op");
  return p;
}

}  // namespace iris
