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

#include "iris/snapshot.h"

#include <algorithm>
#include <array>

#include <fmt/format.h>

#include "bytes.h"
#include "iris/trace.h"

namespace iris {
namespace {

using detail::ByteReader;
using detail::ByteWriter;

constexpr std::array<std::uint8_t, 4> kMagic = {'I', 'R', 'S', 'N'};

// Vmcs has no setter for the launch state; replay the architectural
// transitions that reach it.
void restore_launch_state(Vmcs& vmcs, LaunchState target) {
  if (target == LaunchState::kInactive) {
    // Only a never-loaded VMCS is inactive; rebuild one keeping the hooks.
    Vmcs blank;
    vmcs = blank;
    return;
  }
  vmcs.load();
  if (vmcs.launch_state() == LaunchState::kActiveCurrentLaunched) {
    const auto saved = std::vector<std::uint64_t>(vmcs.values().begin(), vmcs.values().end());
    vmcs.clear();
    std::copy(saved.begin(), saved.end(), vmcs.mutable_values().begin());
  }
  if (target == LaunchState::kActiveCurrentLaunched) vmcs.launch();
}

}  // namespace

std::vector<std::uint8_t> serialize_snapshot(const Vcpu& v) {
  std::vector<std::uint8_t> out;
  ByteWriter w(out);
  w.bytes(kMagic);
  w.u16(kSnapshotVersion);
  w.u64(field_table_hash());
  w.u16(static_cast<std::uint16_t>(kBlockCount));

  w.u8(static_cast<std::uint8_t>(v.vmcs.launch_state()));
  for (std::uint64_t x : v.vmcs.values()) w.u64(x);
  for (std::uint64_t x : v.gprs.values()) w.u64(x);

  const HypState& h = v.hyp;
  w.u8(static_cast<std::uint8_t>(h.vcpu_mode));
  w.u64(h.cr0_guest_host_mask);
  w.u64(h.cr0_read_shadow_cache);
  w.u8(h.halted ? 1 : 0);
  w.u64(h.tsc);
  w.u32(static_cast<std::uint32_t>(h.crash_log.size()));
  for (const auto& line : h.crash_log) w.str16(line);
  w.u8(h.pending_vector);
  for (std::uint64_t x : h.hvm_params) w.u64(x);

  w.u8(h.dev.pic_master_mask);
  w.u8(h.dev.pic_slave_mask);
  w.u16(h.dev.pit_reload);
  w.u8(h.dev.pit_mode);
  w.u8(h.dev.cmos_index);
  w.u32(h.dev.pci_address);
  w.u64(h.dev.serial_tx);
  w.u32(h.dev.pit_period);

  w.u64(h.msr.apic_base);
  w.u64(h.msr.pat);
  w.u64(h.msr.misc_enable);
  for (std::uint64_t x : h.msr.sysenter) w.u64(x);
  w.u64(h.msr.efer);
  for (std::uint64_t x : h.msr.mtrr) w.u64(x);
  w.u8(h.msr.x2apic ? 1 : 0);

  w.u32(h.lapic.tpr);
  w.u32(h.lapic.timer_initial);
  w.u64(h.lapic.icr);
  w.u32(h.lapic.eoi_count);

  std::array<std::uint8_t, kCoverageBytes> bitmap{};
  v.coverage.to_bytes(bitmap);
  w.bytes(bitmap);
  return out;
}

void deserialize_snapshot(std::span<const std::uint8_t> bytes, Vcpu& v) {
  ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw TraceError(TraceErrc::kBadMagic, "not a snapshot (bad magic)");
  }
  r.bytes(kMagic.size());
  const std::uint16_t version = r.u16();
  if (version != kSnapshotVersion) {
    throw TraceError(TraceErrc::kUnsupportedVersion,
                     fmt::format("unsupported snapshot version {}", version));
  }
  if (r.u64() != field_table_hash()) {
    throw TraceError(TraceErrc::kFieldTableMismatch, "snapshot field-table hash mismatch");
  }
  if (r.u16() != kBlockCount) {
    throw TraceError(TraceErrc::kMalformed, "snapshot coverage width mismatch");
  }

  const std::uint8_t state = r.u8();
  if (state > static_cast<std::uint8_t>(LaunchState::kActiveCurrentLaunched)) {
    throw TraceError(TraceErrc::kMalformed, "bad launch state");
  }
  std::array<std::uint64_t, kVmcsEncodingSpace> values{};
  for (auto& x : values) x = r.u64();
  GprFile gprs;
  for (std::size_t i = 0; i < kGprCount; ++i) gprs.at(i) = r.u64();

  HypState h;
  const std::uint8_t mode = r.u8();
  if (mode < 1 || mode > 7) throw TraceError(TraceErrc::kMalformed, "bad vCPU mode");
  h.vcpu_mode = static_cast<CpuMode>(mode);
  h.cr0_guest_host_mask = r.u64();
  h.cr0_read_shadow_cache = r.u64();
  h.halted = r.u8() != 0;
  h.tsc = r.u64();
  const std::uint32_t lines = r.u32();
  if (lines > r.remaining() / 2) throw TraceError(TraceErrc::kTruncatedStream, "crash log truncated");
  for (std::uint32_t i = 0; i < lines; ++i) h.crash_log.push_back(r.str16());
  h.pending_vector = r.u8();
  for (auto& x : h.hvm_params) x = r.u64();

  h.dev.pic_master_mask = r.u8();
  h.dev.pic_slave_mask = r.u8();
  h.dev.pit_reload = r.u16();
  h.dev.pit_mode = r.u8();
  h.dev.cmos_index = r.u8();
  h.dev.pci_address = r.u32();
  h.dev.serial_tx = r.u64();
  h.dev.pit_period = r.u32();

  h.msr.apic_base = r.u64();
  h.msr.pat = r.u64();
  h.msr.misc_enable = r.u64();
  for (auto& x : h.msr.sysenter) x = r.u64();
  h.msr.efer = r.u64();
  for (auto& x : h.msr.mtrr) x = r.u64();
  h.msr.x2apic = r.u8() != 0;

  h.lapic.tpr = r.u32();
  h.lapic.timer_initial = r.u32();
  h.lapic.icr = r.u64();
  h.lapic.eoi_count = r.u32();

  auto bitmap = r.bytes(kCoverageBytes);
  if (!r.at_end()) throw TraceError(TraceErrc::kMalformed, "trailing bytes after snapshot");

  restore_launch_state(v.vmcs, static_cast<LaunchState>(state));
  std::copy(values.begin(), values.end(), v.vmcs.mutable_values().begin());
  v.gprs = gprs;
  v.hyp = std::move(h);
  v.coverage = CoverageBitmap::from_bytes(std::span<const std::uint8_t, kCoverageBytes>(bitmap));
}

void save_snapshot(const std::filesystem::path& path, const Vcpu& vcpu) {
  write_file(path, serialize_snapshot(vcpu));
}

void load_snapshot(const std::filesystem::path& path, Vcpu& vcpu) {
  deserialize_snapshot(read_file(path), vcpu);
}

}  // namespace iris
