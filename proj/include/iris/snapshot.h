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

// `.irisnap` session snapshots: magic "IRSN", version u16, field-table hash
// u64, block count u16, then the whole Vcpu (VMCS launch state and all 147
// slots, GPRs, HypState, coverage bitmap). Little-endian like traces.

#ifndef IRIS_SNAPSHOT_H_
#define IRIS_SNAPSHOT_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "iris/hypervisor.h"

namespace iris {

inline constexpr std::uint16_t kSnapshotVersion = 1;

std::vector<std::uint8_t> serialize_snapshot(const Vcpu& vcpu);
// Restores into `vcpu`, keeping the hooks attached to its VMCS. Throws
// TraceError on malformed input.
void deserialize_snapshot(std::span<const std::uint8_t> bytes, Vcpu& vcpu);

void save_snapshot(const std::filesystem::path& path, const Vcpu& vcpu);
void load_snapshot(const std::filesystem::path& path, Vcpu& vcpu);

}  // namespace iris

#endif  // IRIS_SNAPSHOT_H_
