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

#include "iris/blocks.h"

#include <algorithm>
#include <array>

#include <fmt/format.h>

namespace iris {
namespace {

struct RawBlock {
  Block id;
  std::string_view name;
  std::string_view handler;
  bool async;
};

constexpr RawBlock kRaw[] = {
#define IRIS_BLOCK_ROW(id, handler, async) {Block::k##id, #id, #handler, async},
    IRIS_BLOCK_LIST(IRIS_BLOCK_ROW)
#undef IRIS_BLOCK_ROW
};

constexpr std::array<BlockInfo, kBlockCount> build_table() {
  std::array<BlockInfo, kBlockCount> out{};
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    std::uint16_t ordinal = 0;
    for (std::size_t j = 0; j < i; ++j) {
      if (kRaw[j].handler == kRaw[i].handler) ++ordinal;
    }
    out[i] = BlockInfo{kRaw[i].id, kRaw[i].name, kRaw[i].handler, ordinal, kRaw[i].async};
  }
  return out;
}

constexpr auto kTable = build_table();

}  // namespace

std::span<const BlockInfo> block_table() { return kTable; }

const BlockInfo& block_info(Block b) { return kTable.at(static_cast<std::size_t>(b)); }

std::vector<Block> async_block_pool() {
  std::vector<Block> out;
  for (const auto& b : kTable) {
    if (b.async) out.push_back(b.id);
  }
  return out;
}

std::string block_table_csv() {
  std::string out = "block_id,name,handler,ordinal,async\n";
  for (std::size_t i = 0; i < kTable.size(); ++i) {
    const auto& b = kTable[i];
    out += fmt::format("{},{},{},{},{}\n", i, b.name, b.handler, b.ordinal,
                       b.async ? 1 : 0);
  }
  return out;
}

std::vector<Block> CoverageBitmap::blocks() const {
  std::vector<Block> out;
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    if (bits_.test(i)) out.push_back(static_cast<Block>(i));
  }
  return out;
}

void CoverageBitmap::to_bytes(std::span<std::uint8_t, kCoverageBytes> out) const {
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    if (bits_.test(i)) out[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  }
}

CoverageBitmap CoverageBitmap::from_bytes(
    std::span<const std::uint8_t, kCoverageBytes> in) {
  CoverageBitmap r;
  for (std::size_t i = 0; i < kBlockCount; ++i) {
    if (in[i / 8] & (1u << (i % 8))) r.bits_.set(i);
  }
  return r;
}

}  // namespace iris
