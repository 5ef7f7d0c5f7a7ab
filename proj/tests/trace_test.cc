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

#include <filesystem>

#include <gtest/gtest.h>

#include "iris/guest.h"
#include "test_util.h"

namespace iris {
namespace {

std::size_t header_size(const TraceHeader& h) {
  return 4 + 2 + 1 + h.workload.size() + 1 + h.rng_algorithm.size() + 8 + 8 + 8 + 2 + 8;
}

std::size_t hash_offset(const TraceHeader& h) {
  return 4 + 2 + 1 + h.workload.size() + 1 + h.rng_algorithm.size() + 16;
}

TraceFile small_trace() {
  Rng rng(77);
  TraceFile t;
  while (t.records.size() < 3) t = testing::random_trace(rng, 6);
  return t;
}

TEST(Trace, EmptyTraceRoundTrips) {
  TraceFile t;
  t.header.workload = "IDLE";
  t.header.rng_algorithm = "mt19937_64";
  t.header.field_table_hash = field_table_hash();
  const auto bytes = serialize_trace(t);
  EXPECT_EQ(bytes.size(), header_size(t.header));
  EXPECT_EQ(deserialize_trace(bytes), t);
}

TEST(Trace, MagicAndVersionLeadTheStream) {
  const auto bytes = serialize_trace(small_trace());
  ASSERT_GE(bytes.size(), 6u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "IRIS");
  EXPECT_EQ(bytes[4] | (bytes[5] << 8), kTraceVersion);
}

TraceErrc error_of(std::span<const std::uint8_t> bytes) {
  try {
    deserialize_trace(bytes);
  } catch (const TraceError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return TraceErrc::kIo;
}

TEST(Trace, CorruptionIsReportedByKind) {
  const TraceFile t = small_trace();
  const auto good = serialize_trace(t);

  auto bad = good;
  bad[0] ^= 0xFF;
  EXPECT_EQ(error_of(bad), TraceErrc::kBadMagic);

  bad = good;
  bad[4] = 0x7F;
  EXPECT_EQ(error_of(bad), TraceErrc::kUnsupportedVersion);

  bad = good;
  bad[hash_offset(t.header)] ^= 0x01;
  EXPECT_EQ(error_of(bad), TraceErrc::kFieldTableMismatch);
}

TEST(Trace, UnknownEncodingIsAFieldTableMismatch) {
  TraceFile t = small_trace();
  t.records[0].seed.read_entries.push_back({EntryFlag::kVmcsRead, 146, 1});
  EXPECT_EQ(error_of(serialize_trace(t)), TraceErrc::kFieldTableMismatch);
}

TEST(Trace, EveryTruncationFails) {
  const auto good = serialize_trace(small_trace());
  for (std::size_t n = 0; n < good.size(); ++n) {
    EXPECT_THROW(deserialize_trace(std::span(good).first(n)), TraceError) << n;
  }
}

TEST(Trace, TrailingBytesAreMalformed) {
  auto bytes = serialize_trace(small_trace());
  bytes.push_back(0);
  EXPECT_EQ(error_of(bytes), TraceErrc::kMalformed);
}

TEST(Seed, SizeLaw) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const VmSeed s = testing::random_seed(rng);
    const auto bytes = serialize_seed(s);
    EXPECT_EQ(bytes.size(), 2 + 10 * (15 + s.read_entries.size()));
    EXPECT_EQ(bytes.size(), serialized_seed_size(s));
    EXPECT_EQ(seed_payload(s).size() + 2, bytes.size());
    EXPECT_LE(seed_payload(s).size(), kMaxSeedPayloadBytes);
  }
}

TEST(Seed, EntryEncoding) {
  std::vector<std::uint8_t> out;
  write_entry(out, {EntryFlag::kVmcsRead, 0x2A, 0x0102030405060708ULL});
  EXPECT_EQ(out, (std::vector<std::uint8_t>{0x02, 0x2A, 8, 7, 6, 5, 4, 3, 2, 1}));
}

TEST(Seed, GprEntriesFollowRegisterOrder) {
  GprFile g;
  for (std::size_t i = 0; i < kGprCount; ++i) g.at(i) = 100 + i;
  const auto entries = gpr_entries_of(g);
  ASSERT_EQ(entries.size(), kGprCount);
  for (std::size_t i = 0; i < kGprCount; ++i) {
    EXPECT_EQ(entries[i], (SeedEntry{EntryFlag::kGpr, static_cast<std::uint8_t>(i), 100 + i}));
  }
}

TEST(TraceProperty, RandomTracesRoundTrip) {
  Rng rng(2026);
  for (int i = 0; i < 100; ++i) {
    const TraceFile t = testing::random_trace(rng);
    const auto bytes = serialize_trace(t);
    EXPECT_EQ(deserialize_trace(bytes), t);
    EXPECT_EQ(serialize_trace(deserialize_trace(bytes)), bytes);
  }
}

TEST(TraceFiles, SaveAndLoad) {
  const auto path = std::filesystem::temp_directory_path() / "iris_trace_test.iris";
  const TraceFile t = small_trace();
  save_trace(path, t);
  EXPECT_EQ(load_trace(path), t);
  std::filesystem::remove(path);
  try {
    load_trace(path);
    FAIL() << "missing file loaded";
  } catch (const TraceError& e) {
    EXPECT_EQ(e.code(), TraceErrc::kIo);
  }
}

TEST(Program, RoundTripsForEveryProfile) {
  for (Profile p : kAllProfiles) {
    const GuestProgram prog = generate_program(build_profile(p), 300, 9);
    const auto bytes = serialize_program(prog);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "IRPG");
    EXPECT_EQ(deserialize_program(bytes), prog);
  }
  GuestProgram halting;
  halting.ops = {ComputeOp{5}, HaltOp{}};
  EXPECT_EQ(deserialize_program(serialize_program(halting)), halting);
}

TEST(Program, RejectsTraceBytes) {
  EXPECT_THROW(deserialize_program(serialize_trace(small_trace())), TraceError);
}

}  // namespace
}  // namespace iris
