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


#ifndef IRIS_TESTS_TEST_UTIL_H_
#define IRIS_TESTS_TEST_UTIL_H_

#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

#include "iris/blocks.h"
#include "iris/hypervisor.h"
#include "iris/recorder.h"
#include "iris/rng.h"
#include "iris/trace.h"
#include "iris/vmx.h"

namespace iris::testing {

inline Vcpu fresh_vcpu() {
  Vcpu v;
  construct_vcpu(v);
  return v;
}

inline Vcpu booted_vcpu() {
  Vcpu v;
  boot_vcpu(v);
  return v;
}

// Presents one VM exit to the handler the way the processor would.
inline ExitResult trigger(Vcpu& v, ExitReason reason,
                          std::initializer_list<std::pair<GprId, std::uint64_t>> gprs = {},
                          std::initializer_list<std::pair<Field, std::uint64_t>> effects = {},
                          const HypConfig& config = {}) {
  for (const auto& [g, value] : gprs) v.gprs[g] = value;
  raise_exit(v.vmcs, reason);
  for (const auto& [f, value] : effects) v.vmcs.set_raw(f, value);
  v.coverage.reset();
  return handle_exit(v, config);
}

// Exit qualification for a control-register access.
inline std::uint64_t cr_qual(unsigned cr, unsigned type, unsigned intel_reg) {
  return cr | (type << 4) | (intel_reg << 8);
}

struct EventLog final : VmcsHook {
  std::vector<std::pair<Field, std::uint64_t>> reads, writes;
  std::uint64_t on_read(Field f, std::uint64_t v) override {
    reads.emplace_back(f, v);
    return v;
  }
  void on_write(Field f, std::uint64_t v) override { writes.emplace_back(f, v); }
};

inline VmSeed random_seed(Rng& rng, std::size_t max_reads = kMaxSeedReads) {
  VmSeed s;
  const auto& names = named_exit_reasons();
  s.exit_reason = code_of(names[rng.below(names.size())].reason);
  GprFile g;
  for (std::size_t i = 0; i < kGprCount; ++i) g.at(i) = rng.next();
  s.gpr_entries = gpr_entries_of(g);
  const std::size_t reads = rng.below(max_reads + 1);
  for (std::size_t i = 0; i < reads; ++i) {
    const auto fields = vmcs_field_table();
    s.read_entries.push_back(
        {EntryFlag::kVmcsRead, fields[rng.below(fields.size())].compact_encoding, rng.next()});
  }
  return s;
}

inline TraceFile random_trace(Rng& rng, std::size_t max_records = 30) {
  TraceFile t;
  t.header.workload = "random";
  t.header.rng_algorithm = std::string(Rng::kAlgorithm);
  t.header.rng_seed = rng.next();
  t.header.field_table_hash = field_table_hash();
  t.header.record_cycles = rng.next();
  const std::size_t n = rng.below(max_records + 1);
  for (std::size_t i = 0; i < n; ++i) {
    TraceRecord r;
    r.seed = random_seed(rng);
    const std::size_t writes = rng.below(6);
    for (std::size_t k = 0; k < writes; ++k) {
      r.metrics.write_entries.push_back(
          {EntryFlag::kVmcsWrite, static_cast<std::uint8_t>(rng.below(39)), rng.next()});
    }
    for (std::size_t b = 0; b < kBlockCount; ++b) {
      if (rng.chance(0.1)) r.metrics.coverage.hit(static_cast<Block>(b));
    }
    r.metrics.cycles = rng.next();
    t.records.push_back(std::move(r));
  }
  t.header.exit_count = t.records.size();
  return t;
}

}  // namespace iris::testing

#endif  // IRIS_TESTS_TEST_UTIL_H_
