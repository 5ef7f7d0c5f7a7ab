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


#ifndef IRIS_CAMPAIGN_H_
#define IRIS_CAMPAIGN_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "iris/fuzzer.h"

namespace iris {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CampaignSpec {
  std::string name;
  // Column label in reports; the trace header's workload when unset.
  std::string workload;
  std::filesystem::path trace;
  std::optional<std::filesystem::path> snapshot;
  SeedSelector selector;
  SeedArea area = SeedArea::kVmcs;
  std::size_t mutants = kDefaultMutants;
  std::uint64_t rng_seed = 0;
  unsigned workers = 1;
};

// INI layout: one section per campaign, plus an optional [defaults] section
// whose keys apply wherever a campaign leaves them out. Keys: trace,
// snapshot, workload, select, area, mutants, rng_seed, workers. An area
// list such as "vmcs,gpr" expands into one campaign per area. Relative
// paths resolve against `base_dir`.
std::vector<CampaignSpec> parse_campaign_config(std::istream& in,
                                                const std::filesystem::path& base_dir,
                                                std::uint64_t default_rng_seed = 0);
std::vector<CampaignSpec> load_campaign_config(const std::filesystem::path& path,
                                               std::uint64_t default_rng_seed = 0);

}  // namespace iris

#endif  // IRIS_CAMPAIGN_H_
