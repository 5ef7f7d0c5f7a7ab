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


#include "iris/campaign.h"

#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace iris {

namespace {

namespace pt = boost::property_tree;

const std::set<std::string> kKnownKeys = {"trace",  "snapshot", "workload", "select",
                                          "area",   "mutants",  "rng_seed", "workers"};

std::optional<std::string> lookup(const pt::ptree& section, const pt::ptree* defaults,
                                  const std::string& key) {
  if (auto v = section.get_optional<std::string>(key)) return *v;
  if (defaults) {
    if (auto v = defaults->get_optional<std::string>(key)) return *v;
  }
  return std::nullopt;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& section, const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used, 0);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<T>(v);
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("[{}] {}: '{}' is not a number", section, key, text));
  }
}

void check_keys(const std::string& name, const pt::ptree& section) {
  for (const auto& [key, value] : section) {
    if (!value.empty()) throw ConfigError(fmt::format("[{}] nested keys are not allowed", name));
    if (!kKnownKeys.contains(key)) {
      throw ConfigError(fmt::format("[{}] unknown key '{}'", name, key));
    }
  }
}

}  // namespace

std::vector<CampaignSpec> parse_campaign_config(std::istream& in,
                                                const std::filesystem::path& base_dir,
                                                std::uint64_t default_rng_seed) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("malformed campaign config: {}", e.message()));
  }
  const pt::ptree* defaults = nullptr;
  if (auto it = tree.find("defaults"); it != tree.not_found()) {
    check_keys("defaults", it->second);
    defaults = &it->second;
  }

  std::vector<CampaignSpec> out;
  for (const auto& [name, section] : tree) {
    if (name == "defaults") continue;
    if (section.empty() && !section.data().empty()) {
      throw ConfigError(fmt::format("top-level key '{}' outside a campaign section", name));
    }
    check_keys(name, section);
    CampaignSpec base;
    base.name = name;

    const auto trace = lookup(section, defaults, "trace");
    if (!trace) throw ConfigError(fmt::format("[{}] missing 'trace'", name));
    base.trace = base_dir / *trace;
    if (auto s = lookup(section, defaults, "snapshot"); s && !s->empty()) {
      base.snapshot = base_dir / *s;
    }
    base.workload = lookup(section, defaults, "workload").value_or("");

    const auto select = lookup(section, defaults, "select");
    if (!select) throw ConfigError(fmt::format("[{}] missing 'select'", name));
    try {
      base.selector = SeedSelector::parse(*select);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(fmt::format("[{}] {}", name, e.what()));
    }
    if (auto m = lookup(section, defaults, "mutants")) {
      base.mutants = parse_number<std::size_t>(name, "mutants", *m);
      if (base.mutants == 0) throw ConfigError(fmt::format("[{}] mutants must be >= 1", name));
    }
    base.rng_seed = default_rng_seed;
    if (auto r = lookup(section, defaults, "rng_seed")) {
      base.rng_seed = parse_number<std::uint64_t>(name, "rng_seed", *r);
    }
    if (auto w = lookup(section, defaults, "workers")) {
      base.workers = parse_number<unsigned>(name, "workers", *w);
      if (base.workers == 0) throw ConfigError(fmt::format("[{}] workers must be >= 1", name));
    }

    const std::string areas = lookup(section, defaults, "area").value_or("vmcs");
    std::stringstream list(areas);
    std::string item;
    bool any = false;
    while (std::getline(list, item, ',')) {
      CampaignSpec spec = base;
      if (!parse_seed_area(trim(item), spec.area)) {
        throw ConfigError(fmt::format("[{}] unknown area '{}'", name, trim(item)));
      }
      out.push_back(std::move(spec));
      any = true;
    }
    if (!any) throw ConfigError(fmt::format("[{}] empty 'area'", name));
  }
  if (out.empty()) throw ConfigError("campaign config defines no campaigns");
  return out;
}

std::vector<CampaignSpec> load_campaign_config(const std::filesystem::path& path,
                                               std::uint64_t default_rng_seed) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open campaign config {}", path.string()));
  return parse_campaign_config(in, path.parent_path(), default_rng_seed);
}

}  // namespace iris
