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


#ifndef IRIS_REPORT_H_
#define IRIS_REPORT_H_

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "iris/fuzzer.h"
#include "iris/replayer.h"
#include "iris/trace.h"

namespace iris {

using Json = nlohmann::ordered_json;

enum class ReportFormat : std::uint8_t { kText, kCsv, kSvg };
bool parse_report_format(std::string_view text, ReportFormat& out);

std::map<std::uint16_t, std::size_t> reason_histogram(const TraceFile& trace);

Json trace_summary_json(const TraceFile& trace);
Json accuracy_json(const AccuracyReport& report);
Json throughput_json(const ThroughputReport& report);
Json mode_trajectory_json(const std::vector<CpuMode>& modes);
Json campaign_json(const CampaignResult& result, std::string_view workload,
                   std::string_view selector);
// A campaign whose selector matched nothing in its trace.
Json skipped_campaign_json(std::string_view workload, std::string_view trace_id,
                           ExitReason reason, SeedArea area, std::string_view selector);

// Renders any JSON document produced above (dispatching on "kind").
// Throws std::invalid_argument for documents it does not understand.
std::string render_report(const std::vector<Json>& docs, ReportFormat format);

}  // namespace iris

#endif  // IRIS_REPORT_H_
