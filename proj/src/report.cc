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


#include "iris/report.h"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include <fmt/format.h>

namespace iris {

bool parse_report_format(std::string_view text, ReportFormat& out) {
  if (text == "text") out = ReportFormat::kText;
  else if (text == "csv") out = ReportFormat::kCsv;
  else if (text == "svg") out = ReportFormat::kSvg;
  else return false;
  return true;
}

std::map<std::uint16_t, std::size_t> reason_histogram(const TraceFile& trace) {
  std::map<std::uint16_t, std::size_t> h;
  for (const auto& r : trace.records) ++h[r.seed.exit_reason];
  return h;
}

namespace {

std::string reason_label(std::uint16_t code) {
  return exit_reason_name(static_cast<ExitReason>(code));
}

std::string mode_label(CpuMode m) { return fmt::format("Mode{}", mode_number(m)); }

}  // namespace

Json trace_summary_json(const TraceFile& trace) {
  Json j;
  j["kind"] = "trace-summary";
  j["workload"] = trace.header.workload;
  j["rng_algorithm"] = trace.header.rng_algorithm;
  j["rng_seed"] = trace.header.rng_seed;
  j["exits"] = trace.records.size();
  j["record_cycles"] = trace.header.record_cycles;
  Json hist = Json::array();
  for (const auto& [code, n] : reason_histogram(trace)) {
    hist.push_back({{"reason", reason_label(code)},
                    {"code", code},
                    {"count", n},
                    {"percent", trace.records.empty()
                                    ? 0.0
                                    : 100.0 * static_cast<double>(n) /
                                          static_cast<double>(trace.records.size())}});
  }
  j["histogram"] = std::move(hist);
  return j;
}

Json accuracy_json(const AccuracyReport& r) {
  Json j;
  j["exits"] = r.exits;
  j["coverage_fitting"] = r.coverage_fitting;
  j["vmwrite_fitting"] = r.vmwrite_fitting;
  j["recorded_unique_blocks"] = r.recorded_unique;
  j["replayed_unique_blocks"] = r.replayed_unique;
  j["vmwrite_matches"] = r.vmwrite_matches;
  j["nonzero_diffs"] = r.nonzero_diffs;
  j["noise_filtered"] = r.noise_filtered;
  j["noise_threshold"] = r.threshold;
  Json by_reason = Json::array();
  for (const auto& [code, d] : r.diffs_by_reason) {
    by_reason.push_back({{"reason", reason_label(code)},
                         {"exits", d.exits},
                         {"differing_exits", d.differing_exits},
                         {"total_blocks", d.total_blocks},
                         {"max_blocks", d.max_blocks}});
  }
  j["diffs_by_reason"] = std::move(by_reason);
  Json curve = Json::array();
  for (const auto& p : r.curve) {
    curve.push_back({p.exit_index, p.recorded_unique, p.replayed_unique});
  }
  j["curve"] = std::move(curve);
  return j;
}

Json throughput_json(const ThroughputReport& t) {
  return Json{{"status", replay_status_name(t.status)},
              {"exits_replayed", t.exits_replayed},
              {"virtual_cycles", t.virtual_cycles},
              {"cycles_per_second", kCyclesPerSecond},
              {"exits_per_second", t.exits_per_second},
              {"reference_exits_per_second", kReferenceIdealExitsPerSecond},
              {"speedup_vs_record", t.speedup_vs_record}};
}

Json mode_trajectory_json(const std::vector<CpuMode>& modes) {
  Json j = Json::array();
  for (CpuMode m : modes) j.push_back(mode_label(m));
  return j;
}

Json campaign_json(const CampaignResult& r, std::string_view workload, std::string_view selector) {
  Json j;
  j["workload"] = workload;
  j["trace"] = r.test_case.trace_id;
  j["reason"] = reason_label(r.exit_reason);
  j["area"] = seed_area_name(r.test_case.area);
  j["selector"] = selector;
  j["skipped"] = false;
  j["seed_index"] = r.test_case.seed_index;
  j["mutants"] = r.test_case.mutants;
  j["rng_seed"] = r.test_case.rng_seed;
  j["baseline_outcome"] = outcome_kind_name(r.baseline_outcome.kind);
  j["baseline_blocks"] = r.baseline_coverage.count();
  j["campaign_blocks"] = r.campaign_coverage.count();
  j["new_blocks"] = r.campaign_coverage.minus(r.baseline_coverage).count();
  j["coverage_delta_pct"] = coverage_delta(r).at(r.exit_reason);
  Json failures;
  for (FailureKind k : {FailureKind::kNone, FailureKind::kVmCrash, FailureKind::kHypCrash,
                        FailureKind::kAborted}) {
    const auto it = r.failures.find(k);
    failures[std::string(failure_kind_name(k))] = it == r.failures.end() ? 0 : it->second;
  }
  j["failures"] = std::move(failures);
  Json arts = Json::array();
  for (std::size_t i = 0; i < r.artifacts.size(); ++i) {
    const CrashArtifact& a = r.artifacts[i];
    arts.push_back({{"fragment_record", i},
                    {"mutant", a.mutant_index},
                    {"entry", a.mutation.entry_index},
                    {"bit", a.mutation.bit_index},
                    {"kind", failure_kind_name(a.kind)},
                    {"log", a.log}});
  }
  j["artifacts"] = std::move(arts);
  return j;
}

Json skipped_campaign_json(std::string_view workload, std::string_view trace_id, ExitReason reason,
                           SeedArea area, std::string_view selector) {
  return Json{{"workload", workload},       {"trace", trace_id},
              {"reason", exit_reason_name(reason)}, {"area", seed_area_name(area)},
              {"selector", selector},       {"skipped", true}};
}

namespace {

struct Section {
  std::string body;
  int height = 0;  // svg only
};

std::string svg_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

Section render_summary(const Json& d, ReportFormat f) {
  Section s;
  const auto& hist = d.at("histogram");
  const std::string workload = d.at("workload").get<std::string>();
  if (f == ReportFormat::kText) {
    s.body = fmt::format("Exit reasons for {} ({} exits)\n", workload, d.at("exits").get<std::size_t>());
    for (const auto& h : hist) {
      const double pct = h.at("percent").get<double>();
      s.body += fmt::format("  {:<20} {:>7} {:>6.2f}% {}\n", h.at("reason").get<std::string>(),
                            h.at("count").get<std::size_t>(), pct,
                            std::string(static_cast<std::size_t>(pct / 2.0), '#'));
    }
  } else if (f == ReportFormat::kCsv) {
    s.body = "workload,reason,count,percent\n";
    for (const auto& h : hist) {
      s.body += fmt::format("{},{},{},{:.4f}\n", workload, h.at("reason").get<std::string>(),
                            h.at("count").get<std::size_t>(), h.at("percent").get<double>());
    }
  } else {
    int y = 30;
    s.body = fmt::format("<text x=\"10\" y=\"20\">Exit reasons: {}</text>\n", svg_escape(workload));
    for (const auto& h : hist) {
      const double pct = h.at("percent").get<double>();
      s.body += fmt::format(
          "<text x=\"10\" y=\"{}\">{}</text><rect x=\"200\" y=\"{}\" width=\"{:.1f}\" "
          "height=\"14\" fill=\"steelblue\"/><text x=\"{:.1f}\" y=\"{}\">{:.2f}%</text>\n",
          y + 12, svg_escape(h.at("reason").get<std::string>()), y, pct * 4.0, 205 + pct * 4.0,
          y + 12, pct);
      y += 20;
    }
    s.height = y + 10;
  }
  return s;
}

Section render_replay(const Json& d, ReportFormat f) {
  Section s;
  const std::string trace = d.value("trace", std::string("?"));
  const bool has_acc = d.contains("accuracy");
  if (f == ReportFormat::kText) {
    s.body = fmt::format("Replay of {}: {} after {} exits\n", trace, d.at("status").get<std::string>(),
                         d.at("exits").get<std::size_t>());
    if (!d.value("log", std::string()).empty()) {
      s.body += fmt::format("  log: {}\n", d.at("log").get<std::string>());
    }
    if (has_acc) {
      const auto& a = d.at("accuracy");
      s.body += fmt::format("  coverage fitting {:.2f}%  vmwrite fitting {:.2f}%\n",
                            a.at("coverage_fitting").get<double>(),
                            a.at("vmwrite_fitting").get<double>());
      s.body += fmt::format("  nonzero diffs {}  within noise threshold ({}) {}\n",
                            a.at("nonzero_diffs").get<std::size_t>(),
                            a.at("noise_threshold").get<std::size_t>(),
                            a.at("noise_filtered").get<std::size_t>());
      s.body += "  coverage differences by exit reason\n";
      s.body += fmt::format("    {:<20} {:>7} {:>9} {:>12} {:>10}\n", "reason", "exits",
                            "differing", "total_blocks", "max_blocks");
      for (const auto& r : a.at("diffs_by_reason")) {
        s.body += fmt::format("    {:<20} {:>7} {:>9} {:>12} {:>10}\n",
                              r.at("reason").get<std::string>(), r.at("exits").get<std::size_t>(),
                              r.at("differing_exits").get<std::size_t>(),
                              r.at("total_blocks").get<std::size_t>(),
                              r.at("max_blocks").get<std::size_t>());
      }
    }
    for (const char* key : {"recorded_modes", "replayed_modes"}) {
      if (!d.contains(key)) continue;
      std::string line;
      for (const auto& m : d.at(key)) {
        if (!line.empty()) line += " -> ";
        line += m.get<std::string>();
      }
      s.body += fmt::format("  {}: {}\n", key, line);
    }
    if (d.contains("throughput")) {
      const auto& t = d.at("throughput");
      s.body += fmt::format("  {} virtual cycles, {:.0f} exits/s, speedup vs record {:.2f}x\n",
                            t.at("virtual_cycles").get<std::uint64_t>(),
                            t.at("exits_per_second").get<double>(),
                            t.at("speedup_vs_record").get<double>());
    }
  } else if (f == ReportFormat::kCsv) {
    s.body = "trace,reason,exits,differing_exits,total_blocks,max_blocks\n";
    if (has_acc) {
      for (const auto& r : d.at("accuracy").at("diffs_by_reason")) {
        s.body += fmt::format("{},{},{},{},{},{}\n", trace, r.at("reason").get<std::string>(),
                              r.at("exits").get<std::size_t>(),
                              r.at("differing_exits").get<std::size_t>(),
                              r.at("total_blocks").get<std::size_t>(),
                              r.at("max_blocks").get<std::size_t>());
      }
      s.body += "\ntrace,exit_index,recorded_unique,replayed_unique\n";
      for (const auto& p : d.at("accuracy").at("curve")) {
        s.body += fmt::format("{},{},{},{}\n", trace, p.at(0).get<std::size_t>(),
                              p.at(1).get<std::size_t>(), p.at(2).get<std::size_t>());
      }
    }
  } else {
    s.body = fmt::format("<text x=\"10\" y=\"20\">Unique blocks over exits: {}</text>\n",
                         svg_escape(trace));
    if (has_acc && !d.at("accuracy").at("curve").empty()) {
      const auto& curve = d.at("accuracy").at("curve");
      const double max_x = std::max(1.0, curve.back().at(0).get<double>());
      const double max_y = std::max(1.0, curve.back().at(1).get<double>());
      for (int series = 1; series <= 2; ++series) {
        std::string pts;
        for (const auto& p : curve) {
          pts += fmt::format("{:.1f},{:.1f} ", 40 + 500 * p.at(0).get<double>() / max_x,
                             230 - 190 * p.at(series).get<double>() / max_y);
        }
        s.body += fmt::format("<polyline fill=\"none\" stroke=\"{}\" {}points=\"{}\"/>\n",
                              series == 1 ? "black" : "orangered",
                              series == 2 ? "stroke-dasharray=\"4 3\" " : "", pts);
      }
      s.body += "<text x=\"40\" y=\"250\">recorded (solid) vs replayed (dashed)</text>\n";
    }
    s.height = 270;
  }
  return s;
}

Section render_fuzz(const Json& d, ReportFormat f) {
  std::vector<std::string> columns;
  std::vector<std::string> rows;
  std::map<std::pair<std::string, std::string>, const Json*> cells;
  for (const auto& c : d.at("campaigns")) {
    const std::string col =
        fmt::format("{}/{}", c.at("workload").get<std::string>(), c.at("area").get<std::string>());
    const std::string row = c.at("reason").get<std::string>();
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    cells[{row, col}] = &c;
  }
  auto cell_text = [&](const std::string& row, const std::string& col) -> std::string {
    const auto it = cells.find({row, col});
    if (it == cells.end() || it->second->at("skipped").get<bool>()) return "-";
    return fmt::format("+{:.1f}%", it->second->at("coverage_delta_pct").get<double>());
  };
  Section s;
  if (f == ReportFormat::kText) {
    s.body = "New coverage per exit reason (campaign vs unmutated seed)\n";
    s.body += fmt::format("  {:<20}", "reason");
    for (const auto& c : columns) s.body += fmt::format(" {:>16}", c);
    s.body += "\n";
    for (const auto& r : rows) {
      s.body += fmt::format("  {:<20}", r);
      for (const auto& c : columns) s.body += fmt::format(" {:>16}", cell_text(r, c));
      s.body += "\n";
    }
    std::size_t vm = 0, hyp = 0, total = 0;
    for (const auto& c : d.at("campaigns")) {
      if (c.at("skipped").get<bool>()) continue;
      vm += c.at("failures").at("VmCrash").get<std::size_t>();
      hyp += c.at("failures").at("HypCrash").get<std::size_t>();
      total += c.at("mutants").get<std::size_t>();
    }
    s.body += fmt::format("  mutants {}  VM crashes {}  hypervisor crashes {}\n", total, vm, hyp);
  } else if (f == ReportFormat::kCsv) {
    s.body = "workload,reason,area,skipped,coverage_delta_pct,mutants,vm_crash,hyp_crash,aborted\n";
    for (const auto& c : d.at("campaigns")) {
      const bool skipped = c.at("skipped").get<bool>();
      if (skipped) {
        s.body += fmt::format("{},{},{},1,,,,,\n", c.at("workload").get<std::string>(),
                              c.at("reason").get<std::string>(), c.at("area").get<std::string>());
        continue;
      }
      const auto& fl = c.at("failures");
      s.body += fmt::format("{},{},{},0,{:.4f},{},{},{},{}\n", c.at("workload").get<std::string>(),
                            c.at("reason").get<std::string>(), c.at("area").get<std::string>(),
                            c.at("coverage_delta_pct").get<double>(),
                            c.at("mutants").get<std::size_t>(), fl.at("VmCrash").get<std::size_t>(),
                            fl.at("HypCrash").get<std::size_t>(),
                            fl.at("Aborted").get<std::size_t>());
    }
  } else {
    s.body = "<text x=\"10\" y=\"20\">New coverage per exit reason</text>\n";
    for (std::size_t ci = 0; ci < columns.size(); ++ci) {
      s.body += fmt::format("<text x=\"{}\" y=\"40\">{}</text>\n", 180 + 130 * ci,
                            svg_escape(columns[ci]));
    }
    int y = 60;
    for (const auto& r : rows) {
      s.body += fmt::format("<text x=\"10\" y=\"{}\">{}</text>\n", y, svg_escape(r));
      for (std::size_t ci = 0; ci < columns.size(); ++ci) {
        s.body += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", 180 + 130 * ci, y,
                              cell_text(r, columns[ci]));
      }
      y += 20;
    }
    s.height = y + 10;
  }
  return s;
}

}  // namespace

std::string render_report(const std::vector<Json>& docs, ReportFormat format) {
  if (docs.empty()) throw std::invalid_argument("no report inputs");
  std::vector<Section> sections;
  for (const Json& d : docs) {
    const std::string kind = d.is_object() ? d.value("kind", std::string()) : std::string();
    try {
      if (kind == "trace-summary") sections.push_back(render_summary(d, format));
      else if (kind == "replay") sections.push_back(render_replay(d, format));
      else if (kind == "fuzz") sections.push_back(render_fuzz(d, format));
      else throw std::invalid_argument(fmt::format("unrecognised report document kind '{}'", kind));
    } catch (const Json::exception& e) {
      throw std::invalid_argument(fmt::format("malformed '{}' document: {}", kind, e.what()));
    }
  }
  std::string out;
  if (format != ReportFormat::kSvg) {
    for (std::size_t i = 0; i < sections.size(); ++i) {
      if (i) out += "\n";
      out += sections[i].body;
    }
    return out;
  }
  int total = 0;
  std::string groups;
  for (const auto& s : sections) {
    groups += fmt::format("<g transform=\"translate(0,{})\">\n{}</g>\n", total, s.body);
    total += s.height;
  }
  out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"720\" height=\"{}\" "
      "font-family=\"monospace\" font-size=\"12\">\n{}</svg>\n",
      total, groups);
  return out;
}

}  // namespace iris
