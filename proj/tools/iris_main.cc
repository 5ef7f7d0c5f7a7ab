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


#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "iris/blocks.h"
#include "iris/campaign.h"
#include "iris/fuzzer.h"
#include "iris/guest.h"
#include "iris/recorder.h"
#include "iris/replayer.h"
#include "iris/report.h"
#include "iris/snapshot.h"
#include "iris/trace.h"

namespace fs = std::filesystem;
using namespace iris;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitVmCrash = 4;
constexpr int kExitHypCrash = 5;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t rng_seed = 1;
  bool quiet = false;
  bool json = false;
};

fs::path out_dir() {
  const char* env = std::getenv("IRIS_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path default_path(const std::string& given, const std::string& stem) {
  if (!given.empty()) return given;
  fs::create_directories(out_dir());
  return out_dir() / stem;
}

Profile require_profile(const std::string& name) {
  Profile p;
  if (!parse_profile(name, p)) {
    throw UsageError(fmt::format("unknown workload profile '{}' (expected OS_BOOT, CPU_BOUND, "
                                 "MEM_BOUND, IO_BOUND or IDLE)",
                                 name));
  }
  return p;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TraceError(TraceErrc::kIo, fmt::format("cannot write {}", path.string()));
  out << text;
}

int status_code(ReplayResult::Status s) {
  switch (s) {
    case ReplayResult::Status::kCompleted: return kExitOk;
    case ReplayResult::Status::kVmCrash: return kExitVmCrash;
    case ReplayResult::Status::kHypCrash: return kExitHypCrash;
    case ReplayResult::Status::kAborted: return kExitValidation;
  }
  return kExitValidation;
}

// ---- record ---------------------------------------------------------------

struct RecordArgs {
  std::string profile;
  std::size_t exits = 0;
  std::string out;
  std::string from;
  std::string snapshot_out;
  std::string program;
};

int cmd_record(const Globals& g, const RecordArgs& a) {
  const Profile p = require_profile(a.profile);
  Vcpu vcpu;
  if (!a.from.empty()) {
    load_snapshot(a.from, vcpu);
  } else if (p == Profile::kOsBoot) {
    construct_vcpu(vcpu);
  } else {
    boot_vcpu(vcpu);
  }
  const GuestProgram program = a.program.empty()
                                   ? generate_program(build_profile(p), a.exits, g.rng_seed)
                                   : deserialize_program(read_file(a.program));
  const RecordResult r =
      record_program(vcpu, program, std::string(profile_name(p)), g.rng_seed, a.exits);
  const fs::path out = default_path(a.out, lower(profile_name(p)) + ".iris");
  save_trace(out, r.trace);
  if (!a.snapshot_out.empty()) save_snapshot(a.snapshot_out, vcpu);

  Json doc = trace_summary_json(r.trace);
  doc["trace"] = out.string();
  doc["outcome"] = outcome_kind_name(r.run.last.kind);
  if (r.run.last.crashed()) doc["log"] = r.run.last.log;
  if (g.json) {
    std::cout << doc.dump(2) << "\n";
  } else if (!g.quiet) {
    std::cout << fmt::format("wrote {} ({} exits)\n", out.string(), r.trace.records.size());
    std::cout << render_report({doc}, ReportFormat::kText);
    if (r.run.last.crashed()) std::cout << "guest crashed: " << r.run.last.log << "\n";
  }
  if (r.run.last.kind == HandlerOutcome::Kind::kVmCrash) return kExitVmCrash;
  if (r.run.last.kind == HandlerOutcome::Kind::kHypCrash) return kExitHypCrash;
  return kExitOk;
}

// ---- replay ---------------------------------------------------------------

struct ReplayArgs {
  std::string trace;
  std::string from;
  bool with_metrics = false;
  std::string report;
  std::string snapshot_out;
  double noise = 0.0;
};

int cmd_replay(const Globals& g, const ReplayArgs& a) {
  if (a.noise < 0.0 || a.noise > 1.0) throw UsageError("--noise must be within [0, 1]");
  const TraceFile trace = load_trace(a.trace);
  std::unique_ptr<ReplaySession> session;
  if (a.from.empty()) {
    session = start_dummy_vm();
  } else {
    Vcpu snap;
    load_snapshot(a.from, snap);
    session = start_dummy_vm(&snap);
  }
  const CpuMode start_mode = classify_cr0_mode(session->vcpu().vmcs.raw(Field::kGuestCr0));
  ReplayOptions opt;
  opt.record_metrics = a.with_metrics;
  const ReplayResult r = replay_trace(*session, trace, opt);
  if (!a.snapshot_out.empty()) save_snapshot(a.snapshot_out, session->vcpu());

  Json doc;
  doc["kind"] = "replay";
  doc["trace"] = a.trace;
  doc["workload"] = trace.header.workload;
  doc["status"] = replay_status_name(r.status);
  doc["exits"] = r.exits;
  doc["log"] = r.log;
  if (a.with_metrics) {
    std::vector<TraceRecord> reference(trace.records.begin(),
                                       trace.records.begin() + static_cast<long>(r.recorded.size()));
    if (a.noise > 0.0) {
      const auto noisy = apply_noise(reference, a.noise, g.rng_seed);
      doc["noise"] = {{"probability", a.noise}, {"noisy_exits", noisy.size()}};
    }
    doc["accuracy"] = accuracy_json(compute_accuracy(reference, r.recorded));
    doc["recorded_modes"] =
        mode_trajectory_json(mode_trajectory(start_mode, cr0_write_modes(reference)));
    doc["replayed_modes"] =
        mode_trajectory_json(mode_trajectory(start_mode, cr0_write_modes(r.recorded)));
  }
  doc["throughput"] = throughput_json(throughput_of(r, trace));
  if (!a.report.empty()) write_text(a.report, doc.dump(2) + "\n");
  if (g.json) {
    std::cout << doc.dump(2) << "\n";
  } else if (!g.quiet) {
    std::cout << render_report({doc}, ReportFormat::kText);
  }
  return status_code(r.status);
}

// ---- fuzz -----------------------------------------------------------------

struct FuzzArgs {
  std::string config;
  std::string out;
  unsigned workers = 0;
};

int cmd_fuzz(const Globals& g, const FuzzArgs& a) {
  const std::vector<CampaignSpec> specs = load_campaign_config(a.config, g.rng_seed);
  const fs::path dir = a.out.empty() ? out_dir() : fs::path(a.out);
  fs::create_directories(dir);
  std::map<fs::path, TraceFile> traces;
  Json campaigns = Json::array();
  for (const CampaignSpec& spec : specs) {
    auto it = traces.find(spec.trace);
    if (it == traces.end()) it = traces.emplace(spec.trace, load_trace(spec.trace)).first;
    const TraceFile& trace = it->second;
    const std::string workload = spec.workload.empty() ? trace.header.workload : spec.workload;
    const std::string selector = spec.selector.to_string();
    const auto index = spec.selector.resolve(trace);
    if (!index) {
      if (spec.selector.kind == SeedSelector::Kind::kIndex) {
        throw UsageError(fmt::format("[{}] index {} outside a trace of {} exits", spec.name,
                                     spec.selector.index, trace.records.size()));
      }
      campaigns.push_back(skipped_campaign_json(workload, spec.trace.filename().string(),
                                                spec.selector.reason, spec.area, selector));
      continue;
    }
    std::optional<Vcpu> s0;
    if (spec.snapshot) {
      s0.emplace();
      load_snapshot(*spec.snapshot, *s0);
    }
    TestCase tc;
    tc.trace_id = spec.trace.filename().string();
    tc.seed_index = *index;
    tc.area = spec.area;
    tc.mutants = spec.mutants;
    tc.rng_seed = spec.rng_seed;
    tc.workers = a.workers ? a.workers : spec.workers;
    const CampaignResult result = run_test_case(trace, tc, s0 ? &*s0 : nullptr);
    Json j = campaign_json(result, workload, selector);
    if (!result.artifacts.empty()) {
      const std::string stem = fmt::format("{}-{}", spec.name, seed_area_name(spec.area));
      const fs::path fragment = dir / (stem + ".crashes.iris");
      const fs::path s1 = dir / (stem + ".s1.irisnap");
      save_trace(fragment, artifact_fragment(result));
      save_snapshot(s1, result.s1);
      j["artifact_fragment"] = fragment.string();
      j["artifact_snapshot"] = s1.string();
    }
    campaigns.push_back(std::move(j));
  }
  Json doc;
  doc["kind"] = "fuzz";
  doc["config"] = a.config;
  doc["campaigns"] = std::move(campaigns);
  write_text(dir / "fuzz.json", doc.dump(2) + "\n");
  if (g.json) {
    std::cout << doc.dump(2) << "\n";
  } else if (!g.quiet) {
    std::cout << render_report({doc}, ReportFormat::kText);
    std::cout << fmt::format("results in {}\n", (dir / "fuzz.json").string());
  }
  return kExitOk;
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string format = "text";
  std::string out;
};

int cmd_report(const Globals&, const ReportArgs& a) {
  ReportFormat fmt_kind;
  if (!parse_report_format(a.format, fmt_kind)) {
    throw UsageError(fmt::format("unknown report format '{}'", a.format));
  }
  if (a.inputs.empty()) throw UsageError("report needs at least one input");
  std::vector<Json> docs;
  for (const auto& in : a.inputs) {
    if (fs::path(in).extension() == ".iris") {
      Json d = trace_summary_json(load_trace(in));
      d["trace"] = in;
      docs.push_back(std::move(d));
      continue;
    }
    std::ifstream f(in);
    if (!f) throw TraceError(TraceErrc::kIo, fmt::format("cannot open {}", in));
    try {
      docs.push_back(Json::parse(f));
    } catch (const Json::parse_error& e) {
      throw TraceError(TraceErrc::kMalformed, fmt::format("{}: {}", in, e.what()));
    }
  }
  std::string text;
  try {
    text = render_report(docs, fmt_kind);
  } catch (const Json::exception& e) {
    throw TraceError(TraceErrc::kMalformed, fmt::format("report input: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw TraceError(TraceErrc::kMalformed, e.what());
  }
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text(a.out, text);
  }
  return kExitOk;
}

// ---- gen-workload and tables ---------------------------------------------

struct GenArgs {
  std::string profile;
  std::size_t exits = 0;
  std::string out;
};

int cmd_gen_workload(const Globals& g, const GenArgs& a) {
  const Profile p = require_profile(a.profile);
  const GuestProgram program = generate_program(build_profile(p), a.exits, g.rng_seed);
  const fs::path out = default_path(a.out, lower(profile_name(p)) + ".irpg");
  write_file(out, serialize_program(program));
  if (g.json) {
    std::cout << Json{{"program", out.string()},
                      {"workload", profile_name(p)},
                      {"ops", program.ops.size()},
                      {"exits", program.sensitive_count()},
                      {"rng_seed", g.rng_seed}}
                     .dump(2)
              << "\n";
  } else if (!g.quiet) {
    std::cout << fmt::format("wrote {} ({} ops, {} exits)\n", out.string(), program.ops.size(),
                             program.sensitive_count());
  }
  return kExitOk;
}

int cmd_tables(const Globals& g, const std::string& dir_arg) {
  const fs::path dir = dir_arg.empty() ? out_dir() : fs::path(dir_arg);
  const std::pair<const char*, std::string> tables[] = {
      {"vmcs_fields.csv", field_table_csv()},
      {"exit_reasons.csv", exit_reason_csv()},
      {"blocks.csv", block_table_csv()},
      {"profiles.csv", profile_table_csv()},
  };
  for (const auto& [name, text] : tables) {
    write_text(dir / name, text);
    if (!g.quiet) std::cout << (dir / name).string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"irisim: record, replay and fuzz simulated VM exits"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--rng-seed", g.rng_seed, "Seed for workload generation and noise")
      ->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Suppress normal output");
  app.add_flag("--json", g.json, "Print machine-readable JSON");

  RecordArgs rec;
  auto* record = app.add_subcommand("record", "Run a generated workload and record its VM exits");
  record->add_option("profile", rec.profile, "OS_BOOT, CPU_BOUND, MEM_BOUND, IO_BOUND or IDLE")
      ->required();
  record->add_option("exits", rec.exits, "Number of VM exits to record")->required();
  record->add_option("-o,--out", rec.out, "Trace path (default $IRIS_OUT_DIR/<profile>.iris)");
  record->add_option("--from", rec.from, "Start from this .irisnap snapshot");
  record->add_option("--snapshot-out", rec.snapshot_out, "Save the final state as .irisnap");
  record->add_option("--program", rec.program, "Run this .irpg program instead of generating one");

  ReplayArgs rep;
  auto* replay = app.add_subcommand("replay", "Replay a trace through the dummy VM");
  replay->add_option("trace", rep.trace, "Trace file")->required();
  replay->add_option("--from", rep.from, "Start from this .irisnap snapshot");
  replay->add_flag("--with-metrics", rep.with_metrics, "Record metrics while replaying");
  replay->add_option("--report", rep.report, "Write the JSON report here");
  replay->add_option("--snapshot-out", rep.snapshot_out, "Save the final state as .irisnap");
  replay->add_option("--noise", rep.noise, "Inject async-block noise with this probability");

  FuzzArgs fz;
  auto* fuzz = app.add_subcommand("fuzz", "Run the campaigns in a config file");
  fuzz->add_option("config", fz.config, "Campaign config (INI)")->required();
  fuzz->add_option("-o,--out", fz.out, "Output directory (default $IRIS_OUT_DIR)");
  fuzz->add_option("--workers", fz.workers, "Worker sessions per campaign (overrides config)");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Render JSON results or traces");
  report->add_option("inputs", rp.inputs, "JSON documents or .iris traces")->required();
  report->add_option("--format", rp.format, "text, csv or svg")->capture_default_str();
  report->add_option("-o,--out", rp.out, "Output file (default stdout)");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-workload", "Generate a guest program file");
  gen_cmd->add_option("profile", gen.profile, "Workload profile")->required();
  gen_cmd->add_option("exits", gen.exits, "Number of VM exits")->required();
  gen_cmd->add_option("-o,--out", gen.out, "Program path (default $IRIS_OUT_DIR/<profile>.irpg)");

  std::string tables_dir;
  auto* tables = app.add_subcommand("tables", "Write the constant tables as CSV");
  tables->add_option("-o,--out", tables_dir, "Directory (default $IRIS_OUT_DIR)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (record->parsed()) return cmd_record(g, rec);
    if (replay->parsed()) return cmd_replay(g, rep);
    if (fuzz->parsed()) return cmd_fuzz(g, fz);
    if (report->parsed()) return cmd_report(g, rp);
    if (gen_cmd->parsed()) return cmd_gen_workload(g, gen);
    if (tables->parsed()) return cmd_tables(g, tables_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TraceError& e) {
    std::cerr << "error: " << trace_errc_name(e.code()) << ": " << e.what() << "\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CorruptTrace& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
