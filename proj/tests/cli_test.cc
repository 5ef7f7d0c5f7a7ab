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


// End-to-end checks of the iris executable.

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "iris/blocks.h"
#include "iris/guest.h"
#include "iris/report.h"
#include "iris/trace.h"
#include "iris/vmx.h"

namespace iris {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string output;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           fmt_name(::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string fmt_name(const std::string& test) { return "iris_cli_" + test; }

  CliRun iris(const std::string& args) const {
    const std::string cmd = "IRIS_OUT_DIR='" + dir_.string() + "' '" IRIS_CLI_PATH "' " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    EXPECT_NE(pipe, nullptr);
    std::string out;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST_F(Cli, UnknownProfileIsAUsageError) {
  const CliRun r = iris("record BAD_NAME 10");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("BAD_NAME"), std::string::npos);
}

TEST_F(Cli, MissingSubcommandIsAUsageError) {
  EXPECT_EQ(iris("").code, 2);
  EXPECT_EQ(iris("launch").code, 2);
  EXPECT_EQ(iris("--help").code, 0);
}

TEST_F(Cli, RecordCpuBoundShowsRdtscShare) {
  const CliRun r = iris("--rng-seed 42 record CPU_BOUND 5000");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("Rdtsc"), std::string::npos) << r.output;
  const TraceFile t = load_trace(path("cpu_bound.iris"));
  EXPECT_EQ(t.records.size(), 5000u);
  const auto hist = reason_histogram(t);
  const double share = static_cast<double>(hist.at(code_of(ExitReason::kRdtsc))) / 5000.0;
  EXPECT_NEAR(share, 0.80, 0.03);
}

TEST_F(Cli, ZeroExitsGivesHeaderOnlyTrace) {
  const CliRun r = iris("--quiet record IDLE 0 -o " + path("idle.iris"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(r.output.empty()) << r.output;
  const TraceFile t = load_trace(path("idle.iris"));
  EXPECT_TRUE(t.records.empty());
  EXPECT_EQ(t.header.workload, "IDLE");
}

TEST_F(Cli, BootRecordingReplaysWithFullFitting) {
  ASSERT_EQ(iris("--quiet record OS_BOOT 800 --snapshot-out " + path("s.irisnap")).code, 0);
  const CliRun r = iris("--json replay " + path("os_boot.iris") + " --with-metrics --report " +
                     path("rep.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  const Json doc = Json::parse(slurp(path("rep.json")));
  EXPECT_EQ(doc.at("status"), "completed");
  EXPECT_EQ(doc.at("exits"), 800);
  EXPECT_EQ(doc.at("accuracy").at("coverage_fitting"), 100.0);
  EXPECT_EQ(doc.at("accuracy").at("vmwrite_fitting"), 100.0);
  EXPECT_EQ(doc.at("recorded_modes"), doc.at("replayed_modes"));
  EXPECT_EQ(Json::parse(r.output), doc);
}

TEST_F(Cli, BootedTraceNeedsTheBootSnapshot) {
  ASSERT_EQ(iris("--quiet record OS_BOOT 300 --snapshot-out " + path("s.irisnap")).code, 0);
  ASSERT_EQ(iris("--quiet record CPU_BOUND 300 --from " + path("s.irisnap")).code, 0);
  const CliRun fresh = iris("replay " + path("cpu_bound.iris"));
  EXPECT_EQ(fresh.code, 4) << fresh.output;
  EXPECT_NE(fresh.output.find("bad RIP for mode 0"), std::string::npos) << fresh.output;

  ASSERT_EQ(iris("--quiet replay " + path("os_boot.iris") + " --snapshot-out " + path("s2.irisnap")).code, 0);
  const CliRun from = iris("replay " + path("cpu_bound.iris") + " --from " + path("s2.irisnap") +
                        " --with-metrics");
  EXPECT_EQ(from.code, 0) << from.output;
  EXPECT_NE(from.output.find("coverage fitting 100.00%"), std::string::npos) << from.output;
}

TEST_F(Cli, CorruptTraceIsAValidationError) {
  ASSERT_EQ(iris("--quiet record MEM_BOUND 20").code, 0);
  std::fstream f(path("mem_bound.iris"), std::ios::in | std::ios::out | std::ios::binary);
  f.put('X');
  f.close();
  const CliRun r = iris("replay " + path("mem_bound.iris"));
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("BadMagic"), std::string::npos) << r.output;
  EXPECT_EQ(iris("replay " + path("absent.iris")).code, 3);
}

TEST_F(Cli, ReportInputs) {
  EXPECT_EQ(iris("report").code, 2);
  ASSERT_EQ(iris("--quiet record IO_BOUND 100").code, 0);
  const CliRun csv = iris("report " + path("io_bound.iris") + " --format csv");
  ASSERT_EQ(csv.code, 0) << csv.output;
  EXPECT_EQ(csv.output.rfind("workload,reason,count,percent", 0), 0u) << csv.output;
  EXPECT_EQ(iris("report " + path("io_bound.iris") + " --format pdf").code, 2);
  std::ofstream(path("junk.json")) << "{not json";
  EXPECT_EQ(iris("report " + path("junk.json")).code, 3);
  std::ofstream(path("odd.json")) << R"({"kind":"other"})";
  EXPECT_EQ(iris("report " + path("odd.json")).code, 3);
  const CliRun svg = iris("report " + path("io_bound.iris") + " --format svg -o " + path("r.svg"));
  ASSERT_EQ(svg.code, 0) << svg.output;
  EXPECT_EQ(slurp(path("r.svg")).rfind("<svg", 0), 0u);
}

TEST_F(Cli, FuzzFindsVmCrashes) {
  ASSERT_EQ(iris("--quiet record OS_BOOT 300").code, 0);
  std::ofstream(path("campaign.ini")) << "[defaults]\ntrace = os_boot.iris\nmutants = 400\n"
                                         "[cr]\nselect = first-of-reason:CrAccess\narea = vmcs,gpr\n"
                                         "[vmcall]\nselect = first-of-reason:Vmcall\n";
  const CliRun r = iris("fuzz " + path("campaign.ini") + " -o " + path("out"));
  ASSERT_EQ(r.code, 0) << r.output;
  const Json doc = Json::parse(slurp(path("out/fuzz.json")));
  ASSERT_EQ(doc.at("campaigns").size(), 3u);
  const Json& cr = doc.at("campaigns")[0];
  EXPECT_GE(cr.at("failures").at("VmCrash").get<int>(), 1);
  EXPECT_TRUE(fs::exists(path("out/cr-vmcs.crashes.iris")));
  EXPECT_TRUE(fs::exists(path("out/cr-vmcs.s1.irisnap")));
  EXPECT_TRUE(doc.at("campaigns")[2].at("skipped").get<bool>());
  EXPECT_NE(r.output.find(" -"), std::string::npos) << r.output;

  std::ofstream(path("bad.ini")) << "[x]\ntrace = os_boot.iris\n";
  EXPECT_EQ(iris("fuzz " + path("bad.ini")).code, 3);
  std::ofstream(path("far.ini")) << "[x]\ntrace = os_boot.iris\nselect = index:999999\n";
  EXPECT_EQ(iris("fuzz " + path("far.ini")).code, 2);
}

TEST_F(Cli, GeneratedProgramDrivesRecording) {
  ASSERT_EQ(iris("--quiet --rng-seed 9 gen-workload MEM_BOUND 200").code, 0);
  ASSERT_EQ(iris("--quiet --rng-seed 9 record MEM_BOUND 200 -o " + path("a.iris")).code, 0);
  ASSERT_EQ(iris("--quiet record MEM_BOUND 200 --program " + path("mem_bound.irpg") + " -o " +
                 path("b.iris"))
                .code,
            0);
  EXPECT_EQ(load_trace(path("a.iris")).records, load_trace(path("b.iris")).records);
}

TEST_F(Cli, PublishedTablesMatchTheLibrary) {
  const fs::path data = fs::path(IRIS_SOURCE_DIR) / "data";
  EXPECT_EQ(slurp(data / "vmcs_fields.csv"), field_table_csv());
  EXPECT_EQ(slurp(data / "exit_reasons.csv"), exit_reason_csv());
  EXPECT_EQ(slurp(data / "blocks.csv"), block_table_csv());
  EXPECT_EQ(slurp(data / "profiles.csv"), profile_table_csv());
  ASSERT_EQ(iris("--quiet tables").code, 0);
  EXPECT_EQ(slurp(path("blocks.csv")), block_table_csv());
}

}  // namespace
}  // namespace iris
