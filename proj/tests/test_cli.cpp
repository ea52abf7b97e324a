// Copyright 2026 The moperturb Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-level tests. Most run the CLI in-process; a few spawn the built
// binary to check real exit statuses.

#include <algorithm>
#include <cstdlib>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "cli.hpp"
#include "moperturb/moperturb.hpp"
#include "support.hpp"

namespace moperturb {
namespace {

namespace fs = std::filesystem;
using testing::ScratchDir;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<double> numbers_in(const std::string& text) {
  static const std::regex num(R"(-?\d+(\.\d+)?)");
  std::vector<double> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), num); it != std::sregex_iterator(); ++it)
    out.push_back(std::stod(it->str()));
  return out;
}

std::size_t count_files(const fs::path& dir, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().filename().string().rfind(prefix, 0) == 0) ++n;
  return n;
}

/// Every regular file under `a` exists under `b` with the same bytes,
/// manifests aside (they carry wall-clock durations).
void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == "run_manifest.json" || name.find(".manifest.json") != std::string::npos) continue;
    const fs::path rel = fs::relative(e.path(), a);
    ASSERT_TRUE(fs::exists(b / rel)) << rel;
    EXPECT_EQ(read_text(e.path()), read_text(b / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 0u);
}

class Cli : public ::testing::Test {
 protected:
  ScratchDir dir{"cli"};
  std::string data() const { return dir / "data"; }

  void make_data(std::size_t n = 6, std::size_t t_f = 10) {
    ASSERT_EQ(cli({"synth", "--n", std::to_string(n), "--t-h", "10", "--t-f", std::to_string(t_f),
                   "--seed", "7", "--out", data()})
                  .code,
              0);
  }
};

// ---------------------------------------------------------------- synth ----

TEST_F(Cli, SynthWritesFilesAndManifest) {
  const Outcome r = cli({"synth", "--n", "50", "--t-h", "10", "--t-f", "25", "--family", "oscillation",
                         "--seed", "7", "--out", data()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_files(data(), "seq_"), 50u);
  EXPECT_TRUE(fs::exists(fs::path(data()) / "dataset.json"));
  const auto m = read_json(fs::path(data()) / "run_manifest.json");
  EXPECT_EQ(m.at("command"), "synth");
  EXPECT_EQ(m.at("tool"), "moperturb");
  EXPECT_EQ(m.at("seed"), 7);
  EXPECT_EQ(m.at("config").at("n"), 50);
  EXPECT_TRUE(m.contains("version"));
  EXPECT_TRUE(m.contains("duration_seconds"));
  EXPECT_EQ(m.at("outputs").size(), 51u);
  EXPECT_EQ(read_dataset(data()).sequences.size(), 50u);
}

TEST_F(Cli, SynthUsageAndConfigErrors) {
  EXPECT_EQ(cli({"synth", "--n", "3"}).code, 2);
  EXPECT_EQ(cli({"synth", "--n", "3", "--t-h", "2", "--out", data()}).code, 2);
  EXPECT_EQ(cli({"synth", "--n", "3", "--family", "walk", "--out", data()}).code, 2);
  EXPECT_EQ(cli({"synth", "--n", "three", "--out", data()}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"dance"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"gradcheck", "--help"}).code, 0);
  const Outcome v = cli({"--version"});
  EXPECT_EQ(v.code, 0);
  EXPECT_NE((v.out + v.err).find(cli::kToolVersion), std::string::npos);
}

TEST_F(Cli, SynthIsDeterministic) {
  const std::vector<std::string> flags{"synth", "--n", "4", "--family", "mixture", "--noise", "0.001", "--seed", "3"};
  auto with_out = [&](const std::string& out) {
    auto f = flags;
    f.insert(f.end(), {"--out", out});
    return f;
  };
  ASSERT_EQ(cli(with_out(dir / "a")).code, 0);
  ASSERT_EQ(cli(with_out(dir / "b")).code, 0);
  expect_same_tree(dir / "a", dir / "b");
}

// ---------------------------------------------------------------- train ----

TEST_F(Cli, TrainWritesPredictorAndDecreasingLog) {
  make_data();
  const std::string pred = dir / "pred.json";
  const Outcome r = cli({"train", "--data", data(), "--out", pred, "--epochs", "40", "--hidden", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string log = read_text(pred + ".loss.csv");
  std::istringstream in(log);
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header, "epoch,mse");
  std::vector<double> mse;
  while (std::getline(in, line)) mse.push_back(std::stod(line.substr(line.find(',') + 1)));
  ASSERT_EQ(mse.size(), 41u);
  EXPECT_LT(mse.back(), mse.front());
  const auto p = predictor_from_json(read_json(pred));
  EXPECT_EQ(p->kind(), "mlp");
  EXPECT_EQ(p->history_length(), 10u);
  EXPECT_TRUE(fs::exists(pred + ".manifest.json"));
}

TEST_F(Cli, TrainErrorsAndDeterminism) {
  make_data();
  EXPECT_EQ(cli({"train", "--data", data(), "--out", dir / "p.json", "--hidden", "0"}).code, 2);
  EXPECT_EQ(cli({"train", "--data", dir / "missing", "--out", dir / "p.json"}).code, 3);
  const std::vector<std::string> base{"train", "--data", data(), "--epochs", "15", "--hidden", "8", "--seed", "5"};
  auto a = base, b = base;
  a.insert(a.end(), {"--out", dir / "a.json", "--log", dir / "a.csv"});
  b.insert(b.end(), {"--out", dir / "b.json", "--log", dir / "b.csv"});
  ASSERT_EQ(cli(a).code, 0);
  ASSERT_EQ(cli(b).code, 0);
  EXPECT_EQ(read_text(dir / "a.json"), read_text(dir / "b.json"));
  EXPECT_EQ(read_text(dir / "a.csv"), read_text(dir / "b.csv"));
}

// --------------------------------------------------------------- attack ----

TEST_F(Cli, AttackDefaultGridAndBounds) {
  make_data(4);
  const std::string res = dir / "res";
  const Outcome r = cli({"attack", "--data", data(), "--predictor", "linear", "--out", res});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto summary = read_json(fs::path(res) / "summary.json");
  ASSERT_EQ(summary.at("runs").size(), 5u);
  const std::vector<double> grid{0.01, 0.02, 0.03, 0.04, 0.05};
  const Dataset d = read_dataset(data());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const auto& run = summary["runs"][k];
    EXPECT_DOUBLE_EQ(run.at("epsilon").get<double>(), grid[k]);
    const fs::path sub = fs::path(res) / run.at("dir").get<std::string>();
    ASSERT_EQ(count_files(sub, "seq_"), 4u);
    for (std::size_t i = 0; i < 4; ++i) {
      const AttackResult a = attack_result_from_json(read_json(sub / sequence_file_name(i)));
      ASSERT_TRUE(a.scale.has_value());
      EXPECT_DOUBLE_EQ(a.bound, grid[k] * scale(d.sequences[i].history.frames()));
      EXPECT_LE((a.adversarial - d.sequences[i].history.frames()).max_abs(), a.bound + 1e-9);
      EXPECT_EQ(a.trace.size(), 50u);
    }
  }
  // Protocol defaults land in the manifest.
  const auto m = read_json(fs::path(res) / "run_manifest.json");
  const auto& cfg = m.at("config").at("config");
  EXPECT_EQ(cfg.at("step_factor"), 0.1);
  EXPECT_EQ(cfg.at("iterations"), 50);
  EXPECT_EQ(cfg.at("lambda"), 0.5);
  EXPECT_EQ(cfg.at("n_order"), 2);
  EXPECT_EQ(m.at("config").at("epsilons").size(), 5u);
}

TEST_F(Cli, AttackFrontOfZeroVelocityChangesNothing) {
  make_data(5);
  const std::string res = dir / "res";
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "zero_velocity", "--out", res, "--frames", "front",
                 "--constraints", "none"})
                .code,
            0);
  const auto s = read_json(fs::path(res) / "summary.json");
  for (const auto& run : s.at("runs")) {
    EXPECT_EQ(run.at("mean_mpjpe"), s.at("clean").at("mean_mpjpe"));
    EXPECT_EQ(run.at("mpjpe_per_frame"), s.at("clean").at("mpjpe_per_frame"));
  }
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "zero_velocity", "--out", dir / "last", "--frames",
                 "last", "--constraints", "none", "--epsilon", "0.05"})
                .code,
            0);
  const auto l = read_json(fs::path(dir / "last") / "summary.json");
  EXPECT_GT(l["runs"][0]["mean_mpjpe"].get<double>(), l["clean"]["mean_mpjpe"].get<double>());
}

TEST_F(Cli, AttackAbsoluteBound) {
  make_data(2);
  const std::string res = dir / "res";
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", res, "--absolute-bound", "3.0",
                 "--epsilon", "0.01"})
                .code,
            0);
  const auto j = read_json(fs::path(res) / "eps_0.01" / sequence_file_name(0));
  EXPECT_TRUE(j.at("scale").is_null());
  EXPECT_EQ(j.at("bound"), 3.0);
  EXPECT_DOUBLE_EQ(j.at("step").get<double>(), 0.3);
}

TEST_F(Cli, AttackConfigFileAndOverrides) {
  make_data(3);
  const std::string cfg = dir / "attack.json";
  write_json_atomic(cfg, {{"epsilon", 0.02}, {"iterations", 7}, {"frame_mask", {8, 9}}, {"seed", 11}});
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", dir / "a", "--config", cfg}).code, 0);
  const auto s = read_json(fs::path(dir / "a") / "summary.json");
  ASSERT_EQ(s.at("runs").size(), 1u);
  EXPECT_EQ(s.at("frames"), "custom");
  const AttackResult r = attack_result_from_json(read_json(fs::path(dir / "a") / "eps_0.02" / sequence_file_name(0)));
  EXPECT_EQ(r.trace.size(), 7u);
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t j = 0; j < 5; ++j)
      for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(r.perturbation(t, j, a), 0.0);
  // A flag beats the file.
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", dir / "b", "--config", cfg,
                 "--iterations", "3", "--frames", "all"})
                .code,
            0);
  const AttackResult b = attack_result_from_json(read_json(fs::path(dir / "b") / "eps_0.02" / sequence_file_name(0)));
  EXPECT_EQ(b.trace.size(), 3u);
  EXPECT_NE(b.perturbation(0, 0, 0), 0.0);
}

TEST_F(Cli, AttackErrors) {
  make_data(2);
  const std::string res = dir / "res";
  EXPECT_EQ(cli({"attack", "--data", dir / "nope", "--predictor", "linear", "--out", res}).code, 3);
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", dir / "nope.json", "--out", res}).code, 3);
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", res, "--constraints", "soft"}).code, 2);
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", res, "--frames", "tail"}).code, 2);
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", res, "--frames", "custom"}).code, 2);
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", res, "--epsilon", "-0.1"}).code, 2);
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", res, "--iterations", "0"}).code, 2);
  const std::string bad = dir / "bad.json";
  write_text_atomic(bad, "{\"iterations\": ");
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", res, "--config", bad}).code, 2);
  // A predictor for another horizon.
  write_json_atomic(dir / "zv.json", predictor_to_json(ZeroVelocityPredictor(10, 4, 5)));
  const Outcome shape = cli({"attack", "--data", data(), "--predictor", dir / "zv.json", "--out", res});
  EXPECT_EQ(shape.code, 2);
  EXPECT_NE(shape.err.find("shape"), std::string::npos) << shape.err;
}

TEST_F(Cli, ThreadCapDoesNotChangeResults) {
  make_data(6);
  ::setenv("MOPERTURB_THREADS", "1", 1);
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", dir / "seq", "--epsilon", "0.03"}).code, 0);
  ::setenv("MOPERTURB_THREADS", "8", 1);
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", dir / "par", "--epsilon", "0.03"}).code, 0);
  ::setenv("MOPERTURB_THREADS", "lots", 1);
  EXPECT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", dir / "x", "--epsilon", "0.03"}).code, 2);
  ::unsetenv("MOPERTURB_THREADS");
  expect_same_tree(dir / "seq", dir / "par");
}

// --------------------------------------------------------------- report ----

TEST_F(Cli, ReportRobustnessTableAndFormats) {
  make_data(4);
  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "linear", "--out", dir / "res"}).code, 0);
  const Outcome md = cli({"report", "--results", dir / "res"});
  ASSERT_EQ(md.code, 0) << md.err;
  const std::string robust = md.out.substr(0, md.out.find("\n\n###"));
  std::size_t rows = 0;
  for (const char* label : {"| clean |", "| eps=0.01 |", "| eps=0.02 |", "| eps=0.03 |", "| eps=0.04 |", "| eps=0.05 |"}) {
    EXPECT_NE(robust.find(label), std::string::npos) << label;
    ++rows;
  }
  // title, blank, header, rule, then rows; the last row's newline is cut
  EXPECT_EQ(std::count(robust.begin(), robust.end(), '\n'), 2 + 2 + 5);
  EXPECT_EQ(rows, 6u);
  EXPECT_NE(robust.find("%↑"), std::string::npos);

  const Outcome csv = cli({"report", "--results", dir / "res", "--format", "csv"});
  ASSERT_EQ(csv.code, 0);
  EXPECT_EQ(numbers_in(md.out), numbers_in(csv.out));
  EXPECT_NE(csv.out.find("\r\n"), std::string::npos);

  // Unit factor scales every length.
  const Outcome metres = cli({"report", "--results", dir / "res", "--unit-factor", "1"});
  EXPECT_NE(md.out, metres.out);
  EXPECT_EQ(cli({"report", "--results", dir / "res", "--format", "xml"}).code, 2);
  EXPECT_EQ(cli({"report", "--results", dir / "res", "--intervals", "2000"}).code, 2);
}

TEST_F(Cli, ReportOnEmptyDirectory) {
  fs::create_directories(dir / "empty");
  const Outcome r = cli({"report", "--results", dir / "empty"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("no results found"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"report", "--results", dir / "absent"}).code, 3);
}

TEST_F(Cli, ReportFrameVulnerabilityAndPhysicalChange) {
  make_data(4);
  for (const char* part : {"all", "front", "middle", "rear", "last"})
    ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "zero_velocity", "--out", dir / ("p_" + std::string(part)),
                   "--frames", part, "--constraints", "none", "--epsilon", "0.03"})
                  .code,
              0);
  for (const char* mode : {"temporal", "bone", "both"})
    ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", "zero_velocity", "--out", dir / ("m_" + std::string(mode)),
                   "--constraints", mode, "--epsilon", "0.03"})
                  .code,
              0);
  const Outcome r = cli({"report", "--results", dir.path().string(), "--out", dir / "report.md"});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = read_text(dir / "report.md");
  EXPECT_NE(text.find("Attacked history part"), std::string::npos);
  EXPECT_NE(text.find("Physical change by constraint"), std::string::npos);
  for (const char* row : {"| whole |", "| front |", "| middle |", "| rear |", "| last |", "| none |",
                          "| temporal_only |", "| bone_only |", "| both |"})
    EXPECT_NE(text.find(row), std::string::npos) << row;
  EXPECT_TRUE(fs::exists(dir / "report.md.manifest.json"));

  // An incomplete set of parts is an error that names what is missing.
  fs::remove_all(dir / "p_middle");
  fs::remove_all(dir / "p_rear");
  const Outcome missing = cli({"report", "--results", dir.path().string()});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("middle, rear"), std::string::npos) << missing.err;
}

// ------------------------------------------------------------ gradcheck ----

TEST_F(Cli, GradcheckPassesAndCatchesFaults) {
  const Outcome ok = cli({"gradcheck"});
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  for (const auto& term : gradcheck_terms()) EXPECT_NE(ok.out.find(term), std::string::npos);
  EXPECT_EQ(ok.out.find("FAIL"), std::string::npos);

  const Outcome bad = cli({"gradcheck", "--inject-fault", "total_mlp", "--instances", "3"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.err.find("total_mlp"), std::string::npos) << bad.err;
  EXPECT_EQ(cli({"gradcheck", "--inject-fault", "nonsense"}).code, 2);
  EXPECT_EQ(cli({"gradcheck", "--h", "0"}).code, 2);
}

TEST_F(Cli, GradcheckLargerStepRaisesError) {
  auto worst = [](const std::string& text, const std::string& term) {
    const std::regex re(term + R"(\s+instances=\d+ worst_rel_err=([0-9.e+-]+))");
    std::smatch m;
    EXPECT_TRUE(std::regex_search(text, m, re)) << text;
    return std::stod(m[1].str());
  };
  const Outcome fine = cli({"gradcheck", "--instances", "5", "--h", "1e-4"});
  const Outcome coarse = cli({"gradcheck", "--instances", "5", "--h", "1e-3"});
  EXPECT_EQ(fine.code, 0) << fine.out;
  for (const char* term : {"loss_pred", "loss_temp"}) EXPECT_GT(worst(coarse.out, term), worst(fine.out, term));
}

// --------------------------------------------------------------- replay ----

TEST_F(Cli, ReplayReproducesEveryCommand) {
  make_data(3);
  const fs::path d = data();
  ASSERT_EQ(cli({"replay", (d / "run_manifest.json").string(), "--out", dir / "data2"}).code, 0);
  expect_same_tree(d, dir / "data2");

  ASSERT_EQ(cli({"train", "--data", data(), "--out", dir / "p.json", "--epochs", "10", "--hidden", "8"}).code, 0);
  ASSERT_EQ(cli({"replay", dir / "p.json.manifest.json", "--out", dir / "p2.json"}).code, 0);
  EXPECT_EQ(read_text(dir / "p.json"), read_text(dir / "p2.json"));
  EXPECT_EQ(read_text(dir / "p.json.loss.csv"), read_text(dir / "p2.json.loss.csv"));

  ASSERT_EQ(cli({"attack", "--data", data(), "--predictor", dir / "p.json", "--out", dir / "r1", "--constraints",
                 "both", "--epsilon", "0.02", "--epsilon", "0.04", "--batch-scale"})
                .code,
            0);
  ASSERT_EQ(cli({"replay", dir / "r1/run_manifest.json", "--out", dir / "r2"}).code, 0);
  expect_same_tree(dir / "r1", dir / "r2");
  // Upstream manifests are embedded.
  const auto m = read_json(dir / "r1/run_manifest.json");
  EXPECT_FALSE(m.at("upstream").empty());

  ASSERT_EQ(cli({"report", "--results", dir / "r1", "--out", dir / "t1.md"}).code, 0);
  ASSERT_EQ(cli({"replay", dir / "t1.md.manifest.json", "--out", dir / "t2.md"}).code, 0);
  EXPECT_EQ(read_text(dir / "t1.md"), read_text(dir / "t2.md"));

  ASSERT_EQ(cli({"gradcheck", "--instances", "2", "--out", dir / "g1.txt"}).code, 0);
  ASSERT_EQ(cli({"replay", dir / "g1.txt.manifest.json", "--out", dir / "g2.txt"}).code, 0);
  EXPECT_EQ(read_text(dir / "g1.txt"), read_text(dir / "g2.txt"));

  EXPECT_EQ(cli({"replay", dir / "none.json"}).code, 3);
  write_json_atomic(dir / "odd.json", {{"command", "dance"}, {"config", nlohmann::json::object()}});
  EXPECT_EQ(cli({"replay", dir / "odd.json"}).code, 2);
}

// ------------------------------------------------------- real binary ----

int spawn(const std::string& args) {
  const std::string cmd = std::string(MOPERTURB_TOOL) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST_F(Cli, BinaryExitCodes) {
  EXPECT_EQ(spawn("--version"), 0);
  EXPECT_EQ(spawn("synth --n 2"), 2);
  EXPECT_EQ(spawn("report --results " + (dir / "nothing")), 3);
  EXPECT_EQ(spawn("synth --n 2 --out " + data()), 0);
  EXPECT_EQ(count_files(data(), "seq_"), 2u);
  EXPECT_EQ(spawn("gradcheck --instances 2 --inject-fault loss_pred"), 1);
}

}  // namespace
}  // namespace moperturb
