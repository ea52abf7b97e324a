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

#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moperturb/moperturb.hpp"

namespace moperturb::cli {
namespace {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Option snapshots. Each command's options round-trip through JSON so a
// manifest can replay the run.

struct SynthOptions {
  std::size_t n = 50;
  std::size_t t_h = 10;
  std::size_t t_f = 25;
  double fps = 25.0;
  std::string family = "oscillation";
  double amplitude = 0.1;
  double freq_min = 0.5;
  double freq_max = 2.0;
  double swing = 0.5;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct TrainOptions {
  std::string data;
  std::string out;
  std::string log;  // empty: <out>.loss.csv
  std::size_t hidden = 64;
  double lr = 0.2;
  std::size_t epochs = 1000;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

struct AttackOptions {
  std::string data;
  std::string predictor;
  std::string out;
  std::vector<double> epsilons;
  AttackConfig config;  // epsilon field is taken from `epsilons`
  std::string frames = "all";
  bool batch_scale = false;
};

struct ReportOptions {
  std::vector<std::string> results;
  std::vector<double> intervals;  // empty: defaults that fit the horizon
  std::string format = "md";
  std::string out;  // empty: standard output
  bool all_growth = false;
  double unit_factor = 1000.0;  // metres in, millimetres out
};

struct GradcheckCliOptions {
  GradCheckOptions check;
  std::string out;  // empty: no report file
};

json to_json(const SynthOptions& o) {
  return {{"n", o.n},          {"t_h", o.t_h},        {"t_f", o.t_f},
          {"fps", o.fps},      {"family", o.family},  {"amplitude", o.amplitude},
          {"freq_min", o.freq_min}, {"freq_max", o.freq_max}, {"swing", o.swing},
          {"noise", o.noise},  {"seed", o.seed},      {"out", o.out}};
}

json to_json(const TrainOptions& o) {
  return {{"data", o.data},     {"out", o.out},       {"log", o.log},
          {"hidden", o.hidden}, {"lr", o.lr},         {"epochs", o.epochs},
          {"batch", o.batch},   {"seed", o.seed}};
}

json to_json(const AttackOptions& o) {
  return {{"data", o.data},
          {"predictor", o.predictor},
          {"out", o.out},
          {"epsilons", o.epsilons},
          {"config", attack_config_to_json(o.config)},
          {"frames", o.frames},
          {"batch_scale", o.batch_scale}};
}

json to_json(const ReportOptions& o) {
  return {{"results", o.results},         {"intervals", o.intervals},
          {"format", o.format},           {"out", o.out},
          {"all_growth", o.all_growth},   {"unit_factor", o.unit_factor}};
}

json to_json(const GradcheckCliOptions& o) {
  return {{"instances", o.check.instances},
          {"h", o.check.h},
          {"tolerance", o.check.tolerance},
          {"seed", o.check.seed},
          {"inject_fault", o.check.inject_fault ? json(*o.check.inject_fault) : json(nullptr)},
          {"out", o.out}};
}

template <class T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

void from_json_opts(const json& j, SynthOptions& o) {
  take(j, "n", o.n);
  take(j, "t_h", o.t_h);
  take(j, "t_f", o.t_f);
  take(j, "fps", o.fps);
  take(j, "family", o.family);
  take(j, "amplitude", o.amplitude);
  take(j, "freq_min", o.freq_min);
  take(j, "freq_max", o.freq_max);
  take(j, "swing", o.swing);
  take(j, "noise", o.noise);
  take(j, "seed", o.seed);
  take(j, "out", o.out);
}

void from_json_opts(const json& j, TrainOptions& o) {
  take(j, "data", o.data);
  take(j, "out", o.out);
  take(j, "log", o.log);
  take(j, "hidden", o.hidden);
  take(j, "lr", o.lr);
  take(j, "epochs", o.epochs);
  take(j, "batch", o.batch);
  take(j, "seed", o.seed);
}

void from_json_opts(const json& j, AttackOptions& o) {
  take(j, "data", o.data);
  take(j, "predictor", o.predictor);
  take(j, "out", o.out);
  take(j, "epsilons", o.epsilons);
  if (j.contains("config")) o.config = attack_config_from_json(j.at("config"));
  take(j, "frames", o.frames);
  take(j, "batch_scale", o.batch_scale);
}

void from_json_opts(const json& j, ReportOptions& o) {
  take(j, "results", o.results);
  take(j, "intervals", o.intervals);
  take(j, "format", o.format);
  take(j, "out", o.out);
  take(j, "all_growth", o.all_growth);
  take(j, "unit_factor", o.unit_factor);
}

void from_json_opts(const json& j, GradcheckCliOptions& o) {
  take(j, "instances", o.check.instances);
  take(j, "h", o.check.h);
  take(j, "tolerance", o.check.tolerance);
  take(j, "seed", o.check.seed);
  if (j.contains("inject_fault") && !j.at("inject_fault").is_null())
    o.check.inject_fault = j.at("inject_fault").get<std::string>();
  take(j, "out", o.out);
}

// ---------------------------------------------------------------------------
// Manifests

struct RunRecord {
  std::vector<std::string> outputs;
  json upstream = json::object();
};

std::string manifest_path_for_file(const std::string& out) { return out + ".manifest.json"; }

void write_manifest(const fs::path& path, const std::string& command, const json& config,
                    std::uint64_t seed, const RunRecord& record, double seconds) {
  json m;
  m["tool"] = kToolName;
  m["version"] = kToolVersion;
  m["command"] = command;
  m["config"] = config;
  m["seed"] = seed;
  m["upstream"] = record.upstream;
  m["outputs"] = record.outputs;
  m["duration_seconds"] = seconds;
  write_json_atomic(path, m);
}

/// Snapshot of the run that produced an input, when one sits beside it.
std::optional<json> upstream_manifest(const fs::path& input) {
  std::error_code ec;
  fs::path candidate;
  if (fs::is_directory(input, ec)) {
    candidate = input / "run_manifest.json";
  } else {
    candidate = input;
    candidate += ".manifest.json";
    if (!fs::exists(candidate, ec)) candidate = input.parent_path() / "run_manifest.json";
  }
  if (!fs::exists(candidate, ec)) return std::nullopt;
  try {
    return read_json(candidate);
  } catch (const Error&) {
    return std::nullopt;
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string number_text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t thread_budget() {
  std::size_t n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MOPERTURB_THREADS")) {
    char* end = nullptr;
    const long long cap = std::strtoll(env, &end, 10);
    if (end == env || *end != '\0' || cap < 1)
      throw Error(Errc::config, "MOPERTURB_THREADS must be a positive integer");
    n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
  }
  return n;
}

// ---------------------------------------------------------------------------
// synth

int exec_synth(const SynthOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  SynthConfig cfg;
  cfg.n_sequences = o.n;
  cfg.t_h = o.t_h;
  cfg.t_f = o.t_f;
  cfg.fps = o.fps;
  cfg.family = parse_motion_family(o.family);
  cfg.amplitude = o.amplitude;
  cfg.freq_min_hz = o.freq_min;
  cfg.freq_max_hz = o.freq_max;
  cfg.swing = o.swing;
  cfg.noise_stddev = o.noise;
  cfg.seed = o.seed;
  if (cfg.n_sequences < 1) throw Error(Errc::config, "--n must be >= 1");
  const Dataset data = generate(cfg);
  const fs::path dir(o.out);
  write_dataset(dir, data);

  RunRecord rec;
  for (std::size_t i = 0; i < data.sequences.size(); ++i)
    rec.outputs.push_back((dir / sequence_file_name(i)).string());
  rec.outputs.push_back((dir / kDatasetManifest).string());
  write_manifest(dir / "run_manifest.json", "synth", to_json(o), o.seed, rec, seconds_since(start));
  out << "wrote " << data.sequences.size() << " sequences to " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// train

int exec_train(const TrainOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  if (o.hidden < 1) throw Error(Errc::config, "--hidden must be >= 1");
  const Dataset data = read_dataset(o.data);
  TrainConfig cfg;
  cfg.hidden = o.hidden;
  cfg.learning_rate = o.lr;
  cfg.epochs = o.epochs;
  cfg.batch = o.batch;
  cfg.seed = o.seed;
  const TrainOutcome trained = train_mlp(data.sequences, cfg);
  const MlpPredictor predictor(trained.params);
  write_json_atomic(o.out, predictor_to_json(predictor));

  const std::string log = o.log.empty() ? o.out + ".loss.csv" : o.log;
  std::string text = "epoch,mse\n";
  for (std::size_t e = 0; e < trained.loss_history.size(); ++e)
    text += std::to_string(e) + "," + number_text(trained.loss_history[e]) + "\n";
  write_text_atomic(log, text);

  RunRecord rec;
  rec.outputs = {o.out, log};
  if (auto up = upstream_manifest(o.data)) rec.upstream["dataset"] = *up;
  write_manifest(manifest_path_for_file(o.out), "train", to_json(o), o.seed, rec,
                 seconds_since(start));
  out << "trained mlp (hidden " << o.hidden << "): mse " << number_text(trained.loss_history.front())
      << " -> " << number_text(trained.loss_history.back()) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// attack

std::unique_ptr<Predictor> load_predictor(const std::string& ref, std::size_t t_h, std::size_t t_f,
                                          std::size_t joints) {
  std::unique_ptr<Predictor> p;
  std::error_code ec;
  if (fs::is_regular_file(ref, ec)) {
    try {
      p = predictor_from_json(read_json(ref));
    } catch (const Error& e) {
      if (e.code() == Errc::io) throw;
      throw Error(e.code(), ref + ": " + e.what());
    }
  } else if (ref == "zero_velocity" || ref == "linear") {
    p = make_predictor(ref, t_h, t_f, joints);
  } else {
    throw Error(Errc::io, "predictor '" + ref + "' is neither a file nor a built-in kind");
  }
  if (p->history_length() != t_h || p->horizon() != t_f || p->joints() != joints)
    throw Error(Errc::shape, "predictor shape (t_h " + std::to_string(p->history_length()) +
                                 ", t_f " + std::to_string(p->horizon()) + ", j " +
                                 std::to_string(p->joints()) + ") does not match the dataset");
  return p;
}

std::string epsilon_dir(double eps) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "eps_%g", eps);
  return buf;
}

std::vector<double> average_per_frame(const Predictor& f, const std::vector<PoseTensor>& inputs,
                                      const std::vector<SplitSequence>& seqs) {
  std::vector<double> acc(f.horizon(), 0.0);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const auto per = mpjpe_per_frame(f.forward(inputs[i]), seqs[i].future.frames());
    for (std::size_t t = 0; t < acc.size(); ++t) acc[t] += per[t];
  }
  for (double& v : acc) v /= static_cast<double>(seqs.size());
  return acc;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

int exec_attack(const AttackOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset data = read_dataset(o.data);
  const auto& seqs = data.sequences;
  if (seqs.empty()) throw Error(Errc::empty_input, "dataset has no sequences");
  const std::size_t t_h = seqs.front().history.length();
  const std::size_t t_f = seqs.front().future.length();
  const std::size_t joints = seqs.front().history.joints();
  const auto predictor = load_predictor(o.predictor, t_h, t_f, joints);

  AttackConfig base = o.config;
  if (o.frames != "custom") base.frame_mask = frames_for_part(o.frames, t_h);
  std::vector<double> epsilons = o.epsilons;
  if (epsilons.empty()) epsilons = {0.01, 0.02, 0.03, 0.04, 0.05};
  for (double eps : epsilons) {
    AttackConfig c = base;
    c.epsilon = eps;
    c.validate(t_h);
  }

  std::vector<PoseTensor> clean;
  for (const auto& s : seqs) clean.push_back(s.history.frames());
  const auto clean_err = average_per_frame(*predictor, clean, seqs);

  json summary;
  summary["version"] = 1;
  summary["predictor"] = std::string(predictor->kind());
  summary["predictor_source"] = o.predictor;
  summary["constraints"] = std::string(to_string(base.constraint_mode));
  summary["frames"] = o.frames;
  summary["n_sequences"] = seqs.size();
  summary["t_h"] = t_h;
  summary["t_f"] = t_f;
  summary["fps"] = seqs.front().history.fps();
  summary["joints"] = joints;
  summary["joint_names"] = data.joint_names;
  summary["clean"] = {{"mpjpe_per_frame", clean_err}, {"mean_mpjpe", mean_of(clean_err)}};
  summary["runs"] = json::array();

  RunRecord rec;
  const fs::path root(o.out);
  const std::size_t threads = thread_budget();
  for (double eps : epsilons) {
    AttackConfig cfg = base;
    cfg.epsilon = eps;
    const auto results = attack_batch(*predictor, seqs, data.connectivity, cfg, threads, o.batch_scale);

    const fs::path dir = root / epsilon_dir(eps);
    std::vector<PoseTensor> adv, pert;
    double pred = 0.0, temp = 0.0, bl = 0.0, total = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const fs::path file = dir / sequence_file_name(i);
      write_json_atomic(file, attack_result_to_json(results[i]));
      rec.outputs.push_back(file.string());
      adv.push_back(results[i].adversarial);
      pert.push_back(results[i].perturbation);
      total += results[i].final_loss.total;
      pred += results[i].final_loss.pred;
      temp += results[i].final_loss.temp;
      bl += results[i].final_loss.bl;
    }
    const double n = static_cast<double>(results.size());
    const auto adv_err = average_per_frame(*predictor, adv, seqs);
    const PhysicalChange change = physical_change_metrics(clean, adv, data.connectivity);
    json per_joint = json::array();
    for (const auto& st : per_joint_stats(pert)) per_joint.push_back({{"mean", st.mean}, {"stddev", st.stddev}});

    summary["runs"].push_back({{"epsilon", eps},
                               {"dir", epsilon_dir(eps)},
                               {"mpjpe_per_frame", adv_err},
                               {"mean_mpjpe", mean_of(adv_err)},
                               {"physical", {{"delta_bl", change.delta_bl},
                                             {"delta_v", change.delta_v},
                                             {"delta_a", change.delta_a}}},
                               {"final_loss", {{"total", total / n},
                                               {"pred", pred / n},
                                               {"temp", temp / n},
                                               {"bl", bl / n}}},
                               {"per_joint", per_joint}});
    out << epsilon_dir(eps) << ": mean MPJPE " << format_fixed(mean_of(clean_err), 4) << " -> "
        << format_fixed(mean_of(adv_err), 4) << "\n";
  }
  write_json_atomic(root / "summary.json", summary);
  rec.outputs.push_back((root / "summary.json").string());
  if (auto up = upstream_manifest(o.data)) rec.upstream["dataset"] = *up;
  if (auto up = upstream_manifest(o.predictor); up && fs::is_regular_file(o.predictor))
    rec.upstream["predictor"] = *up;
  // Record the resolved grid rather than an empty list.
  AttackOptions resolved = o;
  resolved.epsilons = epsilons;
  write_manifest(root / "run_manifest.json", "attack", to_json(resolved), o.config.seed, rec,
                 seconds_since(start));
  return kOk;
}

// ---------------------------------------------------------------------------
// report

std::vector<fs::path> find_summaries(const std::vector<std::string>& inputs) {
  std::vector<fs::path> found;
  std::error_code ec;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_regular_file(p, ec)) {
      found.push_back(p);
      continue;
    }
    if (!fs::is_directory(p, ec)) continue;
    if (fs::is_regular_file(p / "summary.json", ec)) {
      found.push_back(p / "summary.json");
      continue;
    }
    std::vector<fs::path> nested;
    for (const auto& entry : fs::directory_iterator(p, ec))
      if (entry.is_directory() && fs::is_regular_file(entry.path() / "summary.json", ec))
        nested.push_back(entry.path() / "summary.json");
    std::sort(nested.begin(), nested.end());
    found.insert(found.end(), nested.begin(), nested.end());
  }
  return found;
}

struct LoadedRun {
  double epsilon = 0.0;
  std::vector<double> per_frame;
  PhysicalChange change;
  std::vector<JointStat> per_joint;
};

struct LoadedSummary {
  std::string source;
  std::string predictor;
  std::string constraints;
  std::string frames;
  double fps = 25.0;
  std::size_t t_f = 0;
  std::vector<std::string> joint_names;
  std::vector<double> clean;
  std::vector<LoadedRun> runs;
};

LoadedSummary load_summary(const fs::path& path) {
  const json j = read_json(path);
  LoadedSummary s;
  try {
    s.source = path.parent_path().string();
    s.predictor = j.at("predictor").get<std::string>();
    s.constraints = j.at("constraints").get<std::string>();
    s.frames = j.at("frames").get<std::string>();
    s.fps = j.at("fps").get<double>();
    s.t_f = j.at("t_f").get<std::size_t>();
    take(j, "joint_names", s.joint_names);
    s.clean = j.at("clean").at("mpjpe_per_frame").get<std::vector<double>>();
    for (const auto& r : j.at("runs")) {
      LoadedRun run;
      run.epsilon = r.at("epsilon").get<double>();
      run.per_frame = r.at("mpjpe_per_frame").get<std::vector<double>>();
      const auto& ph = r.at("physical");
      // null is how NaN (no acceleration on two-frame clips) serializes.
      const auto& da = ph.at("delta_a");
      run.change = {ph.at("delta_bl").get<double>(), ph.at("delta_v").get<double>(),
                    da.is_null() ? std::numeric_limits<double>::quiet_NaN() : da.get<double>()};
      for (const auto& st : r.at("per_joint"))
        run.per_joint.push_back({st.at("mean").get<double>(), st.at("stddev").get<double>()});
      s.runs.push_back(std::move(run));
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, path.string() + ": " + e.what());
  }
  return s;
}

std::string eps_label(double eps) { return "eps=" + format_fixed(eps, 2); }

int exec_report(const ReportOptions& o, std::ostream& out) {
  const auto start = std::chrono::steady_clock::now();
  TableFormat format;
  if (o.format == "md") format = TableFormat::markdown;
  else if (o.format == "csv") format = TableFormat::csv;
  else throw Error(Errc::config, "--format must be md or csv");
  if (!(o.unit_factor > 0.0)) throw Error(Errc::config, "--unit-factor must be positive");

  const auto paths = find_summaries(o.results);
  if (paths.empty()) throw Error(Errc::io, "no results found");
  std::vector<LoadedSummary> summaries;
  for (const auto& p : paths) summaries.push_back(load_summary(p));

  const double fps = summaries.front().fps;
  const std::size_t t_f = summaries.front().t_f;
  for (const auto& s : summaries)
    if (s.fps != fps || s.t_f != t_f)
      throw Error(Errc::validation, "results in " + s.source + " use a different fps or horizon");

  std::vector<double> intervals = o.intervals;
  if (intervals.empty()) {
    for (double ms : {80.0, 160.0, 320.0, 400.0, 560.0, 1000.0}) {
      try {
        interval_to_frame(ms, fps, t_f);
        intervals.push_back(ms);
      } catch (const Error&) {
      }
    }
    if (intervals.empty()) throw Error(Errc::range, "no default interval fits the horizon");
  }
  std::vector<std::size_t> frames;
  for (double ms : intervals) frames.push_back(interval_to_frame(ms, fps, t_f));
  auto pick = [&](const std::vector<double>& per_frame) {
    std::vector<double> v;
    for (std::size_t f : frames) v.push_back(per_frame.at(f) * o.unit_factor);
    return v;
  };

  std::vector<TextTable> tables;

  // Robustness, one table per full-history run.
  for (const auto& s : summaries) {
    if (s.frames != "all") continue;
    std::vector<EpsilonErrors> adv;
    for (const auto& r : s.runs) adv.push_back({r.epsilon, pick(r.per_frame)});
    tables.push_back(robustness_table(pick(s.clean), adv, intervals, o.all_growth)
                         .to_text("Prediction error under attack (predictor=" + s.predictor +
                                  ", constraints=" + s.constraints + ")"));
  }

  // Frame vulnerability across history parts.
  std::map<std::tuple<std::string, std::string, double>, std::map<std::string, std::vector<double>>> parts;
  for (const auto& s : summaries) {
    const std::string part = s.frames == "all" ? "whole" : s.frames;
    const auto& names = partition_names();
    if (std::find(names.begin(), names.end(), part) == names.end()) continue;
    for (const auto& r : s.runs) {
      auto& m = parts[{s.predictor, s.constraints, r.epsilon}];
      m[part] = pick(r.per_frame);
      m["clean"] = pick(s.clean);
    }
  }
  for (const auto& [key, by_part] : parts) {
    // by_part always holds "clean"; a lone full-history run is covered above.
    if (by_part.size() < 3) continue;
    const auto& [pred, cons, eps] = key;
    tables.push_back(frame_vulnerability_table(
        by_part, intervals,
        "Attacked history part (predictor=" + pred + ", constraints=" + cons + ", " + eps_label(eps) + ")"));
  }

  // Physical change across constraint modes.
  std::map<std::tuple<std::string, std::string, double>, std::map<std::string, ConstraintRow>> modes;
  std::map<std::tuple<std::string, std::string, double>, std::vector<double>> mode_clean;
  for (const auto& s : summaries)
    for (const auto& r : s.runs) {
      const auto key = std::make_tuple(s.predictor, s.frames, r.epsilon);
      PhysicalChange c = r.change;
      c.delta_bl *= o.unit_factor;
      c.delta_v *= o.unit_factor;
      c.delta_a *= o.unit_factor;
      modes[key][s.constraints] = {s.constraints, pick(r.per_frame), c};
      mode_clean[key] = pick(s.clean);
    }
  for (const auto& [key, by_mode] : modes) {
    if (by_mode.size() < 2) continue;
    std::vector<ConstraintRow> rows{{"clean", mode_clean[key], std::nullopt}};
    for (const char* m : {"none", "temporal_only", "bone_only", "both"})
      if (by_mode.count(m)) rows.push_back(by_mode.at(m));
    const auto& [pred, part, eps] = key;
    tables.push_back(physical_change_table(
        rows, intervals,
        "Physical change by constraint (predictor=" + pred + ", frames=" + part + ", " + eps_label(eps) + ")"));
  }

  // Per-joint perturbation modulus.
  for (const auto& s : summaries) {
    if (s.frames != "all") continue;
    for (const auto& r : s.runs) {
      std::vector<JointStat> st = r.per_joint;
      for (auto& x : st) {
        x.mean *= o.unit_factor;
        x.stddev *= o.unit_factor;
      }
      tables.push_back(per_joint_table(st, s.joint_names,
                                       "Per-joint perturbation modulus (predictor=" + s.predictor +
                                           ", constraints=" + s.constraints + ", " +
                                           eps_label(r.epsilon) + ")"));
    }
  }

  std::string text;
  for (const auto& t : tables) {
    if (!text.empty()) text += format == TableFormat::csv ? "\r\n" : "\n";
    if (format == TableFormat::csv && !t.title.empty()) text += csv_field(t.title) + "\r\n";
    text += render(t, format);
  }

  if (o.out.empty()) {
    out << text;
    return kOk;
  }
  write_text_atomic(o.out, text);
  RunRecord rec;
  rec.outputs = {o.out};
  for (const auto& p : paths) {
    if (auto up = upstream_manifest(p.parent_path())) rec.upstream[p.parent_path().string()] = *up;
  }
  write_manifest(manifest_path_for_file(o.out), "report", to_json(o), 0, rec, seconds_since(start));
  out << "wrote " << tables.size() << " tables to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck

int exec_gradcheck(const GradcheckCliOptions& o, std::ostream& out, std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  if (!(o.check.h > 0.0)) throw Error(Errc::config, "--h must be positive");
  if (o.check.instances < 1) throw Error(Errc::config, "--instances must be >= 1");
  const auto results = run_gradcheck(o.check);
  std::string text;
  std::vector<std::string> failing;
  for (const auto& r : results) {
    char line[160];
    std::snprintf(line, sizeof line, "%-20s instances=%zu worst_rel_err=%.3e %s\n", r.term.c_str(),
                  r.instances, r.worst_relative_error, r.passed ? "PASS" : "FAIL");
    text += line;
    if (!r.passed) failing.push_back(r.term);
  }
  out << text;
  if (!o.out.empty()) {
    write_text_atomic(o.out, text);
    RunRecord rec;
    rec.outputs = {o.out};
    write_manifest(manifest_path_for_file(o.out), "gradcheck", to_json(o), o.check.seed, rec,
                   seconds_since(start));
  }
  if (failing.empty()) return kOk;
  std::string list;
  for (const auto& f : failing) list += (list.empty() ? "" : ", ") + f;
  err << "gradcheck failed: " << list << "\n";
  return kCheckFailed;
}

// ---------------------------------------------------------------------------
// replay

int exec_replay(const std::string& manifest, const std::string& out_override, std::ostream& out,
                std::ostream& err) {
  const json m = read_json(manifest);
  std::string command;
  json config;
  try {
    command = m.at("command").get<std::string>();
    config = m.at("config");
  } catch (const json::exception& e) {
    throw Error(Errc::parse, manifest + ": " + e.what());
  }
  try {
    if (command == "synth") {
      SynthOptions o;
      from_json_opts(config, o);
      if (!out_override.empty()) o.out = out_override;
      return exec_synth(o, out);
    }
    if (command == "train") {
      TrainOptions o;
      from_json_opts(config, o);
      if (!out_override.empty()) {
        o.out = out_override;
        o.log.clear();
      }
      return exec_train(o, out);
    }
    if (command == "attack") {
      AttackOptions o;
      from_json_opts(config, o);
      if (!out_override.empty()) o.out = out_override;
      return exec_attack(o, out);
    }
    if (command == "report") {
      ReportOptions o;
      from_json_opts(config, o);
      if (!out_override.empty()) o.out = out_override;
      return exec_report(o, out);
    }
    if (command == "gradcheck") {
      GradcheckCliOptions o;
      from_json_opts(config, o);
      if (!out_override.empty()) o.out = out_override;
      return exec_gradcheck(o, out, err);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::parse, manifest + ": " + e.what());
  }
  throw Error(Errc::parse, manifest + ": unknown command '" + command + "'");
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::io:
      return kMissingInput;
    case Errc::numeric_failure:
      return kCheckFailed;
    default:
      return kUsage;
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Physically constrained adversarial attacks on motion predictors", kToolName};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  SynthOptions so;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic motion dataset");
  synth->add_option("--n", so.n, "Number of sequences")->capture_default_str();
  synth->add_option("--t-h", so.t_h, "History frames")->capture_default_str();
  synth->add_option("--t-f", so.t_f, "Future frames")->capture_default_str();
  synth->add_option("--fps", so.fps, "Frame rate")->capture_default_str();
  synth->add_option("--family", so.family, "oscillation, drift or mixture")->capture_default_str();
  synth->add_option("--amplitude", so.amplitude, "Root translation amplitude")->capture_default_str();
  synth->add_option("--freq-min", so.freq_min, "Lowest frequency (Hz)")->capture_default_str();
  synth->add_option("--freq-max", so.freq_max, "Highest frequency (Hz)")->capture_default_str();
  synth->add_option("--swing", so.swing, "Peak bone swing (rad)")->capture_default_str();
  synth->add_option("--noise", so.noise, "Gaussian noise stddev")->capture_default_str();
  synth->add_option("--seed", so.seed, "Random seed")->capture_default_str();
  synth->add_option("--out", so.out, "Output directory")->required();

  TrainOptions to;
  auto* train = app.add_subcommand("train", "Train the mlp predictor");
  train->add_option("--data", to.data, "Dataset directory or manifest")->required();
  train->add_option("--out", to.out, "Predictor JSON file")->required();
  train->add_option("--log", to.log, "Training-loss CSV (default <out>.loss.csv)");
  train->add_option("--hidden", to.hidden, "Hidden width")->capture_default_str();
  train->add_option("--lr", to.lr, "Learning rate")->capture_default_str();
  train->add_option("--epochs", to.epochs, "Epochs")->capture_default_str();
  train->add_option("--batch", to.batch, "Minibatch size")->capture_default_str();
  train->add_option("--seed", to.seed, "Random seed")->capture_default_str();

  AttackOptions ao;
  std::string attack_config_file, constraints, frames;
  double step_factor = 0.0, lambda = 0.0, absolute_bound = 0.0;
  std::size_t iterations = 0, order = 0;
  std::uint64_t attack_seed = 0;
  auto* attack = app.add_subcommand("attack", "Run the PGD attack over a dataset");
  attack->add_option("--data", ao.data, "Dataset directory or manifest")->required();
  attack->add_option("--predictor", ao.predictor, "Predictor file, or zero_velocity / linear")->required();
  attack->add_option("--out", ao.out, "Results directory")->required();
  attack->add_option("--config", attack_config_file, "AttackConfig JSON used as the base");
  attack->add_option("--epsilon", ao.epsilons, "Bound multiplier (repeatable)");
  attack->add_option("--step-factor", step_factor, "Step as a fraction of epsilon");
  attack->add_option("--iterations", iterations, "PGD iterations");
  attack->add_option("--lambda", lambda, "Physical-term weight");
  attack->add_option("--order", order, "Highest temporal derivative order");
  attack->add_option("--constraints", constraints, "none, temporal, bone or both");
  attack->add_option("--frames", frames, "all, front, middle, rear, last or custom");
  attack->add_option("--absolute-bound", absolute_bound, "Fixed bound replacing epsilon * S_c");
  attack->add_flag("--batch-scale", ao.batch_scale, "One S_c for the whole dataset");
  attack->add_option("--seed", attack_seed, "Random seed");
  auto* signed_flag = attack->add_flag("--signed-bone-loss", "Use the signed bone-length difference");

  ReportOptions ro;
  auto* report = app.add_subcommand("report", "Render tables from attack results");
  report->add_option("--results", ro.results, "Results directory (repeatable)")->required();
  report->add_option("--intervals", ro.intervals, "Intervals in ms");
  report->add_option("--format", ro.format, "md or csv")->capture_default_str();
  report->add_option("--out", ro.out, "Output file (default: standard output)");
  report->add_flag("--all-growth", ro.all_growth, "Growth on every epsilon row");
  report->add_option("--unit-factor", ro.unit_factor, "Multiplier applied to lengths")->capture_default_str();

  GradcheckCliOptions go;
  std::string fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  // `--h` is the step size, so help is long-form only here.
  gradcheck->set_help_flag("--help", "Print this help message and exit");
  gradcheck->add_option("--instances", go.check.instances, "Random instances")->capture_default_str();
  gradcheck->add_option("--h", go.check.h, "Central-difference step")->capture_default_str();
  gradcheck->add_option("--tolerance", go.check.tolerance, "Relative error bound")->capture_default_str();
  gradcheck->add_option("--seed", go.check.seed, "Random seed")->capture_default_str();
  gradcheck->add_option("--inject-fault", fault, "Flip the sign of one term's gradient");
  gradcheck->add_option("--out", go.out, "Report file");

  std::string manifest, replay_out;
  auto* replay = app.add_subcommand("replay", "Re-run a command from its manifest");
  replay->add_option("manifest", manifest, "Manifest JSON")->required();
  replay->add_option("--out", replay_out, "Write outputs here instead");

  std::vector<std::string> argv_store{kToolName};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }

  try {
    if (synth->parsed()) return exec_synth(so, out);
    if (train->parsed()) return exec_train(to, out);
    if (attack->parsed()) {
      bool eps_from_file = false;
      if (!attack_config_file.empty()) {
        const json base = read_json(attack_config_file);
        ao.config = attack_config_from_json(base);
        eps_from_file = base.contains("epsilon");
        if (base.contains("frame_mask") && !base["frame_mask"].is_null()) ao.frames = "custom";
      }
      if (ao.epsilons.empty() && eps_from_file) ao.epsilons = {ao.config.epsilon};
      if (attack->count("--step-factor")) ao.config.step_factor = step_factor;
      if (attack->count("--iterations")) ao.config.iterations = iterations;
      if (attack->count("--lambda")) ao.config.lambda = lambda;
      if (attack->count("--order")) ao.config.n_order = order;
      if (attack->count("--constraints")) ao.config.constraint_mode = parse_constraint_mode(constraints);
      if (attack->count("--frames")) ao.frames = frames;
      if (attack->count("--absolute-bound")) ao.config.absolute_bound = absolute_bound;
      if (attack->count("--seed")) ao.config.seed = attack_seed;
      if (signed_flag->count()) ao.config.signed_bone_loss = true;
      ao.config.frame_mask.reset();
      if (ao.frames == "custom" && attack_config_file.empty())
        throw Error(Errc::config, "--frames custom needs a --config file with a frame_mask");
      if (ao.frames == "custom")
        ao.config.frame_mask = attack_config_from_json(read_json(attack_config_file)).frame_mask;
      return exec_attack(ao, out);
    }
    if (report->parsed()) return exec_report(ro, out);
    if (gradcheck->parsed()) {
      if (!fault.empty()) go.check.inject_fault = fault;
      return exec_gradcheck(go, out, err);
    }
    if (replay->parsed()) return exec_replay(manifest, replay_out, out, err);
  } catch (const Error& e) {
    err << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << "\n";
    return kMissingInput;
  }
  return kUsage;
}

}  // namespace moperturb::cli
