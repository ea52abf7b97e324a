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

// Synthetic skeleton motion and the on-disk dataset format.
//
// Sequence file (version 1):
//   {"version": 1, "fps": 25.0, "joints": 5, "connectivity": [[0, 1], ...],
//    "history": [[[x, y, z] x J] x T_h], "future": [[[x, y, z] x J] x T_f],
//    "label": "oscillation", "joint_names": [...]}
// "label" and "joint_names" are optional.
//
// Dataset manifest (dataset.json):
//   {"version": 1, "sequences": [{"file": "seq_0000.json", "label": "..."}, ...]}

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moperturb/core.hpp"
#include "moperturb/io.hpp"
#include "moperturb/rng.hpp"

namespace moperturb {

/// Rest pose of a skeleton. Bones must be listed so that each bone's parent
/// joint is joint 0 or the child of an earlier bone; `offsets[l]` is the rest
/// vector from the parent to the child of bone l.
struct SkeletonTemplate {
  std::vector<std::string> joint_names;
  Connectivity connectivity;
  std::vector<Vec3> offsets;

  std::size_t joints() const noexcept { return joint_names.size(); }

  /// Pelvis-chest-head chain with both hands branching off the chest.
  static SkeletonTemplate toy() {
    return {{"pelvis", "chest", "head", "left_hand", "right_hand"},
            Connectivity({{0, 1}, {1, 2}, {1, 3}, {1, 4}}),
            {{0.0, 0.50, 0.05}, {0.0, 0.25, 0.03}, {-0.45, -0.15, 0.12}, {0.45, -0.15, 0.12}}};
  }

  static SkeletonTemplate single_joint() { return {{"root"}, Connectivity(), {}}; }

  void validate() const {
    if (joint_names.empty()) throw Error(Errc::config, "skeleton needs at least one joint");
    if (offsets.size() != connectivity.size())
      throw Error(Errc::config, "skeleton needs one rest offset per bone");
    connectivity.check_joints(joints());
    std::vector<bool> placed(joints(), false);
    placed[0] = true;
    for (const Bone& b : connectivity.bones()) {
      if (!placed[b.parent] || placed[b.child])
        throw Error(Errc::config, "skeleton bones must be listed root-outwards");
      placed[b.child] = true;
    }
  }
};

enum class MotionFamily { oscillation, drift, mixture };

constexpr std::string_view to_string(MotionFamily f) {
  switch (f) {
    case MotionFamily::oscillation: return "oscillation";
    case MotionFamily::drift: return "drift";
    case MotionFamily::mixture: return "mixture";
  }
  return "oscillation";
}

inline MotionFamily parse_motion_family(std::string_view s) {
  if (s == "oscillation") return MotionFamily::oscillation;
  if (s == "drift") return MotionFamily::drift;
  if (s == "mixture") return MotionFamily::mixture;
  throw Error(Errc::config, "unknown motion family '" + std::string(s) + "'");
}

struct SynthConfig {
  std::size_t n_sequences = 50;
  std::size_t t_h = 10;
  std::size_t t_f = 25;
  double fps = 25.0;
  SkeletonTemplate skeleton = SkeletonTemplate::toy();
  MotionFamily family = MotionFamily::oscillation;
  /// Root translation amplitude on x (y and z get half and a quarter).
  double amplitude = 0.1;
  double freq_min_hz = 0.5;
  double freq_max_hz = 2.0;
  /// Peak bone swing angle in radians.
  double swing = 0.5;
  double noise_stddev = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (t_h < 3) throw Error(Errc::config, "t_h must be >= 3");
    if (t_f < 1) throw Error(Errc::config, "t_f must be >= 1");
    if (!(amplitude > 0.0)) throw Error(Errc::config, "amplitude must be positive");
    if (!(noise_stddev >= 0.0)) throw Error(Errc::config, "noise stddev must be >= 0");
    if (!(fps > 0.0)) throw Error(Errc::config, "fps must be positive");
    if (!(freq_min_hz > 0.0) || freq_max_hz < freq_min_hz)
      throw Error(Errc::config, "frequency range must satisfy 0 < min <= max");
    skeleton.validate();
  }
};

struct Dataset {
  Connectivity connectivity;
  std::vector<std::string> joint_names;
  std::vector<SplitSequence> sequences;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

namespace detail {

struct Sinusoid {
  double amplitude = 0.0;
  double omega = 0.0;  // radians per frame
  double phase = 0.0;
  double at(double t) const { return amplitude * std::sin(omega * t + phase); }
};

inline Vec3 rotate(const Vec3& v, double about_z, double about_x) {
  const double cz = std::cos(about_z), sz = std::sin(about_z);
  const double cx = std::cos(about_x), sx = std::sin(about_x);
  const Vec3 r1{cz * v[0] - sz * v[1], sz * v[0] + cz * v[1], v[2]};
  return {r1[0], cx * r1[1] - sx * r1[2], sx * r1[1] + cx * r1[2]};
}

}  // namespace detail

/// Deterministic synthetic clips. Every bone is a rotated copy of its rest
/// offset, so without noise each bone keeps its length in every frame.
inline Dataset generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto& sk = cfg.skeleton;
  const std::size_t total = cfg.t_h + cfg.t_f;
  const double per_frame = 2.0 * std::numbers::pi / cfg.fps;
  auto sinusoid = [&](double amp) {
    const double f = rng.uniform(cfg.freq_min_hz, cfg.freq_max_hz);
    return detail::Sinusoid{amp, f * per_frame, rng.uniform(0.0, 2.0 * std::numbers::pi)};
  };

  Dataset out{sk.connectivity, sk.joint_names, {}};
  out.sequences.reserve(cfg.n_sequences);
  for (std::size_t n = 0; n < cfg.n_sequences; ++n) {
    MotionFamily family = cfg.family;
    if (family == MotionFamily::mixture)
      family = rng.uniform01() < 0.5 ? MotionFamily::oscillation : MotionFamily::drift;

    const Vec3 base{rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
    const double a = cfg.amplitude;
    const bool drift = family == MotionFamily::drift;
    // Drift: a slow sway on top of a constant velocity of up to `a` per second.
    const double sway = drift ? 0.2 : 1.0;
    std::array<detail::Sinusoid, 3> root{sinusoid(sway * a), sinusoid(sway * 0.5 * a),
                                         sinusoid(sway * 0.25 * a)};
    Vec3 velocity{0.0, 0.0, 0.0};
    if (drift)
      for (double& v : velocity) v = rng.uniform(-a, a) / cfg.fps;
    const double swing = drift ? 0.3 * cfg.swing : cfg.swing;
    std::vector<std::array<detail::Sinusoid, 2>> bones;
    for (std::size_t l = 0; l < sk.connectivity.size(); ++l)
      bones.push_back({sinusoid(swing), sinusoid(0.5 * swing)});

    PoseTensor frames(total, sk.joints());
    for (std::size_t t = 0; t < total; ++t) {
      const double tt = static_cast<double>(t);
      frames.set_joint(t, 0,
                       {base[0] + velocity[0] * tt + root[0].at(tt),
                        base[1] + velocity[1] * tt + root[1].at(tt),
                        base[2] + velocity[2] * tt + root[2].at(tt)});
      for (std::size_t l = 0; l < sk.connectivity.size(); ++l) {
        const Bone& b = sk.connectivity.bones()[l];
        const Vec3 parent = frames.joint(t, b.parent);
        const Vec3 off = detail::rotate(sk.offsets[l], bones[l][0].at(tt), bones[l][1].at(tt));
        frames.set_joint(t, b.child, {parent[0] + off[0], parent[1] + off[1], parent[2] + off[2]});
      }
    }
    if (cfg.noise_stddev > 0.0)
      for (double& v : frames.data()) v += cfg.noise_stddev * rng.normal();

    out.sequences.push_back({MotionSequence(frames.frame_range(0, cfg.t_h), cfg.fps, sk.joint_names),
                             MotionSequence(frames.frame_range(cfg.t_h, total), cfg.fps, sk.joint_names),
                             std::string(to_string(family))});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline nlohmann::json connectivity_to_json(const Connectivity& conn) {
  nlohmann::json out = nlohmann::json::array();
  for (const Bone& b : conn.bones()) out.push_back({b.parent, b.child});
  return out;
}

inline Connectivity connectivity_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(Errc::parse, "field 'connectivity' must be an array of pairs");
  std::vector<Bone> bones;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& p = j[i];
    const std::string field = "connectivity[" + std::to_string(i) + "]";
    if (!p.is_array() || p.size() != 2)
      throw Error(Errc::parse, "field '" + field + "' must be a pair of joint indices");
    bones.push_back({json_count(p[0], field), json_count(p[1], field)});
  }
  return Connectivity(std::move(bones));
}

inline nlohmann::json sequence_to_json(const SplitSequence& s, const Connectivity& conn) {
  nlohmann::json j;
  j["version"] = 1;
  j["fps"] = s.history.fps();
  j["joints"] = s.history.joints();
  j["connectivity"] = connectivity_to_json(conn);
  if (!s.history.joint_names().empty()) j["joint_names"] = s.history.joint_names();
  j["history"] = pose_to_json(s.history.frames());
  j["future"] = pose_to_json(s.future.frames());
  if (!s.label.empty()) j["label"] = s.label;
  return j;
}

struct LoadedSequence {
  SplitSequence sequence;
  Connectivity connectivity;
};

inline LoadedSequence sequence_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::parse, "sequence file must hold a JSON object");
  for (const char* key : {"version", "fps", "joints", "connectivity", "history", "future"})
    if (!j.contains(key)) throw Error(Errc::parse, std::string("missing field '") + key + "'");
  if (!j["version"].is_number_integer() || j["version"].get<int>() != 1)
    throw Error(Errc::parse, "field 'version' must be 1");
  if (!j["fps"].is_number()) throw Error(Errc::parse, "field 'fps' must be a number");
  const auto joints = json_count(j["joints"], "joints");
  if (joints < 1) throw Error(Errc::parse, "field 'joints' must be a positive integer");
  const double fps = j["fps"].get<double>();
  std::vector<std::string> names;
  if (j.contains("joint_names")) {
    if (!j["joint_names"].is_array()) throw Error(Errc::parse, "field 'joint_names' must be an array");
    for (const auto& n : j["joint_names"]) {
      if (!n.is_string()) throw Error(Errc::parse, "field 'joint_names' must hold strings");
      names.push_back(n.get<std::string>());
    }
  }
  LoadedSequence out;
  out.connectivity = connectivity_from_json(j["connectivity"]);
  out.connectivity.check_joints(joints);
  out.sequence.history = MotionSequence(pose_from_json(j["history"], "history", joints), fps, names);
  out.sequence.future = MotionSequence(pose_from_json(j["future"], "future", joints), fps, names);
  if (j.contains("label")) {
    if (!j["label"].is_string()) throw Error(Errc::parse, "field 'label' must be a string");
    out.sequence.label = j["label"].get<std::string>();
  }
  return out;
}

inline std::string sequence_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%04zu.json", index);
  return buf;
}

inline constexpr const char* kDatasetManifest = "dataset.json";

/// Writes one file per sequence plus dataset.json into `dir`.
inline void write_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["sequences"] = nlohmann::json::array();
  for (std::size_t i = 0; i < data.sequences.size(); ++i) {
    const std::string name = sequence_file_name(i);
    write_json_atomic(dir / name, sequence_to_json(data.sequences[i], data.connectivity));
    manifest["sequences"].push_back({{"file", name}, {"label", data.sequences[i].label}});
  }
  write_json_atomic(dir / kDatasetManifest, manifest);
}

inline LoadedSequence read_sequence(const fs::path& file) {
  try {
    return sequence_from_json(read_json(file));
  } catch (const Error& e) {
    if (e.code() == Errc::io) throw;
    throw Error(e.code(), file.string() + ": " + e.what());
  }
}

/// Reads a dataset from a directory holding dataset.json, from a manifest
/// path, or from a single sequence file.
inline Dataset read_dataset(const fs::path& path) {
  fs::path manifest_path = path;
  if (fs::is_directory(path)) manifest_path = path / kDatasetManifest;
  if (!fs::exists(manifest_path)) throw Error(Errc::io, "no dataset at " + path.string());
  const nlohmann::json top = read_json(manifest_path);

  Dataset out;
  auto absorb = [&](LoadedSequence loaded, std::size_t index) {
    if (index == 0) {
      out.connectivity = loaded.connectivity;
      out.joint_names = loaded.sequence.history.joint_names();
    } else {
      const auto& first = out.sequences.front();
      if (!(loaded.connectivity == out.connectivity))
        throw Error(Errc::validation, "sequence " + std::to_string(index) + " has different connectivity");
      if (loaded.sequence.history.joints() != first.history.joints())
        throw Error(Errc::validation, "sequence " + std::to_string(index) + " has a different joint count");
    }
    out.sequences.push_back(std::move(loaded.sequence));
  };

  if (top.is_object() && top.contains("sequences")) {
    const auto& list = top["sequences"];
    if (!list.is_array()) throw Error(Errc::parse, "manifest field 'sequences' must be an array");
    const fs::path base = manifest_path.parent_path();
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!list[i].is_object() || !list[i].contains("file") || !list[i]["file"].is_string())
        throw Error(Errc::parse, "manifest entry " + std::to_string(i) + " lacks a 'file' string");
      absorb(read_sequence(base / list[i]["file"].get<std::string>()), i);
    }
  } else {
    try {
      absorb(sequence_from_json(top), 0);
    } catch (const Error& e) {
      throw Error(e.code(), manifest_path.string() + ": " + e.what());
    }
  }
  if (out.sequences.empty()) throw Error(Errc::empty_input, "dataset at " + path.string() + " is empty");
  return out;
}

}  // namespace moperturb
