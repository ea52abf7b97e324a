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

// Shared fixtures: seeded generators for property tests, small builders and
// a scratch directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <unistd.h>

#include "moperturb/moperturb.hpp"

namespace moperturb::testing {

namespace fs = std::filesystem;

/// Coordinates uniform in [-radius, radius].
inline PoseTensor random_pose(Rng& rng, std::size_t frames, std::size_t joints, double radius = 1.0) {
  PoseTensor x(frames, joints);
  for (double& v : x.data()) v = radius * rng.symmetric();
  return x;
}

/// One coordinate per frame on axis 0 of a single joint.
inline PoseTensor line(const std::vector<double>& xs) {
  PoseTensor p(xs.size(), 1);
  for (std::size_t t = 0; t < xs.size(); ++t) p(t, 0, 0) = xs[t];
  return p;
}

inline SplitSequence split(PoseTensor history, PoseTensor future, double fps = 25.0) {
  return {MotionSequence(std::move(history), fps), MotionSequence(std::move(future), fps), ""};
}

/// Random split with every axis spanning a non-trivial range.
inline SplitSequence random_split(Rng& rng, std::size_t t_h, std::size_t t_f, std::size_t joints) {
  return split(random_pose(rng, t_h, joints), random_pose(rng, t_f, joints));
}

inline SynthConfig small_synth(std::size_t n, std::uint64_t seed, std::size_t t_h = 10,
                               std::size_t t_f = 10) {
  SynthConfig cfg;
  cfg.n_sequences = n;
  cfg.t_h = t_h;
  cfg.t_f = t_f;
  cfg.seed = seed;
  return cfg;
}

struct Caught {
  bool thrown = false;
  Errc code = Errc::io;
  std::string message;
};

/// Runs fn and reports the moperturb::Error it throws, if any.
inline Caught catch_error(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return {true, e.code(), e.what()};
  }
  return {};
}

/// Removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    path_ = fs::temp_directory_path() /
            ("moperturb_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  fs::path path_;
};

}  // namespace moperturb::testing
