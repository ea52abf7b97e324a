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

// Analytic-versus-central-difference checks for every loss term and for the
// combined attack objective chained through each built-in predictor.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "moperturb/attack.hpp"
#include "moperturb/predict.hpp"
#include "moperturb/synth.hpp"

namespace moperturb {

struct GradCheckOptions {
  std::size_t instances = 20;
  double h = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-8;
  std::uint64_t seed = 0;
  std::size_t t_h = 10;
  std::size_t t_f = 5;
  std::size_t mlp_hidden = 16;
  /// Minimum distance of bone lengths and bone deviations from zero in the
  /// sampled instances. Unset means 2h.
  std::optional<double> kink_margin;
  /// Flips the sign of the named term's analytic gradient (test fixture).
  std::optional<std::string> inject_fault;
};

struct GradCheckResult {
  std::string term;
  std::size_t instances = 0;
  double worst_relative_error = 0.0;
  bool passed = false;
};

inline const std::vector<std::string>& gradcheck_terms() {
  static const std::vector<std::string> terms{"loss_pred",           "loss_temp",   "loss_bl",
                                              "total_zero_velocity", "total_linear", "total_mlp"};
  return terms;
}

namespace detail {

inline PoseTensor random_pose(Rng& rng, std::size_t frames, std::size_t joints, double radius) {
  PoseTensor x(frames, joints);
  for (double& v : x.data()) v = radius * rng.symmetric();
  return x;
}

/// True when every bone of xp is longer than margin and differs from its
/// length in x by more than margin. A coordinate step of h moves a bone
/// length by at most h, so margin = 2h keeps central differences off the
/// |.| kinks of the bone term.
inline bool clear_of_kinks(const PoseTensor& x, const PoseTensor& xp, const Connectivity& conn,
                           double margin) {
  const BoneLengths a = bone_lengths(x, conn);
  const BoneLengths b = bone_lengths(xp, conn);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    if (b.values[i] <= margin || std::abs(b.values[i] - a.values[i]) <= margin) return false;
  return true;
}

/// x + noise, redrawn until clear of the bone-term kinks.
inline PoseTensor perturbed_clear_of_kinks(Rng& rng, const PoseTensor& x, const Connectivity& conn,
                                           double radius, double margin) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    PoseTensor xp = x + random_pose(rng, x.frames(), x.joints(), radius);
    if (clear_of_kinks(x, xp, conn, margin)) return xp;
  }
  throw Error(Errc::config, "finite-difference step too large for the perturbation radius");
}

}  // namespace detail

inline std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt) {
  if (opt.inject_fault) {
    const auto& terms = gradcheck_terms();
    if (std::find(terms.begin(), terms.end(), *opt.inject_fault) == terms.end())
      throw Error(Errc::config, "unknown gradcheck term '" + *opt.inject_fault + "'");
  }
  const SkeletonTemplate sk = SkeletonTemplate::toy();
  const Connectivity& conn = sk.connectivity;
  const std::size_t joints = sk.joints();

  AttackConfig cfg;
  cfg.constraint_mode = ConstraintMode::both;
  cfg.lambda = 0.5;
  cfg.n_order = 2;

  std::vector<GradCheckResult> results;
  for (const auto& term : gradcheck_terms()) results.push_back({term, 0, 0.0, true});

  Rng rng(opt.seed);
  for (std::size_t k = 0; k < opt.instances; ++k) {
    const PoseTensor x = detail::random_pose(rng, opt.t_h, joints, 1.0);
    const PoseTensor xp = detail::perturbed_clear_of_kinks(rng, x, conn, 0.1, opt.kink_margin.value_or(2.0 * opt.h));
    const PoseTensor y = detail::random_pose(rng, opt.t_f, joints, 1.0);
    const PoseTensor p = detail::random_pose(rng, opt.t_f, joints, 1.0);

    MlpParams params = MlpParams::init(opt.t_h, opt.t_f, joints, opt.mlp_hidden, rng.next());
    for (double& b : params.b1) b = 0.1 * rng.symmetric();
    for (double& b : params.b2) b = 0.1 * rng.symmetric();
    const std::vector<std::shared_ptr<Predictor>> predictors{
        std::make_shared<ZeroVelocityPredictor>(opt.t_h, opt.t_f, joints),
        std::make_shared<LinearExtrapolatePredictor>(opt.t_h, opt.t_f, joints),
        std::make_shared<MlpPredictor>(std::move(params))};

    for (auto& r : results) {
      PoseTensor analytic;
      PoseTensor numeric;
      if (r.term == "loss_pred") {
        analytic = loss_pred(p, y).grad;
        numeric = finite_diff_gradient([&](const PoseTensor& q) { return loss_pred(q, y).value; }, p, opt.h);
      } else if (r.term == "loss_temp") {
        analytic = loss_temp(x, xp, cfg.n_order).grad;
        numeric = finite_diff_gradient(
            [&](const PoseTensor& q) { return loss_temp(x, q, cfg.n_order).value; }, xp, opt.h);
      } else if (r.term == "loss_bl") {
        analytic = loss_bl(x, xp, conn).grad;
        numeric = finite_diff_gradient([&](const PoseTensor& q) { return loss_bl(x, q, conn).value; },
                                       xp, opt.h);
      } else {
        const Predictor& f = r.term == "total_zero_velocity" ? *predictors[0]
                             : r.term == "total_linear"      ? *predictors[1]
                                                             : *predictors[2];
        analytic = total_loss(f, x, xp, y, conn, cfg).grad;
        numeric = finite_diff_gradient(
            [&](const PoseTensor& q) { return total_loss(f, x, q, y, conn, cfg).total; }, xp, opt.h);
      }
      if (opt.inject_fault && *opt.inject_fault == r.term) analytic *= -1.0;
      r.worst_relative_error =
          std::max(r.worst_relative_error, max_relative_error(analytic, numeric, opt.floor));
      ++r.instances;
    }
  }
  for (auto& r : results) r.passed = r.worst_relative_error < opt.tolerance;
  return results;
}

}  // namespace moperturb
