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

// Physically constrained projected sign-gradient ascent against motion
// predictors.
//
// The attack maximizes
//
//   L = L_pred(f(X'), Y) - lambda * (L_temp(X, X') + L_BL(X, X'))
//
// under a per-coordinate bound |X' - X| <= eps * S_c(X), where S_c is the
// shortest bounding-box side of the input. Every iteration takes a step of
// step_factor * eps * S_c along sign(dL/dX') and clips back into the box.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "moperturb/core.hpp"
#include "moperturb/predict.hpp"
#include "moperturb/rng.hpp"

namespace moperturb {

enum class ConstraintMode { none, temporal_only, bone_only, both };

constexpr std::string_view to_string(ConstraintMode m) {
  switch (m) {
    case ConstraintMode::none: return "none";
    case ConstraintMode::temporal_only: return "temporal_only";
    case ConstraintMode::bone_only: return "bone_only";
    case ConstraintMode::both: return "both";
  }
  return "none";
}

/// Accepts both the long names and the short CLI spellings (temporal, bone).
inline ConstraintMode parse_constraint_mode(std::string_view s) {
  if (s == "none") return ConstraintMode::none;
  if (s == "temporal_only" || s == "temporal") return ConstraintMode::temporal_only;
  if (s == "bone_only" || s == "bone") return ConstraintMode::bone_only;
  if (s == "both") return ConstraintMode::both;
  throw Error(Errc::config, "unknown constraint mode '" + std::string(s) + "'");
}

constexpr bool uses_temporal(ConstraintMode m) {
  return m == ConstraintMode::temporal_only || m == ConstraintMode::both;
}
constexpr bool uses_bone(ConstraintMode m) {
  return m == ConstraintMode::bone_only || m == ConstraintMode::both;
}

struct AttackConfig {
  double epsilon = 0.01;
  /// Step size as a fraction of epsilon.
  double step_factor = 0.1;
  std::size_t iterations = 50;
  double lambda = 0.5;
  /// Highest temporal derivative order in L_temp.
  std::size_t n_order = 2;
  ConstraintMode constraint_mode = ConstraintMode::both;
  /// History frames the attack may touch; all frames when unset.
  std::optional<std::vector<std::size_t>> frame_mask;
  std::uint64_t seed = 0;
  /// Replaces eps * S_c with a fixed bound (step becomes step_factor * bound).
  std::optional<double> absolute_bound;
  /// Use the raw signed bone-length difference instead of absolute deviations.
  bool signed_bone_loss = false;

  void validate() const {
    if (!(epsilon > 0.0)) throw Error(Errc::config, "epsilon must be positive");
    if (!(step_factor > 0.0)) throw Error(Errc::config, "step_factor must be positive");
    if (iterations < 1) throw Error(Errc::config, "iterations must be >= 1");
    if (!(lambda >= 0.0)) throw Error(Errc::config, "lambda must be non-negative");
    if (n_order < 1) throw Error(Errc::config, "n_order must be >= 1");
    if (absolute_bound && !(*absolute_bound > 0.0))
      throw Error(Errc::config, "absolute bound must be positive");
  }

  void validate(std::size_t history_length) const {
    validate();
    if (frame_mask)
      for (std::size_t f : *frame_mask)
        if (f >= history_length)
          throw Error(Errc::config, "frame mask index " + std::to_string(f) +
                                        " outside history of " + std::to_string(history_length));
  }
};

// ---------------------------------------------------------------------------
// Scale function

/// Per axis: each sequence's coordinate span over all frames and joints, the
/// minimum of those over the batch; then the minimum over the three axes.
inline double scale(std::span<const PoseTensor> batch) {
  if (batch.empty()) throw Error(Errc::empty_input, "scale of an empty batch");
  Vec3 span_min{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::infinity()};
  for (const auto& x : batch) {
    if (x.empty()) throw Error(Errc::empty_input, "scale of an empty sequence");
    if (!x.all_finite()) throw Error(Errc::validation, "non-finite coordinates in scale input");
    for (std::size_t a = 0; a < 3; ++a) {
      double lo = x(0, 0, a);
      double hi = lo;
      for (std::size_t t = 0; t < x.frames(); ++t)
        for (std::size_t j = 0; j < x.joints(); ++j) {
          lo = std::min(lo, x(t, j, a));
          hi = std::max(hi, x(t, j, a));
        }
      span_min[a] = std::min(span_min[a], hi - lo);
    }
  }
  const double s = std::min({span_min[0], span_min[1], span_min[2]});
  if (!(s > 0.0))
    throw Error(Errc::degenerate_scale,
                "input has zero extent on at least one axis; supply an absolute bound");
  return s;
}

inline double scale(const PoseTensor& x) { return scale(std::span<const PoseTensor>(&x, 1)); }

inline double scale(std::span<const MotionSequence> batch) {
  std::vector<PoseTensor> frames;
  frames.reserve(batch.size());
  for (const auto& s : batch) frames.push_back(s.frames());
  return scale(std::span<const PoseTensor>(frames));
}

// ---------------------------------------------------------------------------
// Loss terms. Each returns its value and its gradient with respect to the
// argument being optimized. The gradient of a Euclidean norm at zero is
// taken as zero.

struct LossValue {
  double value = 0.0;
  PoseTensor grad;
};

inline constexpr double kNormSingularity = 1e-12;

/// A bone deviation this small relative to the bone counts as zero. Moving
/// both endpoints by the same offset leaves the length unchanged in exact
/// arithmetic, and the sign of the rounding residue must not steer the step.
inline constexpr double kDeviationRelativeFloor = 1e-12;

/// Average joint displacement between prediction and truth; gradient w.r.t. P.
inline LossValue loss_pred(const PoseTensor& pred, const PoseTensor& truth) {
  if (!pred.same_shape(truth)) throw Error(Errc::shape, "prediction and truth shapes differ");
  const double denom = static_cast<double>(pred.frames() * pred.joints());
  LossValue out{0.0, PoseTensor(pred.frames(), pred.joints())};
  for (std::size_t i = 0; i < pred.frames(); ++i)
    for (std::size_t j = 0; j < pred.joints(); ++j) {
      const Vec3 d = pred.joint(i, j) - truth.joint(i, j);
      const double n = norm(d);
      out.value += n;
      if (n < kNormSingularity) continue;
      for (std::size_t a = 0; a < 3; ++a) out.grad(i, j, a) = d[a] / (denom * n);
    }
  out.value /= denom;
  return out;
}

/// Mean over orders 1..N of the Frobenius distance between the clean and
/// perturbed N-th temporal differences; gradient w.r.t. the perturbed input.
inline LossValue loss_temp(const PoseTensor& clean, const PoseTensor& adv, std::size_t n_order) {
  if (!clean.same_shape(adv)) throw Error(Errc::shape, "clean and perturbed shapes differ");
  if (n_order < 1) throw Error(Errc::config, "n_order must be >= 1");
  if (clean.frames() < n_order + 1)
    throw Error(Errc::insufficient_history,
                "history of " + std::to_string(clean.frames()) +
                    " frames is too short for derivative order " + std::to_string(n_order));
  const PoseTensor diff = adv - clean;
  LossValue out{0.0, PoseTensor(adv.frames(), adv.joints())};
  const double inv_n = 1.0 / static_cast<double>(n_order);
  for (std::size_t n = 1; n <= n_order; ++n) {
    PoseTensor r = temporal_derivative(diff, n);
    double sq = 0.0;
    for (double v : r.data()) sq += v * v;
    const double len = std::sqrt(sq);
    out.value += inv_n * len;
    if (len < kNormSingularity) continue;
    r *= inv_n / len;
    out.grad += temporal_derivative_adjoint(r, n);
  }
  return out;
}

/// Bone-length deviation summed over frames and bones. By default each term
/// is |BL(X) - BL(X')|; with `signed_form` the raw BL(X) - BL(X') is used.
inline LossValue loss_bl(const PoseTensor& clean, const PoseTensor& adv, const Connectivity& conn,
                         bool signed_form = false) {
  if (!clean.same_shape(adv)) throw Error(Errc::shape, "clean and perturbed shapes differ");
  conn.check_joints(adv.joints());
  LossValue out{0.0, PoseTensor(adv.frames(), adv.joints())};
  for (std::size_t t = 0; t < adv.frames(); ++t)
    for (const Bone& b : conn.bones()) {
      const double ref = norm(clean.joint(t, b.parent) - clean.joint(t, b.child));
      const Vec3 d = adv.joint(t, b.parent) - adv.joint(t, b.child);
      const double len = norm(d);
      const double dev = ref - len;
      // d(term)/d(len)
      double slope;
      if (signed_form) {
        out.value += dev;
        slope = -1.0;
      } else {
        out.value += std::abs(dev);
        if (std::abs(dev) <= kDeviationRelativeFloor * std::max(ref, len))
          slope = 0.0;
        else
          slope = dev > 0.0 ? -1.0 : 1.0;
      }
      if (len < kNormSingularity || slope == 0.0) continue;
      for (std::size_t a = 0; a < 3; ++a) {
        const double g = slope * d[a] / len;
        out.grad(t, b.parent, a) += g;
        out.grad(t, b.child, a) -= g;
      }
    }
  return out;
}

struct LossBreakdown {
  double total = 0.0;
  double pred = 0.0;
  double temp = 0.0;
  double bl = 0.0;
  /// dL/dX'
  PoseTensor grad;
};

/// L = L_pred - lambda * (L_temp + L_BL) with the physical terms selected by
/// the constraint mode. L_temp and L_BL are always evaluated and reported;
/// only the active ones enter L and its gradient.
inline LossBreakdown total_loss(const Predictor& predictor, const PoseTensor& clean,
                                const PoseTensor& adv, const PoseTensor& truth,
                                const Connectivity& conn, const AttackConfig& cfg) {
  const PoseTensor pred = predictor.forward(adv);
  LossValue lp = loss_pred(pred, truth);
  LossValue lt = loss_temp(clean, adv, cfg.n_order);
  LossValue lb = loss_bl(clean, adv, conn, cfg.signed_bone_loss);

  LossBreakdown out;
  out.pred = lp.value;
  out.temp = lt.value;
  out.bl = lb.value;
  out.grad = predictor.vjp(adv, lp.grad);
  double physical = 0.0;
  if (cfg.lambda != 0.0) {
    if (uses_temporal(cfg.constraint_mode)) {
      physical += lt.value;
      out.grad += lt.grad * (-cfg.lambda);
    }
    if (uses_bone(cfg.constraint_mode)) {
      physical += lb.value;
      out.grad += lb.grad * (-cfg.lambda);
    }
  }
  out.total = lp.value - cfg.lambda * physical;
  return out;
}

/// X + clamp(X' - X, -bound, bound), coordinate-wise.
inline PoseTensor clip_perturbation(const PoseTensor& adv, const PoseTensor& clean, double bound) {
  if (!adv.same_shape(clean)) throw Error(Errc::shape, "clean and perturbed shapes differ");
  PoseTensor out = clean;
  auto o = out.data();
  auto a = adv.data();
  auto c = clean.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c[i] + std::clamp(a[i] - c[i], -bound, bound);
  return out;
}

// ---------------------------------------------------------------------------
// PGD

struct LossTrace {
  std::vector<double> total, pred, temp, bl;

  std::size_t size() const noexcept { return total.size(); }
  void push(const LossBreakdown& b) {
    total.push_back(b.total);
    pred.push_back(b.pred);
    temp.push_back(b.temp);
    bl.push_back(b.bl);
  }
  friend bool operator==(const LossTrace&, const LossTrace&) = default;
};

struct LossSummary {
  double total = 0.0;
  double pred = 0.0;
  double temp = 0.0;
  double bl = 0.0;
  friend bool operator==(const LossSummary&, const LossSummary&) = default;
};

struct AttackResult {
  PoseTensor adversarial;
  /// Raw X' - X.
  PoseTensor perturbation;
  /// Losses at the iterate entering each of the `iterations` updates.
  LossTrace trace;
  /// Losses at the returned iterate.
  LossSummary final_loss;
  /// S_c used for the bound; unset when an absolute bound replaced it.
  std::optional<double> scale;
  double bound = 0.0;
  double step = 0.0;

  friend bool operator==(const AttackResult&, const AttackResult&) = default;
};

namespace detail {

inline std::vector<bool> frame_flags(const std::optional<std::vector<std::size_t>>& mask,
                                     std::size_t frames) {
  std::vector<bool> flags(frames, !mask.has_value());
  if (mask)
    for (std::size_t f : *mask) flags[f] = true;
  return flags;
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace detail

/// Runs the attack on one clip. `batch_scale` overrides the per-sequence S_c
/// (used when one scale is shared across a batch).
inline AttackResult pgd_attack(const Predictor& predictor, const SplitSequence& split,
                               const Connectivity& conn, const AttackConfig& cfg,
                               std::optional<double> batch_scale = std::nullopt) {
  const PoseTensor& clean = split.history.frames();
  const PoseTensor& truth = split.future.frames();
  cfg.validate(clean.frames());
  split.validate(cfg.n_order);
  if (clean.frames() != predictor.history_length() || truth.frames() != predictor.horizon() ||
      clean.joints() != predictor.joints())
    throw Error(Errc::shape, "sequence shape does not match the predictor");
  conn.check_joints(clean.joints());

  AttackResult result;
  if (cfg.absolute_bound) {
    result.bound = *cfg.absolute_bound;
    result.step = cfg.step_factor * *cfg.absolute_bound;
  } else {
    const double s = batch_scale ? *batch_scale : scale(clean);
    if (!(s > 0.0)) throw Error(Errc::degenerate_scale, "scale must be positive");
    result.scale = s;
    result.bound = cfg.epsilon * s;
    result.step = cfg.step_factor * cfg.epsilon * s;
  }

  const std::vector<bool> active = detail::frame_flags(cfg.frame_mask, clean.frames());
  const std::size_t per_frame = clean.joints() * 3;

  // Uniform start inside the box, realized as bound * u with u ~ U(-1, 1).
  Rng rng(cfg.seed);
  PoseTensor pert(clean.frames(), clean.joints());
  {
    auto p = pert.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double u = rng.symmetric();
      if (active[i / per_frame]) p[i] = result.bound * u;
    }
  }

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const PoseTensor adv = clean + pert;
    LossBreakdown loss = total_loss(predictor, clean, adv, truth, conn, cfg);
    if (!std::isfinite(loss.total))
      throw Error(Errc::numeric_failure, "non-finite loss at iteration " + std::to_string(it));
    result.trace.push(loss);
    auto p = pert.data();
    auto g = loss.grad.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!active[i / per_frame]) continue;
      p[i] = std::clamp(p[i] + result.step * detail::sign(g[i]), -result.bound, result.bound);
    }
  }

  result.adversarial = clean + pert;
  const LossBreakdown last = total_loss(predictor, clean, result.adversarial, truth, conn, cfg);
  if (!std::isfinite(last.total))
    throw Error(Errc::numeric_failure,
                "non-finite loss at iteration " + std::to_string(cfg.iterations));
  result.final_loss = {last.total, last.pred, last.temp, last.bl};
  result.perturbation = std::move(pert);
  return result;
}

/// Attacks every clip independently. Clip i uses seed `cfg.seed ^ i`, so the
/// results do not depend on `threads`.
inline std::vector<AttackResult> attack_batch(const Predictor& predictor,
                                              const std::vector<SplitSequence>& dataset,
                                              const Connectivity& conn, const AttackConfig& cfg,
                                              std::size_t threads = 1, bool batch_scale = false) {
  std::optional<double> shared;
  if (batch_scale && !cfg.absolute_bound) {
    std::vector<PoseTensor> histories;
    histories.reserve(dataset.size());
    for (const auto& s : dataset) histories.push_back(s.history.frames());
    shared = scale(std::span<const PoseTensor>(histories));
  }

  std::vector<AttackResult> results(dataset.size());
  auto run_one = [&](std::size_t i) {
    AttackConfig local = cfg;
    local.seed = cfg.seed ^ static_cast<std::uint64_t>(i);
    results[i] = pgd_attack(predictor, dataset[i], conn, local, shared);
  };

  threads = std::max<std::size_t>(1, std::min(threads, dataset.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) run_one(i);
    return results;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < dataset.size(); i = next++) {
        try {
          run_one(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

// ---------------------------------------------------------------------------
// History partitions for frame-vulnerability studies

struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const FrameRange&, const FrameRange&) = default;
};

struct HistoryPartition {
  FrameRange front, middle, rear, last;
};

/// The final frame (two frames when T_h > 25) forms `last`; the remainder is
/// split into three contiguous parts with any extra frames going to the
/// earlier parts.
inline HistoryPartition partition_history(std::size_t t_h) {
  if (t_h < 4) throw Error(Errc::range, "partitioning needs at least 4 history frames");
  const std::size_t last = t_h <= 25 ? 1 : 2;
  const std::size_t rest = t_h - last;
  const std::size_t base = rest / 3;
  const std::size_t extra = rest % 3;
  const std::size_t n_front = base + (extra > 0 ? 1 : 0);
  const std::size_t n_middle = base + (extra > 1 ? 1 : 0);
  HistoryPartition p;
  p.front = {0, n_front};
  p.middle = {n_front, n_front + n_middle};
  p.rear = {n_front + n_middle, rest};
  p.last = {rest, t_h};
  return p;
}

/// Frame mask for a named part: all, front, middle, rear or last. `all`
/// yields no mask.
inline std::optional<std::vector<std::size_t>> frames_for_part(std::string_view part,
                                                               std::size_t t_h) {
  if (part == "all" || part == "whole") return std::nullopt;
  const HistoryPartition p = partition_history(t_h);
  FrameRange r;
  if (part == "front") r = p.front;
  else if (part == "middle") r = p.middle;
  else if (part == "rear") r = p.rear;
  else if (part == "last") r = p.last;
  else throw Error(Errc::config, "unknown history part '" + std::string(part) + "'");
  std::vector<std::size_t> frames;
  for (std::size_t f = r.begin; f < r.end; ++f) frames.push_back(f);
  return frames;
}

}  // namespace moperturb
