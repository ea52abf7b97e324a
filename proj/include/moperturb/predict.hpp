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

// Differentiable motion predictors. The attack only needs a forward map and a
// vector-Jacobian product, so any victim implementing `Predictor` plugs in.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moperturb/core.hpp"
#include "moperturb/io.hpp"
#include "moperturb/rng.hpp"

namespace moperturb {

class Predictor {
 public:
  Predictor(std::size_t history_length, std::size_t horizon, std::size_t joints)
      : history_length_(history_length), horizon_(horizon), joints_(joints) {
    if (history_length < 1 || horizon < 1 || joints < 1)
      throw Error(Errc::config, "predictor dimensions must be positive");
  }
  virtual ~Predictor() = default;

  virtual std::string_view kind() const noexcept = 0;

  /// History (T_h x J x 3) to prediction (T_f x J x 3).
  virtual PoseTensor forward(const PoseTensor& history) const = 0;

  /// Pulls a cotangent on the prediction back to the history: returns
  /// (dP/dX)^T upstream.
  virtual PoseTensor vjp(const PoseTensor& history, const PoseTensor& upstream) const = 0;

  std::size_t history_length() const noexcept { return history_length_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t joints() const noexcept { return joints_; }

 protected:
  void check_history(const PoseTensor& x) const {
    if (x.frames() != history_length_ || x.joints() != joints_)
      throw Error(Errc::shape, "predictor expects a " + std::to_string(history_length_) + "x" +
                                   std::to_string(joints_) + "x3 history, got " +
                                   std::to_string(x.frames()) + "x" + std::to_string(x.joints()) +
                                   "x3");
  }
  void check_upstream(const PoseTensor& g) const {
    if (g.frames() != horizon_ || g.joints() != joints_)
      throw Error(Errc::shape, "upstream gradient must be " + std::to_string(horizon_) + "x" +
                                   std::to_string(joints_) + "x3");
  }

 private:
  std::size_t history_length_;
  std::size_t horizon_;
  std::size_t joints_;
};

/// Repeats the last observed pose over the horizon.
class ZeroVelocityPredictor final : public Predictor {
 public:
  using Predictor::Predictor;

  std::string_view kind() const noexcept override { return "zero_velocity"; }

  PoseTensor forward(const PoseTensor& x) const override {
    check_history(x);
    PoseTensor out(horizon(), joints());
    const std::size_t last = x.frames() - 1;
    for (std::size_t i = 0; i < horizon(); ++i)
      for (std::size_t j = 0; j < joints(); ++j) out.set_joint(i, j, x.joint(last, j));
    return out;
  }

  PoseTensor vjp(const PoseTensor& x, const PoseTensor& g) const override {
    check_history(x);
    check_upstream(g);
    PoseTensor out(x.frames(), x.joints());
    const std::size_t last = x.frames() - 1;
    for (std::size_t i = 0; i < horizon(); ++i)
      for (std::size_t j = 0; j < joints(); ++j)
        for (std::size_t a = 0; a < 3; ++a) out(last, j, a) += g(i, j, a);
    return out;
  }
};

/// Constant-velocity extrapolation from the last two frames:
/// frame i (1-based) = s_T + i * (s_T - s_{T-1}).
class LinearExtrapolatePredictor final : public Predictor {
 public:
  LinearExtrapolatePredictor(std::size_t history_length, std::size_t horizon, std::size_t joints)
      : Predictor(history_length, horizon, joints) {
    if (history_length < 2)
      throw Error(Errc::insufficient_history, "linear extrapolation needs at least two frames");
  }

  std::string_view kind() const noexcept override { return "linear"; }

  PoseTensor forward(const PoseTensor& x) const override {
    check_history(x);
    PoseTensor out(horizon(), joints());
    const std::size_t last = x.frames() - 1;
    for (std::size_t i = 0; i < horizon(); ++i) {
      const double step = static_cast<double>(i + 1);
      for (std::size_t j = 0; j < joints(); ++j)
        for (std::size_t a = 0; a < 3; ++a) {
          const double s = x(last, j, a);
          out(i, j, a) = s + step * (s - x(last - 1, j, a));
        }
    }
    return out;
  }

  PoseTensor vjp(const PoseTensor& x, const PoseTensor& g) const override {
    check_history(x);
    check_upstream(g);
    PoseTensor out(x.frames(), x.joints());
    const std::size_t last = x.frames() - 1;
    for (std::size_t i = 0; i < horizon(); ++i) {
      const double step = static_cast<double>(i + 1);
      for (std::size_t j = 0; j < joints(); ++j)
        for (std::size_t a = 0; a < 3; ++a) {
          out(last, j, a) += (1.0 + step) * g(i, j, a);
          out(last - 1, j, a) -= step * g(i, j, a);
        }
    }
    return out;
  }
};

/// One-hidden-layer tanh network on the flattened history. Matrices are
/// row-major: w1 is hidden x input, w2 is output x hidden.
struct MlpParams {
  std::size_t history_length = 0;
  std::size_t horizon = 0;
  std::size_t joints = 0;
  std::size_t hidden = 0;
  std::vector<double> w1, b1, w2, b2;

  std::size_t input_dim() const noexcept { return history_length * joints * 3; }
  std::size_t output_dim() const noexcept { return horizon * joints * 3; }

  void validate() const {
    if (hidden < 1) throw Error(Errc::config, "mlp hidden width must be >= 1");
    if (history_length < 1 || horizon < 1 || joints < 1)
      throw Error(Errc::config, "mlp dimensions must be positive");
    if (w1.size() != hidden * input_dim() || b1.size() != hidden ||
        w2.size() != output_dim() * hidden || b2.size() != output_dim())
      throw Error(Errc::shape, "mlp parameter arrays do not match declared dimensions");
    for (const auto* v : {&w1, &b1, &w2, &b2})
      for (double x : *v)
        if (!std::isfinite(x)) throw Error(Errc::validation, "mlp parameters must be finite");
  }

  static MlpParams zeros(std::size_t t_h, std::size_t t_f, std::size_t j, std::size_t hidden) {
    MlpParams p{t_h, t_f, j, hidden, {}, {}, {}, {}};
    p.w1.assign(hidden * p.input_dim(), 0.0);
    p.b1.assign(hidden, 0.0);
    p.w2.assign(p.output_dim() * hidden, 0.0);
    p.b2.assign(p.output_dim(), 0.0);
    return p;
  }

  /// Weights uniform in +-1/sqrt(fan_in), biases zero.
  static MlpParams init(std::size_t t_h, std::size_t t_f, std::size_t j, std::size_t hidden,
                        std::uint64_t seed) {
    if (hidden < 1) throw Error(Errc::config, "mlp hidden width must be >= 1");
    MlpParams p = zeros(t_h, t_f, j, hidden);
    Rng rng(seed);
    const double r1 = 1.0 / std::sqrt(static_cast<double>(p.input_dim()));
    const double r2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& w : p.w1) w = r1 * rng.symmetric();
    for (double& w : p.w2) w = r2 * rng.symmetric();
    return p;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

namespace detail {

struct MlpActivations {
  std::vector<double> hidden;  // tanh outputs
  std::vector<double> output;
};

inline MlpActivations mlp_forward(const MlpParams& p, std::span<const double> x) {
  const std::size_t in = p.input_dim();
  const std::size_t out = p.output_dim();
  MlpActivations act{std::vector<double>(p.hidden), std::vector<double>(out)};
  for (std::size_t h = 0; h < p.hidden; ++h) {
    double s = p.b1[h];
    const double* row = &p.w1[h * in];
    for (std::size_t i = 0; i < in; ++i) s += row[i] * x[i];
    act.hidden[h] = std::tanh(s);
  }
  for (std::size_t o = 0; o < out; ++o) {
    double s = p.b2[o];
    const double* row = &p.w2[o * p.hidden];
    for (std::size_t h = 0; h < p.hidden; ++h) s += row[h] * act.hidden[h];
    act.output[o] = s;
  }
  return act;
}

// Cotangent on the pre-activation of the hidden layer.
inline std::vector<double> mlp_hidden_cotangent(const MlpParams& p, const MlpActivations& act,
                                                std::span<const double> upstream) {
  std::vector<double> ga(p.hidden, 0.0);
  for (std::size_t o = 0; o < p.output_dim(); ++o) {
    const double g = upstream[o];
    if (g == 0.0) continue;
    const double* row = &p.w2[o * p.hidden];
    for (std::size_t h = 0; h < p.hidden; ++h) ga[h] += row[h] * g;
  }
  for (std::size_t h = 0; h < p.hidden; ++h) ga[h] *= 1.0 - act.hidden[h] * act.hidden[h];
  return ga;
}

}  // namespace detail

class MlpPredictor final : public Predictor {
 public:
  explicit MlpPredictor(MlpParams params)
      : Predictor(params.history_length, params.horizon, params.joints), params_(std::move(params)) {
    params_.validate();
  }

  std::string_view kind() const noexcept override { return "mlp"; }
  const MlpParams& params() const noexcept { return params_; }

  PoseTensor forward(const PoseTensor& x) const override {
    check_history(x);
    auto act = detail::mlp_forward(params_, x.data());
    PoseTensor out(horizon(), joints());
    std::copy(act.output.begin(), act.output.end(), out.data().begin());
    return out;
  }

  PoseTensor vjp(const PoseTensor& x, const PoseTensor& g) const override {
    check_history(x);
    check_upstream(g);
    const auto act = detail::mlp_forward(params_, x.data());
    const auto ga = detail::mlp_hidden_cotangent(params_, act, g.data());
    PoseTensor out(x.frames(), x.joints());
    auto gx = out.data();
    const std::size_t in = params_.input_dim();
    for (std::size_t h = 0; h < params_.hidden; ++h) {
      const double* row = &params_.w1[h * in];
      for (std::size_t i = 0; i < in; ++i) gx[i] += row[i] * ga[h];
    }
    return out;
  }

 private:
  MlpParams params_;
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t hidden = 64;
  double learning_rate = 0.2;
  std::size_t epochs = 1000;
  std::size_t batch = 16;
  std::uint64_t seed = 0;
};

struct TrainOutcome {
  MlpParams params;
  /// Full-dataset mean squared error before training (index 0) and after each epoch.
  std::vector<double> loss_history;
};

namespace detail {

inline double dataset_mse(const MlpParams& p, const std::vector<SplitSequence>& data) {
  double sum = 0.0;
  for (const auto& s : data) {
    const auto act = mlp_forward(p, s.history.frames().data());
    const auto y = s.future.frames().data();
    for (std::size_t o = 0; o < act.output.size(); ++o) {
      const double d = act.output[o] - y[o];
      sum += d * d;
    }
  }
  return sum / static_cast<double>(data.size() * p.output_dim());
}

}  // namespace detail

/// Minibatch SGD on mean squared prediction error. Deterministic for a given
/// seed and dataset.
inline TrainOutcome train_mlp(const std::vector<SplitSequence>& data, const TrainConfig& cfg) {
  if (data.empty()) throw Error(Errc::empty_input, "training dataset is empty");
  if (cfg.hidden < 1) throw Error(Errc::config, "hidden width must be >= 1");
  if (cfg.batch < 1) throw Error(Errc::config, "batch size must be >= 1");
  if (!(cfg.learning_rate > 0.0)) throw Error(Errc::config, "learning rate must be positive");
  const std::size_t t_h = data.front().history.length();
  const std::size_t t_f = data.front().future.length();
  const std::size_t joints = data.front().history.joints();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    if (s.history.length() != t_h || s.future.length() != t_f || s.history.joints() != joints ||
        s.future.joints() != joints)
      throw Error(Errc::shape, "sequence " + std::to_string(i) + " has inconsistent shape");
  }

  TrainOutcome result{MlpParams::init(t_h, t_f, joints, cfg.hidden, cfg.seed), {}};
  MlpParams& p = result.params;
  const std::size_t in = p.input_dim();
  const std::size_t out = p.output_dim();
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> gw1(p.w1.size()), gb1(p.b1.size()), gw2(p.w2.size()), gb2(p.b2.size());
  std::vector<double> upstream(out);

  result.loss_history.push_back(detail::dataset_mse(p, data));
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      const double scale = 2.0 / static_cast<double>((stop - start) * out);
      std::fill(gw1.begin(), gw1.end(), 0.0);
      std::fill(gb1.begin(), gb1.end(), 0.0);
      std::fill(gw2.begin(), gw2.end(), 0.0);
      std::fill(gb2.begin(), gb2.end(), 0.0);
      for (std::size_t k = start; k < stop; ++k) {
        const auto& s = data[order[k]];
        const auto x = s.history.frames().data();
        const auto y = s.future.frames().data();
        const auto act = detail::mlp_forward(p, x);
        for (std::size_t o = 0; o < out; ++o) upstream[o] = scale * (act.output[o] - y[o]);
        for (std::size_t o = 0; o < out; ++o) {
          gb2[o] += upstream[o];
          double* row = &gw2[o * p.hidden];
          for (std::size_t h = 0; h < p.hidden; ++h) row[h] += upstream[o] * act.hidden[h];
        }
        const auto ga = detail::mlp_hidden_cotangent(p, act, upstream);
        for (std::size_t h = 0; h < p.hidden; ++h) {
          gb1[h] += ga[h];
          double* row = &gw1[h * in];
          for (std::size_t i = 0; i < in; ++i) row[i] += ga[h] * x[i];
        }
      }
      for (std::size_t i = 0; i < gw1.size(); ++i) p.w1[i] -= cfg.learning_rate * gw1[i];
      for (std::size_t i = 0; i < gb1.size(); ++i) p.b1[i] -= cfg.learning_rate * gb1[i];
      for (std::size_t i = 0; i < gw2.size(); ++i) p.w2[i] -= cfg.learning_rate * gw2[i];
      for (std::size_t i = 0; i < gb2.size(); ++i) p.b2[i] -= cfg.learning_rate * gb2[i];
    }
    result.loss_history.push_back(detail::dataset_mse(p, data));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite differences

using ScalarField = std::function<double(const PoseTensor&)>;

/// Central-difference gradient of a scalar function of a pose tensor.
inline PoseTensor finite_diff_gradient(const ScalarField& fn, const PoseTensor& x, double h) {
  if (!(h > 0.0)) throw Error(Errc::config, "finite-difference step must be positive");
  PoseTensor grad(x.frames(), x.joints());
  PoseTensor probe = x;
  auto pd = probe.data();
  auto gd = grad.data();
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + h;
    const double up = fn(probe);
    pd[i] = orig - h;
    const double down = fn(probe);
    pd[i] = orig;
    gd[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

using PredictionLoss = std::function<double(const PoseTensor& prediction, const PoseTensor& truth)>;

/// Gradient of loss(predictor(X), Y) with respect to X.
inline PoseTensor finite_diff_gradient(const Predictor& predictor, const PredictionLoss& loss,
                                       const PoseTensor& x, const PoseTensor& y, double h) {
  return finite_diff_gradient(
      [&](const PoseTensor& probe) { return loss(predictor.forward(probe), y); }, x, h);
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
inline double max_relative_error(const PoseTensor& analytic, const PoseTensor& numeric,
                                 double floor = 1e-8) {
  if (!analytic.same_shape(numeric)) throw Error(Errc::shape, "gradient shapes differ");
  double worst = 0.0;
  auto a = analytic.data();
  auto n = numeric.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(n[i]), floor});
    worst = std::max(worst, std::abs(a[i] - n[i]) / denom);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Serialization
//
// {"kind": "zero_velocity"|"linear"|"mlp", "t_h", "t_f", "j",
//  "hidden"?, "w1"?, "b1"?, "w2"?, "b2"?}; matrices as arrays of rows.

namespace detail {

inline nlohmann::json matrix_rows(const std::vector<double>& flat, std::size_t rows,
                                  std::size_t cols) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t r = 0; r < rows; ++r)
    out.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(r * cols),
                                      flat.begin() + static_cast<std::ptrdiff_t>((r + 1) * cols)));
  return out;
}

inline std::vector<double> flatten_rows(const nlohmann::json& rows, std::size_t n_rows,
                                        std::size_t n_cols, const char* field) {
  if (!rows.is_array() || rows.size() != n_rows)
    throw Error(Errc::parse, std::string("predictor field '") + field + "' must have " +
                                 std::to_string(n_rows) + " rows");
  std::vector<double> flat;
  flat.reserve(n_rows * n_cols);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto& row = rows[r];
    if (!row.is_array() || row.size() != n_cols)
      throw Error(Errc::parse, std::string("predictor field '") + field + "' row " +
                                   std::to_string(r) + " must have " + std::to_string(n_cols) +
                                   " entries");
    for (const auto& v : row) flat.push_back(v.get<double>());
  }
  return flat;
}

}  // namespace detail

inline nlohmann::json predictor_to_json(const Predictor& predictor) {
  nlohmann::json j;
  j["kind"] = std::string(predictor.kind());
  j["t_h"] = predictor.history_length();
  j["t_f"] = predictor.horizon();
  j["j"] = predictor.joints();
  if (const auto* mlp = dynamic_cast<const MlpPredictor*>(&predictor)) {
    const auto& p = mlp->params();
    j["hidden"] = p.hidden;
    j["w1"] = detail::matrix_rows(p.w1, p.hidden, p.input_dim());
    j["b1"] = p.b1;
    j["w2"] = detail::matrix_rows(p.w2, p.output_dim(), p.hidden);
    j["b2"] = p.b2;
  }
  return j;
}

inline std::unique_ptr<Predictor> make_predictor(std::string_view kind, std::size_t t_h,
                                                 std::size_t t_f, std::size_t joints) {
  if (kind == "zero_velocity") return std::make_unique<ZeroVelocityPredictor>(t_h, t_f, joints);
  if (kind == "linear") return std::make_unique<LinearExtrapolatePredictor>(t_h, t_f, joints);
  throw Error(Errc::config, "unknown built-in predictor '" + std::string(kind) + "'");
}

inline std::unique_ptr<Predictor> predictor_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.at("kind").get<std::string>();
    const auto t_h = json_count(j.at("t_h"), "t_h");
    const auto t_f = json_count(j.at("t_f"), "t_f");
    const auto joints = json_count(j.at("j"), "j");
    if (kind != "mlp") return make_predictor(kind, t_h, t_f, joints);
    MlpParams p;
    p.history_length = t_h;
    p.horizon = t_f;
    p.joints = joints;
    p.hidden = json_count(j.at("hidden"), "hidden");
    if (p.hidden < 1) throw Error(Errc::config, "mlp hidden width must be >= 1");
    p.w1 = detail::flatten_rows(j.at("w1"), p.hidden, p.input_dim(), "w1");
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.w2 = detail::flatten_rows(j.at("w2"), p.output_dim(), p.hidden, "w2");
    p.b2 = j.at("b2").get<std::vector<double>>();
    return std::make_unique<MlpPredictor>(std::move(p));
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::parse, std::string("predictor json: ") + e.what());
  }
}

}  // namespace moperturb
