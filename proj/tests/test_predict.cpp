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

#include <cmath>
#include <memory>
#include <vector>

#include <gtest/gtest.h>

#include "moperturb/predict.hpp"
#include "moperturb/synth.hpp"
#include "support.hpp"

namespace moperturb {
namespace {

using testing::line;
using testing::random_pose;

double inner(const PoseTensor& a, const PoseTensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

MlpParams random_mlp(Rng& rng, std::size_t t_h, std::size_t t_f, std::size_t j, std::size_t hidden) {
  MlpParams p = MlpParams::init(t_h, t_f, j, hidden, rng.next());
  for (double& b : p.b1) b = 0.2 * rng.symmetric();
  for (double& b : p.b2) b = 0.2 * rng.symmetric();
  return p;
}

std::vector<std::unique_ptr<Predictor>> builtins(Rng& rng, std::size_t t_h, std::size_t t_f,
                                                 std::size_t j) {
  std::vector<std::unique_ptr<Predictor>> out;
  out.push_back(std::make_unique<ZeroVelocityPredictor>(t_h, t_f, j));
  out.push_back(std::make_unique<LinearExtrapolatePredictor>(t_h, t_f, j));
  out.push_back(std::make_unique<MlpPredictor>(random_mlp(rng, t_h, t_f, j, 8)));
  return out;
}

// ------------------------------ zero velocity -------------------------------

TEST(ZeroVelocity, RepeatsLastFrame) {
  Rng rng(1);
  const PoseTensor x = random_pose(rng, 4, 2);
  const ZeroVelocityPredictor f(4, 3, 2);
  const PoseTensor p = f.forward(x);
  ASSERT_EQ(p.frames(), 3u);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(p.joint(t, j), x.joint(3, j));
}

TEST(ZeroVelocity, VjpRoutesToLastFrame) {
  const ZeroVelocityPredictor f(4, 3, 2);
  const PoseTensor g = f.vjp(PoseTensor(4, 2), PoseTensor(3, 2, 1.0));
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t a = 0; a < 3; ++a) EXPECT_EQ(g(t, j, a), t == 3 ? 3.0 : 0.0);
}

TEST(ZeroVelocity, MpjpeIsLastFrameDistance) {
  Rng rng(2);
  const PoseTensor x = random_pose(rng, 5, 3);
  const PoseTensor y = random_pose(rng, 4, 3);
  const PoseTensor p = ZeroVelocityPredictor(5, 4, 3).forward(x);
  for (std::size_t t = 0; t < 4; ++t) {
    double expect = 0.0;
    for (std::size_t j = 0; j < 3; ++j) expect += norm(x.joint(4, j) - y.joint(t, j));
    EXPECT_NEAR(mpjpe(p, y, t), expect / 3.0, 1e-15);
  }
}

TEST(ZeroVelocity, ShapeChecks) {
  const ZeroVelocityPredictor f(4, 3, 2);
  EXPECT_THROW(f.forward(PoseTensor(3, 2)), Error);
  EXPECT_THROW(f.vjp(PoseTensor(4, 2), PoseTensor(2, 2)), Error);
}

// --------------------------- linear extrapolation ---------------------------

TEST(LinearExtrapolate, ConstantHistoryStaysConstant) {
  PoseTensor x(3, 1);
  for (std::size_t t = 0; t < 3; ++t) x.set_joint(t, 0, {1.5, -2.0, 0.25});
  const PoseTensor p = LinearExtrapolatePredictor(3, 4, 1).forward(x);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(p.joint(t, 0), x.joint(2, 0));
}

TEST(LinearExtrapolate, ArithmeticProgression) {
  const PoseTensor p = LinearExtrapolatePredictor(2, 3, 1).forward(line({0, 1}));
  EXPECT_EQ(p(0, 0, 0), 2.0);
  EXPECT_EQ(p(1, 0, 0), 3.0);
  EXPECT_EQ(p(2, 0, 0), 4.0);
}

TEST(LinearExtrapolate, NeedsTwoFrames) {
  try {
    LinearExtrapolatePredictor(1, 3, 1);
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::insufficient_history);
  }
}

TEST(LinearExtrapolate, VjpMatchesFiniteDifferences) {
  Rng rng(3);
  const LinearExtrapolatePredictor f(6, 5, 3);
  for (int trial = 0; trial < 10; ++trial) {
    const PoseTensor x = random_pose(rng, 6, 3);
    const PoseTensor g = random_pose(rng, 5, 3);
    const PoseTensor numeric = finite_diff_gradient(
        [&](const PoseTensor& q) { return inner(f.forward(q), g); }, x, 1e-5);
    EXPECT_LT(max_relative_error(f.vjp(x, g), numeric), 1e-6);
  }
}

TEST(LinearExtrapolate, VjpClosedForm) {
  // Last frame receives sum (1+i) g_i, the frame before it sum (-i) g_i.
  const LinearExtrapolatePredictor f(3, 3, 1);
  PoseTensor g(3, 1);
  g(0, 0, 0) = 1.0;
  g(1, 0, 0) = 10.0;
  g(2, 0, 0) = 100.0;
  const PoseTensor v = f.vjp(PoseTensor(3, 1), g);
  EXPECT_EQ(v(2, 0, 0), 2.0 * 1 + 3.0 * 10 + 4.0 * 100);
  EXPECT_EQ(v(1, 0, 0), -(1.0 * 1 + 2.0 * 10 + 3.0 * 100));
  EXPECT_EQ(v(0, 0, 0), 0.0);
}

// ----------------------------------- mlp ------------------------------------

TEST(Mlp, ZeroParametersPredictZero) {
  Rng rng(4);
  const MlpPredictor f(MlpParams::zeros(4, 3, 2, 5));
  const PoseTensor p = f.forward(random_pose(rng, 4, 2));
  EXPECT_EQ(p.max_abs(), 0.0);
}

TEST(Mlp, ZeroFirstLayerGivesOutputBias) {
  Rng rng(5);
  MlpParams params = MlpParams::zeros(4, 3, 2, 1);
  for (std::size_t o = 0; o < params.output_dim(); ++o) {
    params.w2[o] = rng.symmetric();
    params.b2[o] = rng.symmetric();
  }
  const MlpPredictor f(params);
  const PoseTensor p = f.forward(random_pose(rng, 4, 2));
  for (std::size_t o = 0; o < params.output_dim(); ++o) EXPECT_EQ(p.data()[o], params.b2[o]);
}

TEST(Mlp, VjpMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const MlpPredictor f(random_mlp(rng, 5, 4, 3, 12));
    const PoseTensor x = random_pose(rng, 5, 3);
    const PoseTensor g = random_pose(rng, 4, 3);
    const PoseTensor numeric = finite_diff_gradient(
        [&](const PoseTensor& q) { return inner(f.forward(q), g); }, x, 1e-5);
    EXPECT_LT(max_relative_error(f.vjp(x, g), numeric), 1e-5);
  }
}

TEST(Mlp, InitIsUniformInFanInBound) {
  const MlpParams p = MlpParams::init(4, 3, 2, 7, 99);
  const double r1 = 1.0 / std::sqrt(static_cast<double>(p.input_dim()));
  const double r2 = 1.0 / std::sqrt(7.0);
  for (double w : p.w1) EXPECT_LE(std::abs(w), r1);
  for (double w : p.w2) EXPECT_LE(std::abs(w), r2);
  for (double b : p.b1) EXPECT_EQ(b, 0.0);
  for (double b : p.b2) EXPECT_EQ(b, 0.0);
  EXPECT_EQ(p.w1, MlpParams::init(4, 3, 2, 7, 99).w1);
  EXPECT_NE(p.w1, MlpParams::init(4, 3, 2, 7, 100).w1);
}

TEST(Mlp, RejectsWrongParameterSizes) {
  MlpParams p = MlpParams::zeros(4, 3, 2, 5);
  p.b1.pop_back();
  EXPECT_THROW(MlpPredictor{p}, Error);
  try {
    MlpParams::zeros(4, 3, 2, 0).validate();
    FAIL() << "no error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
  }
}

// ------------------------------ shared properties ---------------------------

TEST(Predictors, VjpIsLinearInUpstream) {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    for (const auto& f : builtins(rng, 6, 4, 3)) {
      const PoseTensor x = random_pose(rng, 6, 3);
      const PoseTensor g1 = random_pose(rng, 4, 3);
      const PoseTensor g2 = random_pose(rng, 4, 3);
      const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
      const PoseTensor lhs = f->vjp(x, a * g1 + b * g2);
      const PoseTensor rhs = a * f->vjp(x, g1) + b * f->vjp(x, g2);
      EXPECT_LE((lhs - rhs).max_abs(), 1e-10) << f->kind();
    }
  }
}

TEST(Predictors, AnalyticBaselinesAreScaleEquivariant) {
  // Power-of-two factors scale every floating-point operation exactly; other
  // factors agree to rounding.
  Rng rng(8);
  const ZeroVelocityPredictor zv(6, 4, 3);
  const LinearExtrapolatePredictor lin(6, 4, 3);
  for (int trial = 0; trial < 20; ++trial) {
    const PoseTensor x = random_pose(rng, 6, 3);
    for (double k : {0.125, 2.0, 1024.0}) {
      EXPECT_TRUE(zv.forward(k * x) == k * zv.forward(x));
      EXPECT_TRUE(lin.forward(k * x) == k * lin.forward(x));
    }
    const double k = rng.uniform(0.001, 1000.0);
    EXPECT_TRUE(zv.forward(k * x) == k * zv.forward(x));
    EXPECT_LE((lin.forward(k * x) - k * lin.forward(x)).max_abs(), 1e-13 * k * 10.0);
  }
}

// ------------------------------ finite differences --------------------------

TEST(FiniteDiff, LinearFunctionGivesOnes) {
  Rng rng(9);
  const PoseTensor x = random_pose(rng, 3, 2);
  auto sum = [](const PoseTensor& q) {
    double s = 0.0;
    for (double v : q.data()) s += v;
    return s;
  };
  for (double h : {1e-2, 1e-5}) {
    const PoseTensor g = finite_diff_gradient(sum, x, h);
    for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
  }
}

TEST(FiniteDiff, QuadraticGivesIdentity) {
  Rng rng(10);
  const PoseTensor x = random_pose(rng, 3, 2);
  const PoseTensor g =
      finite_diff_gradient([](const PoseTensor& q) { return 0.5 * inner(q, q); }, x, 1e-5);
  EXPECT_LE((g - x).max_abs(), 1e-9);
}

TEST(FiniteDiff, PredictorOverloadAgreesWithVjp) {
  Rng rng(11);
  const MlpPredictor f(random_mlp(rng, 5, 4, 2, 10));
  const PoseTensor x = random_pose(rng, 5, 2);
  const PoseTensor y = random_pose(rng, 4, 2);
  auto half_sq = [](const PoseTensor& p, const PoseTensor& t) { return 0.5 * inner(p - t, p - t); };
  const PoseTensor numeric = finite_diff_gradient(f, half_sq, x, y, 1e-5);
  const PoseTensor analytic = f.vjp(x, f.forward(x) - y);
  EXPECT_LT(max_relative_error(analytic, numeric), 1e-4);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff_gradient([](const PoseTensor&) { return 0.0; }, PoseTensor(1, 1), 0.0),
               Error);
}

// --------------------------------- training ---------------------------------

TEST(Train, ConstantSequencesReduceLoss) {
  std::vector<SplitSequence> data;
  for (int i = 0; i < 8; ++i) {
    const double c = 0.1 * i;
    data.push_back(testing::split(PoseTensor(3, 2, c), PoseTensor(2, 2, c)));
  }
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 100;
  cfg.batch = 4;
  const TrainOutcome out = train_mlp(data, cfg);
  ASSERT_EQ(out.loss_history.size(), cfg.epochs + 1);
  EXPECT_LT(out.loss_history.back(), out.loss_history.front());
}

TEST(Train, DeterministicForSeed) {
  const Dataset d = generate(testing::small_synth(12, 3));
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 10;
  cfg.seed = 5;
  const TrainOutcome a = train_mlp(d.sequences, cfg);
  const TrainOutcome b = train_mlp(d.sequences, cfg);
  EXPECT_EQ(a.params.w1, b.params.w1);
  EXPECT_EQ(a.params.w2, b.params.w2);
  EXPECT_EQ(a.params.b1, b.params.b1);
  EXPECT_EQ(a.params.b2, b.params.b2);
  EXPECT_EQ(a.loss_history, b.loss_history);
  cfg.seed = 6;
  EXPECT_NE(train_mlp(d.sequences, cfg).params.w1, a.params.w1);
}

TEST(Train, LossMostlyNonIncreasing) {
  const Dataset d = generate(testing::small_synth(30, 4));
  TrainConfig cfg;
  cfg.hidden = 32;
  cfg.epochs = 100;
  const TrainOutcome out = train_mlp(d.sequences, cfg);
  for (std::size_t e = 1; e < out.loss_history.size(); ++e) {
    double best = out.loss_history[0];
    for (std::size_t k = 0; k < e; ++k) best = std::min(best, out.loss_history[k]);
    EXPECT_LE(out.loss_history[e], 1.05 * best) << "epoch " << e;
  }
  EXPECT_LT(out.loss_history.back(), out.loss_history.front());
}

TEST(Train, BeatsZeroVelocityOnHeldOutOscillations) {
  const Dataset d = generate(testing::small_synth(80, 5));
  const std::vector<SplitSequence> train(d.sequences.begin(), d.sequences.begin() + 60);
  const std::vector<SplitSequence> held(d.sequences.begin() + 60, d.sequences.end());
  TrainConfig cfg;
  cfg.hidden = 32;
  cfg.epochs = 200;
  const MlpPredictor mlp(train_mlp(train, cfg).params);
  const std::size_t t_h = held.front().history.length();
  const std::size_t t_f = held.front().future.length();
  const ZeroVelocityPredictor zv(t_h, t_f, held.front().history.joints());
  double err_mlp = 0.0, err_zv = 0.0;
  for (const auto& s : held) {
    err_mlp += mpjpe(mlp.forward(s.history.frames()), s.future.frames(), t_f - 1);
    err_zv += mpjpe(zv.forward(s.history.frames()), s.future.frames(), t_f - 1);
  }
  EXPECT_LT(err_mlp, err_zv);
}

TEST(Train, RejectsBadInput) {
  TrainConfig cfg;
  EXPECT_THROW(train_mlp({}, cfg), Error);
  std::vector<SplitSequence> mixed{testing::split(PoseTensor(3, 2), PoseTensor(2, 2)),
                                   testing::split(PoseTensor(4, 2), PoseTensor(2, 2))};
  EXPECT_THROW(train_mlp(mixed, cfg), Error);
  cfg.hidden = 0;
  EXPECT_THROW(train_mlp({mixed.front()}, cfg), Error);
}

// ------------------------------- serialization ------------------------------

TEST(PredictorJson, RoundTripsEveryKind) {
  Rng rng(12);
  for (const auto& f : builtins(rng, 5, 3, 2)) {
    const auto back = predictor_from_json(nlohmann::json::parse(predictor_to_json(*f).dump()));
    EXPECT_EQ(back->kind(), f->kind());
    const PoseTensor x = random_pose(rng, 5, 2);
    EXPECT_TRUE(back->forward(x) == f->forward(x)) << f->kind();
  }
}

TEST(PredictorJson, MalformedIsParseError) {
  for (const char* text : {R"({"kind":"mlp","t_h":2,"t_f":1,"j":1,"hidden":1})",
                           R"({"t_h":2,"t_f":1,"j":1})",
                           R"({"kind":"zero_velocity","t_h":2,"t_f":-1,"j":1})",
                           R"({"kind":"mlp","t_h":2,"t_f":1,"j":1,"hidden":1,"w1":[[0,0]],"b1":[0],"w2":[[0],[0]],"b2":[0,0,0]})"}) {
    try {
      predictor_from_json(nlohmann::json::parse(text));
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::parse) << text << ": " << e.what();
    }
  }
  try {
    predictor_from_json(nlohmann::json::parse(R"({"kind":"transformer","t_h":2,"t_f":1,"j":1})"));
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
  }
}

}  // namespace
}  // namespace moperturb
