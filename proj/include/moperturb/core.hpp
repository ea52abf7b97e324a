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

// Skeleton sequence data model, temporal derivatives, bone lengths and the
// evaluation metrics (MPJPE, attack success rate, growth rate).

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moperturb/error.hpp"

namespace moperturb {

using Vec3 = std::array<double, 3>;

inline double norm(const Vec3& v) {
  return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
}

inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}

/// Dense T x J x 3 block of joint coordinates stored frame-major, joint-major,
/// axis-minor. This is the working representation for histories, futures,
/// predictions, perturbations and gradients alike.
class PoseTensor {
 public:
  PoseTensor() = default;
  PoseTensor(std::size_t frames, std::size_t joints, double fill = 0.0)
      : frames_(frames), joints_(joints), data_(frames * joints * 3, fill) {}

  std::size_t frames() const noexcept { return frames_; }
  std::size_t joints() const noexcept { return joints_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t t, std::size_t j, std::size_t axis) {
    return data_[(t * joints_ + j) * 3 + axis];
  }
  double operator()(std::size_t t, std::size_t j, std::size_t axis) const {
    return data_[(t * joints_ + j) * 3 + axis];
  }

  Vec3 joint(std::size_t t, std::size_t j) const {
    const double* p = &data_[(t * joints_ + j) * 3];
    return {p[0], p[1], p[2]};
  }
  void set_joint(std::size_t t, std::size_t j, const Vec3& v) {
    double* p = &data_[(t * joints_ + j) * 3];
    p[0] = v[0];
    p[1] = v[1];
    p[2] = v[2];
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  /// Frames [begin, end) as a new tensor.
  PoseTensor frame_range(std::size_t begin, std::size_t end) const {
    PoseTensor out(end - begin, joints_);
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * joints_ * 3),
              data_.begin() + static_cast<std::ptrdiff_t>(end * joints_ * 3),
              out.data_.begin());
    return out;
  }

  bool same_shape(const PoseTensor& o) const noexcept {
    return frames_ == o.frames_ && joints_ == o.joints_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  PoseTensor& operator+=(const PoseTensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  PoseTensor& operator-=(const PoseTensor& o) {
    require_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  PoseTensor& operator*=(double k) {
    for (double& v : data_) v *= k;
    return *this;
  }

  friend PoseTensor operator+(PoseTensor a, const PoseTensor& b) { return a += b; }
  friend PoseTensor operator-(PoseTensor a, const PoseTensor& b) { return a -= b; }
  friend PoseTensor operator*(PoseTensor a, double k) { return a *= k; }
  friend PoseTensor operator*(double k, PoseTensor a) { return a *= k; }

  /// Bitwise-exact comparison of shape and contents.
  friend bool operator==(const PoseTensor& a, const PoseTensor& b) {
    return a.frames_ == b.frames_ && a.joints_ == b.joints_ && a.data_ == b.data_;
  }

 private:
  void require_same_shape(const PoseTensor& o) const {
    if (!same_shape(o)) throw Error(Errc::shape, "pose tensor shapes differ");
  }

  std::size_t frames_ = 0;
  std::size_t joints_ = 0;
  std::vector<double> data_;
};

/// A validated motion clip: T >= 1 frames of J >= 1 joints with finite
/// coordinates, sampled at `fps`.
class MotionSequence {
 public:
  MotionSequence() = default;
  explicit MotionSequence(PoseTensor frames, double fps = 25.0,
                          std::vector<std::string> joint_names = {})
      : frames_(std::move(frames)), fps_(fps), joint_names_(std::move(joint_names)) {
    validate();
  }

  const PoseTensor& frames() const noexcept { return frames_; }
  double fps() const noexcept { return fps_; }
  const std::vector<std::string>& joint_names() const noexcept { return joint_names_; }
  std::size_t length() const noexcept { return frames_.frames(); }
  std::size_t joints() const noexcept { return frames_.joints(); }

  friend bool operator==(const MotionSequence& a, const MotionSequence& b) {
    return a.frames_ == b.frames_ && a.fps_ == b.fps_ && a.joint_names_ == b.joint_names_;
  }

 private:
  void validate() const {
    if (frames_.frames() < 1 || frames_.joints() < 1)
      throw Error(Errc::validation, "motion sequence needs at least one frame and one joint");
    if (!(fps_ > 0.0) || !std::isfinite(fps_))
      throw Error(Errc::validation, "fps must be a positive finite number");
    if (!frames_.all_finite())
      throw Error(Errc::validation, "motion sequence contains non-finite coordinates");
    if (!joint_names_.empty() && joint_names_.size() != frames_.joints())
      throw Error(Errc::validation, "joint_names length does not match joint count");
  }

  PoseTensor frames_;
  double fps_ = 25.0;
  std::vector<std::string> joint_names_;
};

struct Bone {
  std::size_t parent = 0;
  std::size_t child = 0;
  friend bool operator==(const Bone&, const Bone&) = default;
};

/// Skeleton graph as an ordered bone list.
class Connectivity {
 public:
  Connectivity() = default;
  explicit Connectivity(std::vector<Bone> bones) : bones_(std::move(bones)) {
    for (std::size_t i = 0; i < bones_.size(); ++i) {
      if (bones_[i].parent == bones_[i].child)
        throw Error(Errc::connectivity,
                    "bone " + std::to_string(i) + " connects joint " +
                        std::to_string(bones_[i].parent) + " to itself");
      for (std::size_t k = 0; k < i; ++k) {
        const bool same = (bones_[k].parent == bones_[i].parent && bones_[k].child == bones_[i].child) ||
                          (bones_[k].parent == bones_[i].child && bones_[k].child == bones_[i].parent);
        if (same)
          throw Error(Errc::connectivity, "duplicate bone at index " + std::to_string(i));
      }
    }
  }

  const std::vector<Bone>& bones() const noexcept { return bones_; }
  std::size_t size() const noexcept { return bones_.size(); }

  void check_joints(std::size_t joints) const {
    for (std::size_t i = 0; i < bones_.size(); ++i) {
      if (bones_[i].parent >= joints || bones_[i].child >= joints)
        throw Error(Errc::connectivity, "bone " + std::to_string(i) +
                                            " references a joint outside [0, " +
                                            std::to_string(joints) + ")");
    }
  }

  friend bool operator==(const Connectivity&, const Connectivity&) = default;

 private:
  std::vector<Bone> bones_;
};

/// History/future pair for one clip.
struct SplitSequence {
  MotionSequence history;
  MotionSequence future;
  std::string label;

  void validate(std::size_t n_order = 0) const {
    if (history.joints() != future.joints())
      throw Error(Errc::shape, "history and future joint counts differ");
    if (history.fps() != future.fps())
      throw Error(Errc::validation, "history and future fps differ");
    if (history.length() < n_order + 1)
      throw Error(Errc::insufficient_history,
                  "history of " + std::to_string(history.length()) +
                      " frames is too short for derivative order " + std::to_string(n_order));
  }

  friend bool operator==(const SplitSequence&, const SplitSequence&) = default;
};

// ---------------------------------------------------------------------------
// Kinematics

/// n-th forward difference along time: d_t = x_{t+1} - x_t applied n times.
inline PoseTensor temporal_derivative(const PoseTensor& x, std::size_t n) {
  if (x.frames() == 0 || n > x.frames() - 1)
    throw Error(Errc::invalid_order, "derivative order " + std::to_string(n) +
                                         " needs more than " + std::to_string(x.frames()) +
                                         " frames");
  PoseTensor cur = x;
  for (std::size_t k = 0; k < n; ++k) {
    PoseTensor next(cur.frames() - 1, cur.joints());
    auto src = cur.data();
    auto dst = next.data();
    const std::size_t stride = cur.joints() * 3;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i + stride] - src[i];
    cur = std::move(next);
  }
  return cur;
}

inline PoseTensor temporal_derivative(const MotionSequence& seq, std::size_t n) {
  return temporal_derivative(seq.frames(), n);
}

/// Adjoint of temporal_derivative(., n): maps a (T-n) x J x 3 cotangent back to
/// T x J x 3.
inline PoseTensor temporal_derivative_adjoint(const PoseTensor& g, std::size_t n) {
  PoseTensor cur = g;
  const std::size_t stride = g.joints() * 3;
  for (std::size_t k = 0; k < n; ++k) {
    PoseTensor prev(cur.frames() + 1, cur.joints());
    auto src = cur.data();
    auto dst = prev.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
      dst[i] -= src[i];
      dst[i + stride] += src[i];
    }
    cur = std::move(prev);
  }
  return cur;
}

/// Matrix of bone lengths, row-major T x L.
struct BoneLengths {
  std::size_t frames = 0;
  std::size_t bones = 0;
  std::vector<double> values;

  double operator()(std::size_t t, std::size_t l) const { return values[t * bones + l]; }
};

inline BoneLengths bone_lengths(const PoseTensor& x, const Connectivity& conn) {
  conn.check_joints(x.joints());
  BoneLengths out{x.frames(), conn.size(), std::vector<double>(x.frames() * conn.size())};
  for (std::size_t t = 0; t < x.frames(); ++t) {
    for (std::size_t l = 0; l < conn.size(); ++l) {
      const Bone& b = conn.bones()[l];
      out.values[t * conn.size() + l] = norm(x.joint(t, b.parent) - x.joint(t, b.child));
    }
  }
  return out;
}

inline BoneLengths bone_lengths(const MotionSequence& seq, const Connectivity& conn) {
  return bone_lengths(seq.frames(), conn);
}

// ---------------------------------------------------------------------------
// Metrics

/// Mean over joints of the Euclidean joint error at frame t.
inline double mpjpe(const PoseTensor& pred, const PoseTensor& truth, std::size_t t) {
  if (!pred.same_shape(truth))
    throw Error(Errc::shape, "prediction and ground truth shapes differ");
  if (t >= pred.frames())
    throw Error(Errc::range, "frame index " + std::to_string(t) + " outside horizon of " +
                                 std::to_string(pred.frames()));
  double sum = 0.0;
  for (std::size_t j = 0; j < pred.joints(); ++j) sum += norm(pred.joint(t, j) - truth.joint(t, j));
  return sum / static_cast<double>(pred.joints());
}

inline double mpjpe(const MotionSequence& pred, const MotionSequence& truth, std::size_t t) {
  return mpjpe(pred.frames(), truth.frames(), t);
}

/// MPJPE at every frame of the horizon.
inline std::vector<double> mpjpe_per_frame(const PoseTensor& pred, const PoseTensor& truth) {
  std::vector<double> out(pred.frames());
  for (std::size_t t = 0; t < pred.frames(); ++t) out[t] = mpjpe(pred, truth, t);
  return out;
}

/// 0-based frame index of a time offset into the prediction horizon:
/// round(ms * fps / 1000) - 1, so 160 ms at 25 fps is the fourth frame.
inline std::size_t interval_to_frame(double interval_ms, double fps, std::size_t horizon) {
  const long long idx = std::llround(interval_ms * fps / 1000.0) - 1;
  if (idx < 0 || static_cast<std::size_t>(idx) >= horizon)
    throw Error(Errc::range, "interval " + std::to_string(interval_ms) +
                                 " ms maps outside a horizon of " + std::to_string(horizon) +
                                 " frames");
  return static_cast<std::size_t>(idx);
}

struct IntervalError {
  double interval_ms = 0.0;
  double mpjpe = 0.0;
};

inline std::vector<IntervalError> mpjpe_at_intervals(const PoseTensor& pred, const PoseTensor& truth,
                                                     double fps,
                                                     std::span<const double> intervals_ms) {
  std::vector<IntervalError> out;
  out.reserve(intervals_ms.size());
  for (double ms : intervals_ms)
    out.push_back({ms, mpjpe(pred, truth, interval_to_frame(ms, fps, pred.frames()))});
  return out;
}

/// Dataset-level MPJPE at frame t: the average of per-sequence values.
inline double mean_mpjpe(std::span<const PoseTensor> preds, std::span<const PoseTensor> truths,
                         std::size_t t) {
  if (preds.size() != truths.size()) throw Error(Errc::shape, "prediction/truth count mismatch");
  if (preds.empty()) throw Error(Errc::empty_input, "no sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += mpjpe(preds[i], truths[i], t);
  return sum / static_cast<double>(preds.size());
}

/// Attack success rate: fraction of correctly classified clean samples that
/// become misclassified under attack.
inline double asr(const std::vector<bool>& clean_correct, const std::vector<bool>& adv_correct) {
  if (clean_correct.size() != adv_correct.size())
    throw Error(Errc::shape, "clean and adversarial label lists differ in length");
  std::size_t right = 0;
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < clean_correct.size(); ++i) {
    if (!clean_correct[i]) continue;
    ++right;
    if (!adv_correct[i]) ++flipped;
  }
  if (right == 0) throw Error(Errc::undefined_rate, "no correctly classified clean samples");
  return static_cast<double>(flipped) / static_cast<double>(right);
}

/// Signed percentage change from the clean error.
inline double growth_rate(double clean_err, double adv_err) {
  if (!(clean_err > 0.0)) throw Error(Errc::division, "clean error must be positive");
  return (adv_err - clean_err) / clean_err * 100.0;
}

}  // namespace moperturb
