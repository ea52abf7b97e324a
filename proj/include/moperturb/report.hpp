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

// Robustness tables, per-joint perturbation statistics and physical-change
// metrics, rendered as Markdown pipe tables or CSV.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moperturb/core.hpp"

namespace moperturb {

// ---------------------------------------------------------------------------
// Statistics

struct JointStat {
  double mean = 0.0;
  /// Population standard deviation of the modulus.
  double stddev = 0.0;
};

/// Mean and population standard deviation of the per-frame perturbation
/// modulus of each joint, pooled over frames and sequences.
inline std::vector<JointStat> per_joint_stats(std::span<const PoseTensor> perturbations) {
  if (perturbations.empty()) throw Error(Errc::empty_input, "no perturbations");
  const std::size_t joints = perturbations.front().joints();
  std::vector<double> sum(joints, 0.0), count(joints, 0.0);
  for (const auto& p : perturbations) {
    if (p.joints() != joints) throw Error(Errc::shape, "perturbations differ in joint count");
    for (std::size_t t = 0; t < p.frames(); ++t)
      for (std::size_t j = 0; j < joints; ++j) {
        sum[j] += norm(p.joint(t, j));
        count[j] += 1.0;
      }
  }
  std::vector<JointStat> out(joints);
  for (std::size_t j = 0; j < joints; ++j) out[j].mean = sum[j] / count[j];
  // Second pass around the mean keeps the variance non-negative.
  std::vector<double> sq(joints, 0.0);
  for (const auto& p : perturbations)
    for (std::size_t t = 0; t < p.frames(); ++t)
      for (std::size_t j = 0; j < joints; ++j) {
        const double d = norm(p.joint(t, j)) - out[j].mean;
        sq[j] += d * d;
      }
  for (std::size_t j = 0; j < joints; ++j) out[j].stddev = std::sqrt(sq[j] / count[j]);
  return out;
}

struct PhysicalChange {
  /// Mean |BL(X) - BL(X')| per bone and frame.
  double delta_bl = 0.0;
  /// Mean modulus of the first-difference change per joint and frame.
  double delta_v = 0.0;
  /// Same for the second difference.
  double delta_a = 0.0;
};

/// Pooled over every bone/joint, frame and sequence in the two lists.
inline PhysicalChange physical_change_metrics(std::span<const PoseTensor> clean,
                                              std::span<const PoseTensor> adv,
                                              const Connectivity& conn) {
  if (clean.size() != adv.size()) throw Error(Errc::shape, "clean/perturbed count mismatch");
  if (clean.empty()) throw Error(Errc::empty_input, "no sequences");
  double bl_sum = 0.0, v_sum = 0.0, a_sum = 0.0;
  double bl_n = 0.0, v_n = 0.0, a_n = 0.0;
  for (std::size_t s = 0; s < clean.size(); ++s) {
    const PoseTensor& x = clean[s];
    const PoseTensor& xp = adv[s];
    if (!x.same_shape(xp)) throw Error(Errc::shape, "clean and perturbed shapes differ");
    if (x.frames() < 2)
      throw Error(Errc::insufficient_history, "velocity change needs at least 2 frames");
    const BoneLengths a = bone_lengths(x, conn);
    const BoneLengths b = bone_lengths(xp, conn);
    for (std::size_t i = 0; i < a.values.size(); ++i) bl_sum += std::abs(a.values[i] - b.values[i]);
    bl_n += static_cast<double>(a.values.size());
    const PoseTensor diff = xp - x;
    for (std::size_t order = 1; order <= 2 && order < x.frames(); ++order) {
      const PoseTensor d = temporal_derivative(diff, order);
      double& sum = order == 1 ? v_sum : a_sum;
      double& n = order == 1 ? v_n : a_n;
      for (std::size_t t = 0; t < d.frames(); ++t)
        for (std::size_t j = 0; j < d.joints(); ++j) sum += norm(d.joint(t, j));
      n += static_cast<double>(d.frames() * d.joints());
    }
  }
  // Two-frame clips have no acceleration; the change is reported as NaN.
  return {bl_n > 0.0 ? bl_sum / bl_n : 0.0, v_sum / v_n,
          a_n > 0.0 ? a_sum / a_n : std::numeric_limits<double>::quiet_NaN()};
}

inline PhysicalChange physical_change_metrics(const PoseTensor& clean, const PoseTensor& adv,
                                              const Connectivity& conn) {
  return physical_change_metrics(std::span<const PoseTensor>(&clean, 1),
                                 std::span<const PoseTensor>(&adv, 1), conn);
}

// ---------------------------------------------------------------------------
// Formatting

/// Fixed-point rendering with half-up rounding.
inline std::string format_fixed(double value, int decimals) {
  if (!std::isfinite(value)) return "n/a";
  const double scale = std::pow(10.0, decimals);
  double rounded = std::floor(value * scale + 0.5) / scale;
  if (rounded == 0.0) rounded = 0.0;  // no "-0.0"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, rounded);
  return buf;
}

/// "191.0%↑" for growth, "12.5%↓" for a decrease.
inline std::string format_growth(double percent) {
  const std::string magnitude = format_fixed(std::abs(percent), 1);
  const bool down = percent < 0.0 && magnitude != "0.0";
  return magnitude + (down ? "%↓" : "%↑");
}

/// "35.5 (191.0%↑)"
inline std::string format_error_with_growth(double clean, double adv) {
  return format_fixed(adv, 1) + " (" + format_growth(growth_rate(clean, adv)) + ")";
}

struct TextTable {
  std::string title;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  /// Same shape as rows; true marks a highlighted cell.
  std::vector<std::vector<bool>> bold;
};

inline std::string render_markdown(const TextTable& table) {
  std::string out;
  if (!table.title.empty()) out += "### " + table.title + "\n\n";
  auto line = [&](const std::vector<std::string>& cells, const std::vector<bool>* bold) {
    out += "|";
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const bool b = bold && c < bold->size() && (*bold)[c];
      out += " " + (b ? "**" + cells[c] + "**" : cells[c]) + " |";
    }
    out += "\n";
  };
  line(table.header, nullptr);
  out += "|";
  for (std::size_t c = 0; c < table.header.size(); ++c) out += c == 0 ? " --- |" : " ---: |";
  out += "\n";
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    line(table.rows[r], r < table.bold.size() ? &table.bold[r] : nullptr);
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// RFC-4180 style; highlighting is not representable and is dropped.
inline std::string render_csv(const TextTable& table) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out += ",";
      out += csv_field(cells[c]);
    }
    out += "\r\n";
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
  return out;
}

enum class TableFormat { markdown, csv };

inline std::string render(const TextTable& table, TableFormat format) {
  return format == TableFormat::csv ? render_csv(table) : render_markdown(table);
}

namespace detail {

inline std::vector<std::string> interval_header(const std::string& first,
                                                std::span<const double> intervals) {
  std::vector<std::string> h{first};
  for (double ms : intervals) h.push_back(format_fixed(ms, 0));
  return h;
}

// Marks the extreme of each column over rows [first_row, rows.size()).
inline void mark_column_extreme(const std::vector<std::vector<double>>& values,
                                std::vector<std::vector<bool>>& bold, std::size_t column,
                                std::size_t first_row, bool maximum) {
  std::optional<std::size_t> best;
  for (std::size_t r = first_row; r < values.size(); ++r) {
    if (!best || (maximum ? values[r][column] > values[*best][column]
                          : values[r][column] < values[*best][column]))
      best = r;
  }
  if (best) bold[*best][column + 1] = true;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Tables

struct RobustnessRow {
  std::string label;
  std::vector<double> mpjpe;
  /// Growth over the clean row; absent for the clean row and, in paper style,
  /// for the intermediate epsilon rows.
  std::optional<std::vector<double>> growth;
};

struct RobustnessTable {
  std::vector<double> intervals_ms;
  std::vector<RobustnessRow> rows;  // clean first

  TextTable to_text(const std::string& title = "") const {
    TextTable t{title, detail::interval_header("Intervals(ms)", intervals_ms), {}, {}};
    std::vector<std::vector<double>> values;
    for (const auto& row : rows) {
      std::vector<std::string> cells{row.label};
      for (std::size_t c = 0; c < row.mpjpe.size(); ++c) {
        std::string cell = format_fixed(row.mpjpe[c], 1);
        if (row.growth) cell += " (" + format_growth((*row.growth)[c]) + ")";
        cells.push_back(std::move(cell));
      }
      t.rows.push_back(std::move(cells));
      t.bold.emplace_back(row.mpjpe.size() + 1, false);
      values.push_back(row.mpjpe);
    }
    for (std::size_t c = 0; c < intervals_ms.size(); ++c)
      detail::mark_column_extreme(values, t.bold, c, 1, true);
    return t;
  }
};

struct EpsilonErrors {
  double epsilon = 0.0;
  std::vector<double> mpjpe;  // one per interval
};

/// Clean row followed by one row per epsilon (ascending). Growth is attached
/// to the smallest and largest epsilon rows, or to every row with
/// `growth_on_all_rows`.
inline RobustnessTable robustness_table(const std::vector<double>& clean,
                                        std::vector<EpsilonErrors> adv,
                                        const std::vector<double>& intervals_ms,
                                        bool growth_on_all_rows = false) {
  if (clean.size() != intervals_ms.size())
    throw Error(Errc::shape, "clean row does not match the interval list");
  for (const auto& r : adv)
    if (r.mpjpe.size() != intervals_ms.size())
      throw Error(Errc::shape, "row for epsilon " + format_fixed(r.epsilon, 3) +
                                   " does not match the interval list");
  std::stable_sort(adv.begin(), adv.end(),
                   [](const EpsilonErrors& a, const EpsilonErrors& b) { return a.epsilon < b.epsilon; });
  RobustnessTable table{intervals_ms, {{"clean", clean, std::nullopt}}};
  for (std::size_t i = 0; i < adv.size(); ++i) {
    RobustnessRow row{"eps=" + format_fixed(adv[i].epsilon, 2), adv[i].mpjpe, std::nullopt};
    if (growth_on_all_rows || i == 0 || i + 1 == adv.size()) {
      std::vector<double> g;
      for (std::size_t c = 0; c < clean.size(); ++c) g.push_back(growth_rate(clean[c], adv[i].mpjpe[c]));
      row.growth = std::move(g);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline const std::vector<std::string>& partition_names() {
  static const std::vector<std::string> names{"whole", "front", "middle", "rear", "last"};
  return names;
}

/// One row per attacked history part; the per-column maximum over the parts
/// is highlighted. A "clean" entry, when present, is listed first.
inline TextTable frame_vulnerability_table(const std::map<std::string, std::vector<double>>& by_part,
                                           const std::vector<double>& intervals_ms,
                                           const std::string& title = "") {
  std::vector<std::string> missing;
  for (const auto& name : partition_names())
    if (!by_part.count(name)) missing.push_back(name);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(Errc::missing_partition, "missing results for: " + list);
  }
  TextTable t{title, detail::interval_header("Attacked part", intervals_ms), {}, {}};
  std::vector<std::vector<double>> values;
  std::vector<std::string> order;
  const bool has_clean = by_part.count("clean") > 0;
  if (has_clean) order.push_back("clean");
  for (const auto& n : partition_names()) order.push_back(n);
  for (const auto& name : order) {
    const auto& v = by_part.at(name);
    if (v.size() != intervals_ms.size())
      throw Error(Errc::shape, "row '" + name + "' does not match the interval list");
    std::vector<std::string> cells{name};
    for (double x : v) cells.push_back(format_fixed(x, 1));
    t.rows.push_back(std::move(cells));
    t.bold.emplace_back(v.size() + 1, false);
    values.push_back(v);
  }
  for (std::size_t c = 0; c < intervals_ms.size(); ++c)
    detail::mark_column_extreme(values, t.bold, c, has_clean ? 1 : 0, true);
  return t;
}

inline TextTable per_joint_table(const std::vector<JointStat>& stats,
                                 const std::vector<std::string>& joint_names,
                                 const std::string& title = "") {
  TextTable t{title, {"joint", "mu", "sigma (population std. dev.)"}, {}, {}};
  std::vector<std::vector<double>> values;
  for (std::size_t j = 0; j < stats.size(); ++j) {
    const std::string name = j < joint_names.size() ? joint_names[j] : "joint" + std::to_string(j);
    t.rows.push_back({name, format_fixed(stats[j].mean, 3), format_fixed(stats[j].stddev, 3)});
    t.bold.emplace_back(3, false);
    values.push_back({stats[j].mean, stats[j].stddev});
  }
  detail::mark_column_extreme(values, t.bold, 0, 0, true);
  detail::mark_column_extreme(values, t.bold, 1, 0, true);
  return t;
}

struct ConstraintRow {
  std::string label;
  std::vector<double> mpjpe;
  std::optional<PhysicalChange> change;  // absent for the clean row
};

/// Errors per interval plus the mean bone-length, velocity and acceleration
/// changes; the largest error and the smallest change per column are marked.
inline TextTable physical_change_table(const std::vector<ConstraintRow>& rows,
                                       const std::vector<double>& intervals_ms,
                                       const std::string& title = "") {
  TextTable t{title, detail::interval_header("Constraints", intervals_ms), {}, {}};
  for (const char* h : {"dBL", "dV", "da"}) t.header.push_back(h);
  const std::size_t n_int = intervals_ms.size();
  std::vector<std::size_t> change_rows;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.mpjpe.size() != n_int)
      throw Error(Errc::shape, "row '" + row.label + "' does not match the interval list");
    std::vector<std::string> cells{row.label};
    for (double x : row.mpjpe) cells.push_back(format_fixed(x, 1));
    if (row.change) {
      cells.push_back(format_fixed(row.change->delta_bl, 2));
      cells.push_back(format_fixed(row.change->delta_v, 2));
      cells.push_back(format_fixed(row.change->delta_a, 2));
      change_rows.push_back(r);
    } else {
      for (int k = 0; k < 3; ++k) cells.push_back("-");
    }
    t.rows.push_back(std::move(cells));
    t.bold.emplace_back(n_int + 4, false);
  }
  auto mark = [&](std::size_t col, bool maximum, auto value_of) {
    std::optional<std::size_t> best;
    for (std::size_t r : change_rows) {
      const double v = value_of(rows[r]);
      if (!best || (maximum ? v > value_of(rows[*best]) : v < value_of(rows[*best]))) best = r;
    }
    if (best) t.bold[*best][col] = true;
  };
  for (std::size_t c = 0; c < n_int; ++c)
    mark(c + 1, true, [c](const ConstraintRow& r) { return r.mpjpe[c]; });
  mark(n_int + 1, false, [](const ConstraintRow& r) { return r.change->delta_bl; });
  mark(n_int + 2, false, [](const ConstraintRow& r) { return r.change->delta_v; });
  mark(n_int + 3, false, [](const ConstraintRow& r) { return r.change->delta_a; });
  return t;
}

}  // namespace moperturb
