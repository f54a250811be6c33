// Copyright 2026 The mtdetect Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Stack detectors over a bank of S blacklist detectors.
//
// A trial's detector scores reduce to y* (the maximum) and h* (the detector
// attaining it). For a threshold theta:
//
//   Top-S  miss : blacklist trial with y* < theta
//   Top-1  miss : blacklist trial with y* < theta, or whose h* is not its
//                 true speaker (a confusion error)
//   false alarm : background trial with y* > theta  (shared by both)
//
// A trial with y* == theta is neither accepted nor rejected. A confused
// trial is always an error, so it is a Top-1 miss at every theta.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mtdetect/common.hpp"
#include "mtdetect/score_matrix.hpp"

namespace mtd {

/// Ground truth for one trial: background (no index) or the 0-based index
/// of the true blacklist detector.
struct TrialLabel {
  std::string utterance_id;
  std::optional<std::size_t> truth;

  bool is_blacklist() const { return truth.has_value(); }
};

struct StackScore {
  double y_star = 0.0;
  std::size_t h_star = 0;  // 0-based detector index

  friend bool operator==(const StackScore&, const StackScore&) = default;
};

enum class StackMode { kTopS, kTop1 };

inline std::string to_string(StackMode m) { return m == StackMode::kTopS ? "top_s" : "top_1"; }

struct OperatingPoint {
  double theta = 0.0;
  double p_miss = 0.0;
  double p_fa = 0.0;
  std::size_t misses = 0;
  std::size_t false_alarms = 0;

  friend bool operator==(const OperatingPoint&, const OperatingPoint&) = default;
};

struct DetectorReport {
  StackMode mode = StackMode::kTopS;
  std::vector<OperatingPoint> operating_points;  // ascending theta
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::size_t blacklist_trials = 0;
  std::size_t background_trials = 0;

  friend bool operator==(const DetectorReport&, const DetectorReport&) = default;
};

/// Which thresholds a sweep evaluates. The default sweeps every distinct
/// observed y* plus -inf and +inf; the rates are step functions that only
/// change at observed scores, so nothing is lost.
struct ThresholdPolicy {
  std::optional<std::vector<double>> explicit_thresholds;

  static ThresholdPolicy observed() { return {}; }
  static ThresholdPolicy at(std::vector<double> thresholds) {
    return {std::move(thresholds)};
  }
};

/// y* and h* of one row; ties go to the lowest index.
inline StackScore stack_reduce_row(std::span<const double> row) {
  if (row.empty()) throw ArgumentError("stack_reduce: no detectors");
  StackScore s{row[0], 0};
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > s.y_star) s = {row[i], i};
  return s;
}

inline std::vector<StackScore> stack_reduce(const ScoreMatrix& m) {
  if (m.num_detectors() == 0) throw ArgumentError("stack_reduce: empty detector set");
  if (m.first_non_finite() != m.values().size())
    throw ArgumentError("stack_reduce: score matrix contains a non-finite value");
  std::vector<StackScore> out;
  out.reserve(m.num_trials());
  for (std::size_t t = 0; t < m.num_trials(); ++t) out.push_back(stack_reduce_row(m.row(t)));
  return out;
}

/// Equal error rate from a theta-ascending list of operating points.
///
/// Locates the first adjacent pair where p_miss - p_fa changes sign and
/// interpolates both rates linearly to the crossing. A point with
/// p_miss == p_fa exactly is returned as is. The threshold is interpolated
/// the same way; when one side of the bracket is infinite the finite side
/// is reported. If the rates never cross, the point with the smallest gap
/// is used and the EER is the mean of its two rates.
inline std::pair<double, double> eer_from_points(std::span<const OperatingPoint> points) {
  if (points.empty()) throw ArgumentError("eer_from_points: no operating points");
  auto gap = [](const OperatingPoint& p) { return p.p_miss - p.p_fa; };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = gap(points[i]);
    if (d == 0.0) return {points[i].p_miss, points[i].theta};
    if (d > 0.0) {
      if (i == 0) break;
      const auto& a = points[i - 1];
      const auto& b = points[i];
      const double da = gap(a);  // < 0
      const double t = da / (da - d);
      const double eer = a.p_miss + t * (b.p_miss - a.p_miss);
      double theta;
      if (std::isfinite(a.theta) && std::isfinite(b.theta))
        theta = a.theta + t * (b.theta - a.theta);
      else if (std::isfinite(a.theta))
        theta = a.theta;
      else
        theta = b.theta;
      return {eer, theta};
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < points.size(); ++i)
    if (std::abs(gap(points[i])) < std::abs(gap(points[best]))) best = i;
  return {0.5 * (points[best].p_miss + points[best].p_fa), points[best].theta};
}

namespace detail {

inline std::vector<double> sweep_thresholds(const std::vector<double>& sorted_all,
                                            const ThresholdPolicy& policy) {
  std::vector<double> thetas;
  if (policy.explicit_thresholds) {
    thetas = *policy.explicit_thresholds;
    for (double th : thetas)
      if (std::isnan(th)) throw ArgumentError("sweep: NaN threshold");
    std::sort(thetas.begin(), thetas.end());
    thetas.erase(std::unique(thetas.begin(), thetas.end()), thetas.end());
    if (thetas.empty()) throw ArgumentError("sweep: empty threshold list");
    return thetas;
  }
  thetas.reserve(sorted_all.size() + 2);
  thetas.push_back(-std::numeric_limits<double>::infinity());
  for (double v : sorted_all)
    if (v != thetas.back()) thetas.push_back(v);
  thetas.push_back(std::numeric_limits<double>::infinity());
  return thetas;
}

inline DetectorReport sweep(std::span<const StackScore> stack,
                            std::span<const TrialLabel> labels,
                            const ThresholdPolicy& policy, StackMode mode) {
  if (stack.size() != labels.size())
    throw ArgumentError("sweep: " + std::to_string(stack.size()) + " stack scores but " +
                        std::to_string(labels.size()) + " labels");
  // Blacklist trials that count as misses only below theta (all of them for
  // Top-S; the correctly identified ones for Top-1).
  std::vector<double> detectable, background, all;
  std::size_t n_blacklist = 0, confused = 0;
  all.reserve(stack.size());
  for (std::size_t t = 0; t < stack.size(); ++t) {
    const double y = stack[t].y_star;
    if (!std::isfinite(y)) throw ArgumentError("sweep: non-finite y*");
    all.push_back(y);
    if (labels[t].truth) {
      ++n_blacklist;
      if (mode == StackMode::kTop1 && stack[t].h_star != *labels[t].truth) ++confused;
      else detectable.push_back(y);
    } else {
      background.push_back(y);
    }
  }
  if (n_blacklist == 0) throw ArgumentError("sweep: no blacklist trials");
  if (background.empty()) throw ArgumentError("sweep: no background trials");
  std::sort(detectable.begin(), detectable.end());
  std::sort(background.begin(), background.end());
  std::sort(all.begin(), all.end());

  DetectorReport report;
  report.mode = mode;
  report.blacklist_trials = n_blacklist;
  report.background_trials = background.size();
  const auto thetas = sweep_thresholds(all, policy);
  report.operating_points.reserve(thetas.size());
  const double nb = static_cast<double>(n_blacklist);
  const double nn = static_cast<double>(background.size());
  for (double theta : thetas) {
    const auto below = static_cast<std::size_t>(
        std::lower_bound(detectable.begin(), detectable.end(), theta) - detectable.begin());
    const auto above = static_cast<std::size_t>(
        background.end() - std::upper_bound(background.begin(), background.end(), theta));
    OperatingPoint op;
    op.theta = theta;
    op.misses = below + confused;
    op.false_alarms = above;
    op.p_miss = static_cast<double>(op.misses) / nb;
    op.p_fa = static_cast<double>(op.false_alarms) / nn;
    report.operating_points.push_back(op);
  }
  auto [eer, theta] = eer_from_points(report.operating_points);
  report.eer = eer;
  report.eer_threshold = theta;
  return report;
}

}  // namespace detail

/// Multi-target cohort detection: is the speaker anyone on the blacklist?
inline DetectorReport sweep_top_s(std::span<const StackScore> stack,
                                  std::span<const TrialLabel> labels,
                                  const ThresholdPolicy& policy = ThresholdPolicy::observed()) {
  return detail::sweep(stack, labels, policy, StackMode::kTopS);
}

/// Multi-target identification: detection plus the right blacklist speaker.
inline DetectorReport sweep_top_1(std::span<const StackScore> stack,
                                  std::span<const TrialLabel> labels,
                                  const ThresholdPolicy& policy = ThresholdPolicy::observed()) {
  return detail::sweep(stack, labels, policy, StackMode::kTop1);
}

/// Index range [lo, hi] of the operating points bracketing the EER crossing
/// (lo == hi on an exact tie).
inline std::pair<std::size_t, std::size_t> eer_bracket(std::span<const OperatingPoint> points) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = points[i].p_miss - points[i].p_fa;
    if (d == 0.0) return {i, i};
    if (d > 0.0) return {i == 0 ? 0 : i - 1, i};
  }
  return {points.size() - 1, points.size() - 1};
}

/// Rates at `p` read off the straight line between kept points a and b
/// (linear in theta). A segment with an infinite end is flat at a.
inline std::pair<double, double> interpolate_rates(const OperatingPoint& a,
                                                   const OperatingPoint& b,
                                                   const OperatingPoint& p) {
  double w = 0.0;
  if (std::isfinite(a.theta) && std::isfinite(b.theta) && b.theta > a.theta)
    w = (p.theta - a.theta) / (b.theta - a.theta);
  return {a.p_miss + w * (b.p_miss - a.p_miss), a.p_fa + w * (b.p_fa - a.p_fa)};
}

/// Down-samples a report's DET staircase to at most `max_points` points.
///
/// The first and last points and the EER bracket are always kept (in that
/// priority when max_points is smaller than that set). Between kept points
/// the curve is read by interpolate_rates; the rest of the points are chosen
/// greedily so that this reading stays within a tolerance of every dropped
/// point, and the tolerance is the smallest one that fits the budget.
inline std::vector<OperatingPoint> det_points(const DetectorReport& report,
                                              std::size_t max_points) {
  if (max_points < 2) throw ArgumentError("det_points: max_points must be >= 2");
  const auto& pts = report.operating_points;
  const std::size_t n = pts.size();
  if (n <= max_points) return pts;

  std::vector<std::size_t> forced = {0, n - 1};
  auto [lo, hi] = eer_bracket(pts);
  for (std::size_t idx : {lo, hi})
    if (forced.size() < max_points &&
        std::find(forced.begin(), forced.end(), idx) == forced.end())
      forced.push_back(idx);
  std::sort(forced.begin(), forced.end());

  auto fits = [&](std::size_t a, std::size_t b, double tol) {
    for (std::size_t j = a + 1; j < b; ++j) {
      auto [miss, fa] = interpolate_rates(pts[a], pts[b], pts[j]);
      if (std::abs(miss - pts[j].p_miss) > tol || std::abs(fa - pts[j].p_fa) > tol) return false;
    }
    return true;
  };
  // Longest segment from `a` (not past `limit`) that fits: galloping probe,
  // then bisection. The returned end always fits.
  auto reach = [&](std::size_t a, std::size_t limit, double tol) {
    std::size_t good = a + 1, step = 1;
    while (good < limit) {
      const std::size_t probe = std::min(limit, good + step);
      if (!fits(a, probe, tol)) {
        std::size_t bad = probe;
        while (bad - good > 1) {
          const std::size_t mid = good + (bad - good) / 2;
          if (fits(a, mid, tol)) good = mid;
          else bad = mid;
        }
        return good;
      }
      good = probe;
      step *= 2;
    }
    return good;
  };
  auto select = [&](double tol) {
    std::vector<std::size_t> keep = {0};
    for (std::size_t f = 1; f < forced.size(); ++f) {
      while (keep.back() < forced[f]) keep.push_back(reach(keep.back(), forced[f], tol));
      if (keep.size() > max_points) break;
    }
    return keep;
  };

  double lo_tol = 0.0, hi_tol = 1.0;
  auto best = select(hi_tol);
  for (int iter = 0; iter < 40; ++iter) {
    const double mid = 0.5 * (lo_tol + hi_tol);
    auto keep = select(mid);
    if (keep.size() <= max_points) {
      hi_tol = mid;
      best = std::move(keep);
    } else {
      lo_tol = mid;
    }
  }
  std::vector<OperatingPoint> out;
  out.reserve(best.size());
  for (auto idx : best) out.push_back(pts[idx]);
  return out;
}

/// Maps raw (utterance_id, truth speaker or nothing) pairs onto the trial
/// order and detector ordering of a score matrix.
inline std::vector<TrialLabel> resolve_labels(
    const std::vector<std::string>& trial_ids,
    const std::vector<std::pair<std::string, std::optional<std::string>>>& raw,
    const std::vector<std::string>& detector_ids) {
  std::unordered_map<std::string, const std::optional<std::string>*> by_utt;
  for (const auto& [utt, truth] : raw)
    if (!by_utt.emplace(utt, &truth).second)
      throw DataError("duplicate label for trial '" + utt + "'");
  std::unordered_map<std::string, std::size_t> det_index;
  for (std::size_t i = 0; i < detector_ids.size(); ++i) det_index.emplace(detector_ids[i], i);
  std::vector<TrialLabel> labels;
  labels.reserve(trial_ids.size());
  for (const auto& utt : trial_ids) {
    auto it = by_utt.find(utt);
    if (it == by_utt.end()) throw DataError("missing label for trial '" + utt + "'");
    TrialLabel label{utt, std::nullopt};
    if (*it->second) {
      auto d = det_index.find(**it->second);
      if (d == det_index.end())
        throw DataError("trial '" + utt + "' is labeled with speaker '" + **it->second +
                        "', which is not an enrolled detector");
      label.truth = d->second;
    }
    labels.push_back(std::move(label));
  }
  return labels;
}

}  // namespace mtd
