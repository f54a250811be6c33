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

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtdetect/common.hpp"

namespace mtd {

/// Trials x detectors table of scores, stored row-major (one row per trial).
/// Entries are raw cosine scores or normalized scores; always finite.
class ScoreMatrix {
 public:
  ScoreMatrix() = default;

  ScoreMatrix(std::vector<std::string> trial_ids,
              std::vector<std::string> detector_ids)
      : trial_ids_(std::move(trial_ids)),
        detector_ids_(std::move(detector_ids)),
        scores_(trial_ids_.size() * detector_ids_.size(), 0.0) {}

  ScoreMatrix(std::vector<std::string> trial_ids,
              std::vector<std::string> detector_ids, std::vector<double> scores)
      : trial_ids_(std::move(trial_ids)),
        detector_ids_(std::move(detector_ids)),
        scores_(std::move(scores)) {
    if (scores_.size() != trial_ids_.size() * detector_ids_.size())
      throw ArgumentError("score matrix: " + std::to_string(scores_.size()) +
                          " values do not fill " +
                          std::to_string(trial_ids_.size()) + " x " +
                          std::to_string(detector_ids_.size()));
  }

  std::size_t num_trials() const { return trial_ids_.size(); }
  std::size_t num_detectors() const { return detector_ids_.size(); }

  const std::vector<std::string>& trial_ids() const { return trial_ids_; }
  const std::vector<std::string>& detector_ids() const { return detector_ids_; }

  double operator()(std::size_t t, std::size_t i) const {
    return scores_[t * detector_ids_.size() + i];
  }
  double& operator()(std::size_t t, std::size_t i) {
    return scores_[t * detector_ids_.size() + i];
  }

  std::span<const double> row(std::size_t t) const {
    return {scores_.data() + t * detector_ids_.size(), detector_ids_.size()};
  }
  std::span<double> row(std::size_t t) {
    return {scores_.data() + t * detector_ids_.size(), detector_ids_.size()};
  }

  const std::vector<double>& values() const { return scores_; }
  std::vector<double>& values() { return scores_; }

  /// Index of the first non-finite entry, or values().size() if none.
  std::size_t first_non_finite() const {
    for (std::size_t k = 0; k < scores_.size(); ++k)
      if (!std::isfinite(scores_[k])) return k;
    return scores_.size();
  }

  friend bool operator==(const ScoreMatrix&, const ScoreMatrix&) = default;

 private:
  std::vector<std::string> trial_ids_;
  std::vector<std::string> detector_ids_;
  std::vector<double> scores_;
};

}  // namespace mtd
