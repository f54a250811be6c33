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

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "mtdetect/detector_bank.hpp"
#include "mtdetect/embedding_io.hpp"
#include "mtdetect/stack_metrics.hpp"

namespace mtd {

/// Score -> optional M-Norm -> stack reduction, a block of trials at a time
/// so the full trials x detectors matrix is never held in memory. Gives
/// the same stack scores as
/// stack_reduce(apply_mnorm(score_all(bank, trials), *bank.mnorm(), mode)).
inline std::vector<StackScore> score_and_reduce(const DetectorBank& bank,
                                                const EmbeddingSet& trials,
                                                NormMode mode = NormMode::kFull,
                                                ScoringOptions options = {}) {
  if (mode != NormMode::kNone && !bank.mnorm())
    throw ArgumentError("normalization mode '" + to_string(mode) +
                        "' needs M-Norm statistics on the bank");
  constexpr std::size_t kRows = 256;
  const std::size_t s = bank.size();
  std::vector<StackScore> out;
  out.reserve(trials.size());
  std::vector<double> block(kRows * s);
  for (std::size_t t0 = 0; t0 < trials.size(); t0 += kRows) {
    const std::size_t n = std::min(kRows, trials.size() - t0);
    score_rows(bank, trials, t0, n, s, block, options);
    for (std::size_t r = 0; r < n; ++r) {
      std::span<double> row(block.data() + r * s, s);
      if (mode != NormMode::kNone) apply_mnorm_row(row, *bank.mnorm(), mode);
      out.push_back(stack_reduce_row(row));
    }
  }
  return out;
}

struct Evaluation {
  DetectorReport top_s;
  DetectorReport top_1;
};

inline Evaluation evaluate(std::span<const StackScore> stack, std::span<const TrialLabel> labels) {
  return {sweep_top_s(stack, labels), sweep_top_1(stack, labels)};
}

}  // namespace mtd
