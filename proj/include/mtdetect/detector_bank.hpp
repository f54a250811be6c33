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

// Blacklist detector bank: enrollment, cosine scoring and multi-target
// score normalization (M-Norm).
//
// Each detector is the unit-length mean direction of one blacklist
// speaker's length-normalized training utterances. The raw score of trial x
// against detector i is the cosine between x and that direction. M-Norm
// standardizes detector i with the mean and population standard deviation
// of its raw scores over every blacklist training utterance:
//
//   y'_i = (y_i - mu_i) / sigma_i
//
// Scoring runs a tiled kernel. Every score is still a dot product summed
// in dimension order starting from zero, so the result is bit-identical to
// the naive double loop and does not depend on the thread count.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <exception>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtdetect/common.hpp"
#include "mtdetect/embedding_io.hpp"
#include "mtdetect/score_matrix.hpp"

namespace mtd {

inline constexpr double kZeroNormLimit = 1e-15;
inline constexpr double kUnitNormTolerance = 1e-12;
inline constexpr double kSigmaFloor = 1e-12;

inline double l2_norm(std::span<const double> v) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  return std::sqrt(ss);
}

/// Writes v / ||v|| into `out`. Throws ArgumentError on a (near) zero vector.
inline void length_normalize_into(std::span<const double> v, std::span<double> out) {
  const double norm = l2_norm(v);
  if (!(norm >= kZeroNormLimit))
    throw ArgumentError("cannot length-normalize a zero vector");
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] / norm;
}

inline std::vector<double> length_normalize(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) throw ArgumentError("cannot length-normalize a non-finite vector");
  std::vector<double> out(v.size());
  length_normalize_into(v, out);
  return out;
}

struct SpeakerModel {
  std::string speaker_id;
  std::vector<double> direction;  // unit length

  friend bool operator==(const SpeakerModel&, const SpeakerModel&) = default;
};

enum class NormMode { kFull, kShiftOnly, kScaleOnly, kNone };

inline std::string to_string(NormMode m) {
  switch (m) {
    case NormMode::kFull: return "full";
    case NormMode::kShiftOnly: return "shift-only";
    case NormMode::kScaleOnly: return "scale-only";
    case NormMode::kNone: return "none";
  }
  return "?";
}

inline NormMode parse_norm_mode(std::string_view s) {
  if (s == "full") return NormMode::kFull;
  if (s == "shift-only") return NormMode::kShiftOnly;
  if (s == "scale-only") return NormMode::kScaleOnly;
  if (s == "none") return NormMode::kNone;
  throw ArgumentError("unknown normalization mode '" + std::string(s) +
                      "' (expected full, shift-only, scale-only or none)");
}

/// Per-detector M-Norm statistics over a blacklist cohort of cohort_size
/// utterances.
class MNormStats {
 public:
  MNormStats(std::vector<double> mu, std::vector<double> sigma, std::size_t cohort_size)
      : mu_(std::move(mu)), sigma_(std::move(sigma)), cohort_size_(cohort_size) {
    if (mu_.size() != sigma_.size())
      throw ArgumentError("M-Norm stats: mu and sigma lengths differ");
    if (mu_.empty()) throw ArgumentError("M-Norm stats: no detectors");
    if (cohort_size_ == 0) throw ArgumentError("M-Norm stats: empty cohort");
    for (std::size_t i = 0; i < sigma_.size(); ++i) {
      if (!std::isfinite(mu_[i]) || !std::isfinite(sigma_[i]))
        throw ArgumentError("M-Norm stats: non-finite value for detector " +
                            std::to_string(i + 1));
      if (sigma_[i] < kSigmaFloor)
        throw DataError("degenerate M-Norm cohort: detector " + std::to_string(i + 1) +
                        " has standard deviation below 1e-12");
    }
  }

  std::size_t size() const { return mu_.size(); }
  const std::vector<double>& mu() const { return mu_; }
  const std::vector<double>& sigma() const { return sigma_; }
  std::size_t cohort_size() const { return cohort_size_; }

  /// Statistics for the first `count` detectors only.
  MNormStats prefix(std::size_t count) const {
    if (count == 0 || count > size()) throw ArgumentError("M-Norm stats: bad prefix size");
    return MNormStats({mu_.begin(), mu_.begin() + count},
                      {sigma_.begin(), sigma_.begin() + count}, cohort_size_);
  }

  friend bool operator==(const MNormStats&, const MNormStats&) = default;

 private:
  std::vector<double> mu_;
  std::vector<double> sigma_;
  std::size_t cohort_size_;
};

/// Ordered set of S speaker models sharing dimension D. Model order defines
/// detector indices. Immutable once built.
class DetectorBank {
 public:
  /// Detectors per packed panel of the scoring kernel.
  static constexpr std::size_t kPanelWidth = 8;

  explicit DetectorBank(std::vector<SpeakerModel> models,
                        std::optional<MNormStats> mnorm = std::nullopt)
      : models_(std::move(models)) {
    if (models_.empty()) throw ArgumentError("detector bank needs at least one model");
    dimension_ = models_.front().direction.size();
    if (dimension_ == 0) throw ArgumentError("detector bank: zero dimension");
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < models_.size(); ++i) {
      const auto& m = models_[i];
      if (m.direction.size() != dimension_)
        throw ArgumentError("detector bank: model '" + m.speaker_id +
                            "' has dimension " + std::to_string(m.direction.size()) +
                            ", expected " + std::to_string(dimension_));
      if (!seen.insert(m.speaker_id).second)
        throw ArgumentError("detector bank: duplicate speaker id '" + m.speaker_id + "'");
      for (double x : m.direction)
        if (!std::isfinite(x))
          throw ArgumentError("detector bank: non-finite direction for '" +
                              m.speaker_id + "'");
      if (std::abs(l2_norm(m.direction) - 1.0) > kUnitNormTolerance)
        throw ArgumentError("detector bank: direction of '" + m.speaker_id +
                            "' is not unit length");
    }
    set_mnorm(std::move(mnorm));
    pack();
  }

  std::size_t size() const { return models_.size(); }
  std::size_t dimension() const { return dimension_; }
  const std::vector<SpeakerModel>& models() const { return models_; }
  const SpeakerModel& model(std::size_t i) const { return models_[i]; }
  const std::optional<MNormStats>& mnorm() const { return mnorm_; }

  std::vector<std::string> speaker_ids() const {
    std::vector<std::string> ids;
    ids.reserve(models_.size());
    for (const auto& m : models_) ids.push_back(m.speaker_id);
    return ids;
  }

  /// 0-based detector index of a speaker, if enrolled.
  std::optional<std::size_t> index_of(const std::string& speaker_id) const {
    for (std::size_t i = 0; i < models_.size(); ++i)
      if (models_[i].speaker_id == speaker_id) return i;
    return std::nullopt;
  }

  DetectorBank with_mnorm(MNormStats stats) const {
    DetectorBank copy = *this;
    copy.set_mnorm(std::move(stats));
    return copy;
  }

  /// Bank holding the first `count` models (and their M-Norm stats, if any).
  DetectorBank prefix(std::size_t count) const {
    if (count == 0 || count > size())
      throw ArgumentError("detector bank: prefix size " + std::to_string(count) +
                          " outside 1.." + std::to_string(size()));
    std::optional<MNormStats> stats;
    if (mnorm_) stats = mnorm_->prefix(count);
    return DetectorBank({models_.begin(), models_.begin() + count}, std::move(stats));
  }

  // Panel p stores detectors [p*W, p*W+W) as D rows of W contiguous values;
  // the tail of the last panel is zero padded.
  std::size_t num_panels() const { return panels_.size() / (dimension_ * kPanelWidth); }
  const double* panel(std::size_t p) const {
    return panels_.data() + p * dimension_ * kPanelWidth;
  }

  friend bool operator==(const DetectorBank& a, const DetectorBank& b) {
    return a.models_ == b.models_ && a.mnorm_ == b.mnorm_;
  }

 private:
  void set_mnorm(std::optional<MNormStats> stats) {
    if (stats && stats->size() != models_.size())
      throw ArgumentError("M-Norm stats cover " + std::to_string(stats->size()) +
                          " detectors, bank has " + std::to_string(models_.size()));
    mnorm_ = std::move(stats);
  }

  void pack() {
    const std::size_t w = kPanelWidth;
    const std::size_t np = (models_.size() + w - 1) / w;
    panels_.assign(np * dimension_ * w, 0.0);
    for (std::size_t i = 0; i < models_.size(); ++i) {
      double* base = panels_.data() + (i / w) * dimension_ * w + (i % w);
      for (std::size_t k = 0; k < dimension_; ++k) base[k * w] = models_[i].direction[k];
    }
  }

  std::vector<SpeakerModel> models_;
  std::size_t dimension_ = 0;
  std::optional<MNormStats> mnorm_;
  std::vector<double> panels_;
};

/// Builds one model per distinct speaker, ordered by first appearance across
/// `train` then `augment`. Each direction is the renormalized mean of that
/// speaker's length-normalized utterances, pooled over both sets.
inline DetectorBank enroll(const EmbeddingSet& train,
                           const EmbeddingSet* augment = nullptr) {
  if (train.empty()) throw ArgumentError("enroll: no training utterances");
  if (augment && !augment->empty() && augment->dimension() != train.dimension())
    throw ArgumentError("enroll: augment dimension " +
                        std::to_string(augment->dimension()) +
                        " differs from train dimension " +
                        std::to_string(train.dimension()));
  const std::size_t dim = train.dimension();
  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::vector<double>> sums;
  std::vector<std::size_t> counts;
  std::vector<double> unit(dim);

  auto accumulate = [&](const EmbeddingSet& set, const char* name) {
    for (std::size_t u = 0; u < set.size(); ++u) {
      const auto& spk = set.speaker_id(u);
      if (!spk)
        throw ArgumentError(std::string("enroll: ") + name + " row " +
                            std::to_string(u + 1) + " ('" + set.utterance_id(u) +
                            "') has no speaker label");
      auto [it, inserted] = slot.emplace(*spk, order.size());
      if (inserted) {
        order.push_back(*spk);
        sums.emplace_back(dim, 0.0);
        counts.push_back(0);
      }
      try {
        length_normalize_into(set.vector(u), unit);
      } catch (const ArgumentError&) {
        throw ArgumentError(std::string("enroll: ") + name + " row " +
                            std::to_string(u + 1) + " ('" + set.utterance_id(u) +
                            "') is a zero vector");
      }
      auto& sum = sums[it->second];
      for (std::size_t k = 0; k < dim; ++k) sum[k] += unit[k];
      ++counts[it->second];
    }
  };
  accumulate(train, "train");
  if (augment) accumulate(*augment, "augment");

  std::vector<SpeakerModel> models;
  models.reserve(order.size());
  for (std::size_t s = 0; s < order.size(); ++s) {
    auto& mean = sums[s];
    for (double& x : mean) x /= static_cast<double>(counts[s]);
    try {
      models.push_back({order[s], length_normalize(mean)});
    } catch (const ArgumentError&) {
      throw ArgumentError("enroll: speaker '" + order[s] +
                          "' has utterances that cancel to a zero mean");
    }
  }
  return DetectorBank(std::move(models));
}

// ---------------------------------------------------------------------------
// Scoring

struct ScoringOptions {
  unsigned threads = 1;
};

namespace detail {

#if defined(__GNUC__) && defined(__x86_64__) && !defined(__clang__)
#define MTD_KERNEL_CLONES __attribute__((target_clones("avx512f", "avx2", "default")))
#else
#define MTD_KERNEL_CLONES
#endif

typedef double v4d __attribute__((vector_size(32)));

// Microkernel: R trials (rows of `x`, stride `dim`) against one panel of W
// detectors; writes R x W scores to `out`. Each lane accumulates its own
// dot product in dimension order, so any vector width gives the same bits.
template <int R>
MTD_KERNEL_CLONES void score_panel_rows(const double* x, std::size_t dim,
                                        const double* panel, double* out) {
  constexpr int W = static_cast<int>(DetectorBank::kPanelWidth);
  constexpr int V = W / 4;
  v4d acc[R][V];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) acc[r][v] = v4d{0.0, 0.0, 0.0, 0.0};
  for (std::size_t k = 0; k < dim; ++k) {
    v4d p[V];
    for (int v = 0; v < V; ++v) std::memcpy(&p[v], panel + k * W + 4 * v, sizeof(v4d));
    for (int r = 0; r < R; ++r) {
      const double xk = x[r * dim + k];
      const v4d b = {xk, xk, xk, xk};
      for (int v = 0; v < V; ++v) acc[r][v] += b * p[v];
    }
  }
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) std::memcpy(out + r * W + 4 * v, &acc[r][v], sizeof(v4d));
}

// Rows [first, first+count) of `trials` against detectors
// [det_first, det_first+det_count); `out` is count x det_count row-major.
inline void score_range_serial(const DetectorBank& bank, const EmbeddingSet& trials,
                               std::size_t first, std::size_t count,
                               std::size_t det_first, std::size_t det_count,
                               double* out) {
  constexpr std::size_t W = DetectorBank::kPanelWidth;
  constexpr std::size_t kTrialChunk = 64;
  const std::size_t dim = bank.dimension();
  const std::size_t p_begin = det_first / W;
  const std::size_t p_end = (det_first + det_count + W - 1) / W;
  constexpr std::size_t kRows = 4;
  std::vector<double> unit(kTrialChunk * dim);
  double acc[kTrialChunk * W];
  for (std::size_t c0 = 0; c0 < count; c0 += kTrialChunk) {
    const std::size_t cn = std::min(kTrialChunk, count - c0);
    for (std::size_t t = 0; t < cn; ++t) {
      try {
        length_normalize_into(trials.vector(first + c0 + t),
                              {unit.data() + t * dim, dim});
      } catch (const ArgumentError&) {
        throw ArgumentError("trial '" + trials.utterance_id(first + c0 + t) +
                            "' is a zero vector");
      }
    }
    for (std::size_t p = p_begin; p < p_end; ++p) {
      const std::size_t lo = std::max(p * W, det_first);
      const std::size_t hi = std::min(p * W + W, det_first + det_count);
      std::size_t t = 0;
      for (; t + kRows <= cn; t += kRows)
        score_panel_rows<kRows>(unit.data() + t * dim, dim, bank.panel(p), acc + t * W);
      for (; t < cn; ++t)
        score_panel_rows<1>(unit.data() + t * dim, dim, bank.panel(p), acc + t * W);
      for (t = 0; t < cn; ++t) {
        double* dst = out + (c0 + t) * det_count;
        for (std::size_t j = lo; j < hi; ++j) dst[j - det_first] = acc[t * W + j - p * W];
      }
    }
  }
}

template <typename Fn>
void parallel_ranges(std::size_t n, unsigned threads, Fn fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t step = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = std::min(n, w * step), hi = std::min(n, lo + step);
    pool.emplace_back([&, w, lo, hi] {
      try {
        if (lo < hi) fn(lo, hi);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void check_trial_dimension(const DetectorBank& bank, const EmbeddingSet& trials) {
  if (!trials.empty() && trials.dimension() != bank.dimension())
    throw ArgumentError("trial dimension " + std::to_string(trials.dimension()) +
                        " does not match bank dimension " +
                        std::to_string(bank.dimension()));
}

}  // namespace detail

/// Raw cosine scores for trials [first, first+count) against the first
/// `det_count` detectors, into `out` (count x det_count, row-major).
inline void score_rows(const DetectorBank& bank, const EmbeddingSet& trials,
                       std::size_t first, std::size_t count, std::size_t det_count,
                       std::span<double> out, ScoringOptions options = {}) {
  detail::check_trial_dimension(bank, trials);
  if (first + count > trials.size()) throw ArgumentError("score_rows: trial range out of bounds");
  if (det_count > bank.size()) throw ArgumentError("score_rows: too many detectors");
  if (out.size() < count * det_count) throw ArgumentError("score_rows: output too small");
  detail::parallel_ranges(count, options.threads, [&](std::size_t lo, std::size_t hi) {
    detail::score_range_serial(bank, trials, first + lo, hi - lo, 0, det_count,
                               out.data() + lo * det_count);
  });
}

/// Raw cosine score of every trial against every detector.
inline ScoreMatrix score_all(const DetectorBank& bank, const EmbeddingSet& trials,
                             ScoringOptions options = {}) {
  detail::check_trial_dimension(bank, trials);
  std::vector<std::string> trial_ids;
  trial_ids.reserve(trials.size());
  for (std::size_t t = 0; t < trials.size(); ++t) trial_ids.push_back(trials.utterance_id(t));
  ScoreMatrix m(std::move(trial_ids), bank.speaker_ids());
  if (!trials.empty())
    score_rows(bank, trials, 0, trials.size(), bank.size(), m.values(), options);
  return m;
}

// ---------------------------------------------------------------------------
// M-Norm

namespace detail {

// Two-pass mean then population variance over a strided column.
inline std::pair<double, double> column_stats(const double* col, std::size_t n,
                                              std::size_t stride) {
  double sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) sum += col[r * stride];
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double d = col[r * stride] - mean;
    ss += d * d;
  }
  return {mean, std::sqrt(ss / static_cast<double>(n))};
}

inline MNormStats make_stats(std::vector<double> mu, std::vector<double> sigma,
                             std::size_t cohort_size) {
  for (std::size_t i = 0; i < sigma.size(); ++i)
    if (!(sigma[i] >= kSigmaFloor))
      throw DataError("degenerate M-Norm cohort: detector " + std::to_string(i + 1) +
                      " has standard deviation " + format_double(sigma[i]) +
                      " (< 1e-12)");
  return MNormStats(std::move(mu), std::move(sigma), cohort_size);
}

}  // namespace detail

/// Per-detector mean and population standard deviation of cohort scores
/// (rows are cohort utterances, columns detectors).
inline MNormStats stats_from_scores(const ScoreMatrix& cohort_scores) {
  const std::size_t n = cohort_scores.num_trials(), s = cohort_scores.num_detectors();
  if (n == 0) throw ArgumentError("M-Norm: empty cohort");
  if (s == 0) throw ArgumentError("M-Norm: no detectors");
  std::vector<double> mu(s), sigma(s);
  for (std::size_t i = 0; i < s; ++i) {
    auto [m, sd] = detail::column_stats(cohort_scores.values().data() + i, n, s);
    mu[i] = m;
    sigma[i] = sd;
  }
  return detail::make_stats(std::move(mu), std::move(sigma), n);
}

/// M-Norm statistics of every detector over the blacklist cohort. Equal,
/// bit for bit, to stats_from_scores(score_all(bank, cohort)), but the cohort
/// score matrix is built one detector block at a time.
inline MNormStats compute_mnorm_stats(const DetectorBank& bank,
                                      const EmbeddingSet& cohort,
                                      ScoringOptions options = {}) {
  if (cohort.empty()) throw ArgumentError("M-Norm: empty cohort");
  detail::check_trial_dimension(bank, cohort);
  const std::size_t n = cohort.size(), s = bank.size();
  constexpr std::size_t kBlock = 32 * DetectorBank::kPanelWidth;
  std::vector<double> mu(s), sigma(s);
  std::vector<double> block;
  for (std::size_t d0 = 0; d0 < s; d0 += kBlock) {
    const std::size_t dn = std::min(kBlock, s - d0);
    block.assign(n * dn, 0.0);
    detail::parallel_ranges(n, options.threads, [&](std::size_t lo, std::size_t hi) {
      detail::score_range_serial(bank, cohort, lo, hi - lo, d0, dn, block.data() + lo * dn);
    });
    for (std::size_t j = 0; j < dn; ++j) {
      auto [m, sd] = detail::column_stats(block.data() + j, n, dn);
      mu[d0 + j] = m;
      sigma[d0 + j] = sd;
    }
  }
  return detail::make_stats(std::move(mu), std::move(sigma), n);
}

/// Normalizes one score row in place; `row` covers detectors
/// [0, row.size()) of `stats`.
inline void apply_mnorm_row(std::span<double> row, const MNormStats& stats, NormMode mode) {
  const auto& mu = stats.mu();
  const auto& sigma = stats.sigma();
  switch (mode) {
    case NormMode::kFull:
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = (row[i] - mu[i]) / sigma[i];
      break;
    case NormMode::kShiftOnly:
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = row[i] - mu[i];
      break;
    case NormMode::kScaleOnly:
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = row[i] / sigma[i];
      break;
    case NormMode::kNone:
      break;
  }
}

inline ScoreMatrix apply_mnorm(const ScoreMatrix& matrix, const MNormStats& stats,
                               NormMode mode = NormMode::kFull) {
  if (matrix.num_detectors() != stats.size())
    throw ArgumentError("M-Norm: matrix has " + std::to_string(matrix.num_detectors()) +
                        " detectors, stats cover " + std::to_string(stats.size()));
  ScoreMatrix out = matrix;
  for (std::size_t t = 0; t < out.num_trials(); ++t) apply_mnorm_row(out.row(t), stats, mode);
  return out;
}

// ---------------------------------------------------------------------------
// Bank persistence (model directions as an embedding CSV)

inline EmbeddingSet bank_to_embeddings(const DetectorBank& bank) {
  EmbeddingSet set(bank.dimension());
  set.reserve(bank.size());
  for (const auto& m : bank.models()) set.push_back(m.speaker_id, m.speaker_id, m.direction);
  return set;
}

inline DetectorBank bank_from_embeddings(const EmbeddingSet& set) {
  if (set.empty()) throw DataError("bank file has no models");
  std::vector<SpeakerModel> models;
  models.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& spk = set.speaker_id(i);
    if (!spk)
      throw DataError("bank row " + std::to_string(i + 1) + " has no speaker id");
    auto v = set.vector(i);
    models.push_back({*spk, {v.begin(), v.end()}});
  }
  return DetectorBank(std::move(models));
}

inline void save_bank(const DetectorBank& bank, const std::string& path) {
  save_embeddings(bank_to_embeddings(bank), path);
}

inline DetectorBank load_bank(const std::string& path) {
  return bank_from_embeddings(load_embeddings(path));
}

}  // namespace mtd
