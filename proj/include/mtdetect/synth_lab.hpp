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

// Synthetic speaker populations and the blacklist-size experiment.
//
// Speakers are isotropic Gaussian means; utterances add isotropic Gaussian
// channel noise. Blacklist speakers are shared by every partition and
// background speakers are private to one partition.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtdetect/common.hpp"
#include "mtdetect/detector_bank.hpp"
#include "mtdetect/embedding_io.hpp"
#include "mtdetect/pipeline.hpp"
#include "mtdetect/stack_metrics.hpp"

namespace mtd {

struct PopulationConfig {
  std::size_t dimension = 600;
  double speaker_spread = 1.0;
  double channel_spread = 3.0;
  std::uint64_t seed = 20180901;

  void validate() const {
    if (dimension < 2) throw ArgumentError("population dimension must be >= 2");
    if (!(speaker_spread > 0.0)) throw ArgumentError("speaker_spread must be > 0");
    if (!(channel_spread >= 0.0)) throw ArgumentError("channel_spread must be >= 0");
  }
};

/// Shape of one partition. When background_total_utterances is set, that
/// many background utterances are spread as evenly as possible over the
/// background speakers (earlier speakers take the remainder), and every
/// speaker must still receive at least background_utts_per_speaker.
struct PartitionSpec {
  std::size_t blacklist_speakers = 0;
  std::size_t background_speakers = 0;
  std::size_t blacklist_utts_per_speaker = 1;
  std::size_t background_utts_per_speaker = 1;
  std::optional<std::size_t> background_total_utterances;

  std::size_t background_utterances_of(std::size_t speaker) const {
    if (!background_total_utterances) return background_utts_per_speaker;
    const std::size_t base = *background_total_utterances / background_speakers;
    const std::size_t extra = *background_total_utterances % background_speakers;
    return base + (speaker < extra ? 1 : 0);
  }

  std::size_t total_utterances() const {
    std::size_t bg = background_total_utterances
                         ? *background_total_utterances
                         : background_speakers * background_utts_per_speaker;
    return blacklist_speakers * blacklist_utts_per_speaker + bg;
  }

  void validate(const char* name) const {
    const std::string who = std::string(name) + " partition: ";
    if (blacklist_speakers > 0 && blacklist_utts_per_speaker == 0)
      throw ArgumentError(who + "blacklist speakers need at least one utterance");
    if (background_total_utterances) {
      if (background_speakers == 0 && *background_total_utterances > 0)
        throw ArgumentError(who + "background utterances without background speakers");
      if (background_speakers > 0 &&
          *background_total_utterances / background_speakers < background_utts_per_speaker)
        throw ArgumentError(who + "background total too small for the per-speaker minimum");
    }
  }
};

struct PopulationSpec {
  PartitionSpec train, dev, test;
};

/// Partition shapes of the challenge data: 3,631 blacklist speakers
/// (3 train utterances each, 1 in dev and test) and 5,000 / 5,000 / 12,386
/// background speakers, 30,952 train background utterances in total.
inline PopulationSpec challenge_spec() {
  PopulationSpec spec;
  spec.train = {3631, 5000, 3, 4, 30952};
  spec.dev = {3631, 5000, 1, 1, std::nullopt};
  spec.test = {3631, 12386, 1, 1, std::nullopt};
  return spec;
}

inline PartitionManifest manifest_for(const PartitionSpec& spec, PartitionName name) {
  PartitionManifest m;
  m.partition_name = name;
  m.blacklist_speaker_count = spec.blacklist_speakers;
  m.background_speaker_count = spec.background_speakers;
  m.min_utterances_per_blacklist_speaker = std::max<std::size_t>(1, spec.blacklist_utts_per_speaker);
  m.total_utterances = spec.total_utterances();
  return m;
}

struct Population {
  EmbeddingSet train, dev, test;
  std::vector<std::string> blacklist_ids;  // shared roster, generation order

  std::set<std::string> roster() const { return {blacklist_ids.begin(), blacklist_ids.end()}; }
};

namespace detail {

inline std::string numbered(const std::string& prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05zu", n + 1);
  return prefix + std::string(buf);
}

}  // namespace detail

/// Draws a population. Order of draws: shared blacklist speaker means, then
/// per partition (train, dev, test): that partition's background means, the
/// blacklist utterances speaker by speaker, then the background utterances.
/// Train background speakers are labeled; dev and test background
/// utterances are unlabeled.
inline Population generate_population(const PopulationConfig& config,
                                      const PopulationSpec& spec) {
  config.validate();
  spec.train.validate("train");
  spec.dev.validate("dev");
  spec.test.validate("test");
  const std::size_t dim = config.dimension;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> speaker_dist(0.0, config.speaker_spread);
  std::normal_distribution<double> channel_dist(0.0, config.channel_spread);

  auto draw_mean = [&](std::vector<double>& out) {
    out.resize(dim);
    for (auto& x : out) x = speaker_dist(rng);
  };
  std::vector<double> utt(dim);
  auto draw_utterance = [&](const std::vector<double>& mean) {
    for (std::size_t k = 0; k < dim; ++k)
      utt[k] = config.channel_spread > 0.0 ? mean[k] + channel_dist(rng) : mean[k];
  };

  const std::size_t n_black = std::max({spec.train.blacklist_speakers,
                                        spec.dev.blacklist_speakers,
                                        spec.test.blacklist_speakers});
  Population pop;
  std::vector<std::vector<double>> black_means(n_black);
  for (std::size_t s = 0; s < n_black; ++s) {
    draw_mean(black_means[s]);
    pop.blacklist_ids.push_back(detail::numbered("bl", s));
  }

  auto build = [&](const PartitionSpec& ps, const char* name, bool label_background) {
    EmbeddingSet set(dim);
    set.reserve(ps.total_utterances());
    std::vector<std::vector<double>> bg_means(ps.background_speakers);
    for (auto& m : bg_means) draw_mean(m);
    const std::string part(name);
    for (std::size_t s = 0; s < ps.blacklist_speakers; ++s) {
      for (std::size_t u = 0; u < ps.blacklist_utts_per_speaker; ++u) {
        draw_utterance(black_means[s]);
        set.push_back(part + "-" + pop.blacklist_ids[s] + "-" + std::to_string(u + 1),
                      pop.blacklist_ids[s], utt);
      }
    }
    const std::string bg_prefix = "bg-" + part + "-";
    for (std::size_t s = 0; s < ps.background_speakers; ++s) {
      const std::string spk = detail::numbered(bg_prefix, s);
      const std::size_t n = ps.background_utterances_of(s);
      for (std::size_t u = 0; u < n; ++u) {
        draw_utterance(bg_means[s]);
        std::optional<std::string> label;
        if (label_background) label = spk;
        set.push_back(part + "-" + spk + "-" + std::to_string(u + 1), label, utt);
      }
    }
    return set;
  };
  pop.train = build(spec.train, "train", true);
  pop.dev = build(spec.dev, "dev", false);
  pop.test = build(spec.test, "test", false);
  return pop;
}

/// Trial key for a generated partition: labeled speakers on the roster are
/// blacklist trials; everything else is background.
inline std::vector<LabelRow> trial_key(const EmbeddingSet& set,
                                       const std::set<std::string>& roster) {
  std::vector<LabelRow> rows;
  rows.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& spk = set.speaker_id(i);
    if (spk && roster.count(*spk)) rows.emplace_back(set.utterance_id(i), *spk);
    else rows.emplace_back(set.utterance_id(i), std::nullopt);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Blacklist-size sweep

struct SweepOptions {
  NormMode norm = NormMode::kFull;
  std::size_t enroll_utts_per_speaker = 3;
  unsigned threads = 1;
};

struct SizeSweepRow {
  std::size_t blacklist_size = 0;
  double top_s_eer = 0.0;
  double top_1_eer = 0.0;

  friend bool operator==(const SizeSweepRow&, const SizeSweepRow&) = default;
};

struct SizeSweepResult {
  std::vector<SizeSweepRow> rows;                  // replicate means
  std::vector<std::vector<SizeSweepRow>> replicates;  // [replicate][size]
  std::vector<std::uint64_t> replicate_seeds;
  std::size_t replicate_count = 0;

  friend bool operator==(const SizeSweepResult&, const SizeSweepResult&) = default;
};

/// Default blacklist sizes of the shipped experiment; the last one is the
/// full challenge blacklist.
inline std::vector<std::size_t> default_sweep_sizes() { return {10, 50, 100, 500, 1000, 3631}; }

/// Default test partition: one utterance per blacklist speaker plus the
/// challenge's 12,386 single-utterance background speakers.
inline PartitionSpec default_sweep_test_spec() { return {3631, 12386, 1, 1, std::nullopt}; }

/// One replicate: EERs at every size against a fixed test set.
///
/// The population has test_spec.blacklist_speakers blacklist speakers, each
/// with enroll_utts_per_speaker train utterances. For size k the bank is
/// the first k enrolled models, the M-Norm cohort is those k speakers' train
/// utterances, and the trials are all background test utterances plus the
/// test utterances of the k enrolled speakers.
inline std::vector<SizeSweepRow> run_size_replicate(const PopulationConfig& config,
                                                    const std::vector<std::size_t>& sizes,
                                                    const PartitionSpec& test_spec,
                                                    const SweepOptions& options) {
  PopulationSpec spec;
  spec.train = {test_spec.blacklist_speakers, 0, options.enroll_utts_per_speaker, 1,
                std::nullopt};
  spec.dev = {0, 0, 1, 1, std::nullopt};
  spec.test = test_spec;
  const Population pop = generate_population(config, spec);
  const DetectorBank full = enroll(pop.train);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < pop.blacklist_ids.size(); ++i) index.emplace(pop.blacklist_ids[i], i);

  std::vector<SizeSweepRow> rows;
  ScoringOptions scoring{options.threads};
  for (std::size_t k : sizes) {
    DetectorBank bank = full.prefix(k);
    if (options.norm != NormMode::kNone) {
      const std::size_t cohort_rows = k * options.enroll_utts_per_speaker;
      EmbeddingSet cohort = pop.train.filter([&](std::size_t i) { return i < cohort_rows; });
      bank = bank.with_mnorm(compute_mnorm_stats(bank, cohort, scoring));
    }
    std::vector<TrialLabel> labels;
    EmbeddingSet trials = pop.test.filter([&](std::size_t i) {
      const auto& spk = pop.test.speaker_id(i);
      return !spk || index.at(*spk) < k;
    });
    labels.reserve(trials.size());
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const auto& spk = trials.speaker_id(i);
      TrialLabel label{trials.utterance_id(i), std::nullopt};
      if (spk) label.truth = index.at(*spk);
      labels.push_back(std::move(label));
    }
    const auto stack = score_and_reduce(bank, trials, options.norm, scoring);
    const auto eval = evaluate(stack, labels);
    rows.push_back({k, eval.top_s.eer, eval.top_1.eer});
  }
  return rows;
}

/// Blacklist-size scaling experiment, averaged over replicates. Replicate r
/// draws its population from derive_seed(config.seed, r).
inline SizeSweepResult run_size_sweep(const PopulationConfig& config,
                                      const std::vector<std::size_t>& sizes,
                                      std::size_t replicates,
                                      const PartitionSpec& test_spec = default_sweep_test_spec(),
                                      const SweepOptions& options = {}) {
  config.validate();
  if (sizes.empty()) throw ArgumentError("size sweep: no sizes");
  if (replicates == 0) throw ArgumentError("size sweep: replicates must be positive");
  if (options.enroll_utts_per_speaker == 0)
    throw ArgumentError("size sweep: enrollment needs at least one utterance per speaker");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw ArgumentError("size sweep: sizes must be positive");
    if (i > 0 && sizes[i] < sizes[i - 1])
      throw ArgumentError("size sweep: sizes must be nondecreasing");
  }
  if (sizes.back() > test_spec.blacklist_speakers)
    throw ArgumentError("size sweep: size " + std::to_string(sizes.back()) +
                        " exceeds the blacklist population of " +
                        std::to_string(test_spec.blacklist_speakers));
  if (test_spec.background_speakers == 0)
    throw ArgumentError("size sweep: the test set needs background speakers");
  if (test_spec.blacklist_utts_per_speaker == 0)
    throw ArgumentError("size sweep: the test set needs blacklist utterances");

  SizeSweepResult result;
  result.replicate_count = replicates;
  for (std::size_t r = 0; r < replicates; ++r) {
    PopulationConfig rc = config;
    rc.seed = derive_seed(config.seed, r);
    result.replicate_seeds.push_back(rc.seed);
    result.replicates.push_back(run_size_replicate(rc, sizes, test_spec, options));
  }
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    double s = 0.0, one = 0.0;
    for (const auto& rep : result.replicates) {
      s += rep[i].top_s_eer;
      one += rep[i].top_1_eer;
    }
    result.rows.push_back({sizes[i], s / static_cast<double>(replicates),
                           one / static_cast<double>(replicates)});
  }
  return result;
}

}  // namespace mtd
