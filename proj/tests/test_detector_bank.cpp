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

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "mtdetect/detector_bank.hpp"
#include "mtdetect/synth_lab.hpp"
#include "oracles.hpp"

namespace {

mtd::EmbeddingSet make_set(const oracle::Matrix& rows, const std::string& prefix,
                           const std::vector<std::string>& speakers = {}) {
  mtd::EmbeddingSet set(rows.at(0).size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::optional<std::string> spk;
    if (!speakers.empty()) spk = speakers[i];
    set.push_back(prefix + std::to_string(i), spk, rows[i]);
  }
  return set;
}

mtd::DetectorBank bank_of(const oracle::Matrix& directions) {
  std::vector<mtd::SpeakerModel> models;
  for (std::size_t i = 0; i < directions.size(); ++i)
    models.push_back({"spk" + std::to_string(i), oracle::unit(directions[i])});
  return mtd::DetectorBank(std::move(models));
}

oracle::Matrix directions_of(const mtd::DetectorBank& bank) {
  oracle::Matrix out;
  for (const auto& m : bank.models()) out.push_back(m.direction);
  return out;
}

}  // namespace

TEST(LengthNormalize, PythagoreanTriple) {
  std::vector<double> v = {3.0, 4.0};
  auto u = mtd::length_normalize(v);
  EXPECT_DOUBLE_EQ(u[0], 0.6);
  EXPECT_DOUBLE_EQ(u[1], 0.8);
}

TEST(LengthNormalize, UnitVectorsUnchanged) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    auto u = oracle::unit(oracle::random_matrix(rng, 1, 17)[0]);
    auto w = mtd::length_normalize(u);
    for (std::size_t k = 0; k < u.size(); ++k) EXPECT_NEAR(w[k], u[k], 1e-15);
    EXPECT_NEAR(mtd::l2_norm(w), 1.0, 1e-12);
  }
}

TEST(LengthNormalize, RejectsZeroVector) {
  std::vector<double> z = {0.0, 0.0, 0.0};
  EXPECT_THROW(mtd::length_normalize(z), mtd::ArgumentError);
  std::vector<double> tiny = {1e-300, 0.0};
  EXPECT_THROW(mtd::length_normalize(tiny), mtd::ArgumentError);
}

TEST(Enroll, SymmetricMean) {
  auto set = make_set({{1.0, 0.0}, {0.0, 1.0}}, "u", {"A", "A"});
  auto bank = mtd::enroll(set);
  ASSERT_EQ(bank.size(), 1u);
  EXPECT_NEAR(bank.model(0).direction[0], std::sqrt(2.0) / 2.0, 1e-15);
  EXPECT_NEAR(bank.model(0).direction[1], std::sqrt(2.0) / 2.0, 1e-15);
}

TEST(Enroll, IdenticalUtterancesGiveTheirDirection) {
  std::vector<double> v = {2.0, -1.0, 0.5};
  auto set = make_set({v, v, v}, "u", {"A", "A", "A"});
  auto bank = mtd::enroll(set);
  auto expect = oracle::unit(v);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(bank.model(0).direction[k], expect[k], 1e-15);
}

TEST(Enroll, OrdersByFirstAppearanceAndPoolsAugment) {
  auto train = make_set({{1, 0, 0}, {0, 1, 0}, {1, 1, 0}}, "t", {"B", "A", "B"});
  auto dev = make_set({{0, 0, 5}, {0, 0, 1}}, "d", {"A", "C"});
  auto bank = mtd::enroll(train, &dev);
  ASSERT_EQ(bank.speaker_ids(), (std::vector<std::string>{"B", "A", "C"}));
  // A pools [0,1,0] (train) and [0,0,1] (dev): direction (0, 1, 1)/sqrt(2).
  EXPECT_NEAR(bank.model(1).direction[1], std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(bank.model(1).direction[2], std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(bank.model(1).direction[0], 0.0, 1e-15);
}

TEST(Enroll, PermutationInvariantWithinSpeaker) {
  std::mt19937_64 rng(8);
  auto rows = oracle::random_matrix(rng, 12, 20);
  std::vector<std::string> spk = {"a", "b", "c", "a", "b", "c", "a", "b", "c", "a", "b", "c"};
  auto bank = mtd::enroll(make_set(rows, "u", spk));
  std::vector<std::size_t> perm = {9, 1, 2, 6, 4, 5, 3, 7, 8, 0, 10, 11};
  oracle::Matrix shuffled;
  for (auto p : perm) shuffled.push_back(rows[p]);
  auto bank2 = mtd::enroll(make_set(shuffled, "u", spk));
  ASSERT_EQ(bank2.speaker_ids(), bank.speaker_ids());
  for (std::size_t i = 0; i < bank.size(); ++i)
    for (std::size_t k = 0; k < 20; ++k)
      EXPECT_NEAR(bank.model(i).direction[k], bank2.model(i).direction[k], 1e-12);
}

TEST(Enroll, Errors) {
  EXPECT_THROW(mtd::enroll(mtd::EmbeddingSet(2)), mtd::ArgumentError);
  auto unlabeled = make_set({{1, 0}, {0, 1}}, "u");
  try {
    mtd::enroll(unlabeled);
    FAIL() << "expected an error";
  } catch (const mtd::ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  auto train = make_set({{1, 0}}, "t", {"A"});
  auto dev = make_set({{1, 0, 0}}, "d", {"A"});
  EXPECT_THROW(mtd::enroll(train, &dev), mtd::ArgumentError);
  auto cancel = make_set({{1, 0}, {-1, 0}}, "c", {"A", "A"});
  EXPECT_THROW(mtd::enroll(cancel), mtd::ArgumentError);
}

TEST(Enroll, ChallengeBlacklistSize) {
  mtd::PopulationConfig config;
  config.dimension = 8;
  mtd::PopulationSpec spec;
  spec.train = {3631, 0, 3, 1, std::nullopt};
  auto pop = mtd::generate_population(config, spec);
  auto bank = mtd::enroll(pop.train);
  EXPECT_EQ(bank.size(), 3631u);
  auto stats = mtd::compute_mnorm_stats(bank, pop.train);
  EXPECT_EQ(stats.cohort_size(), 10893u);
}

TEST(Bank, RejectsInvalidModels) {
  EXPECT_THROW(mtd::DetectorBank({}), mtd::ArgumentError);
  EXPECT_THROW(mtd::DetectorBank({{"a", {1.0, 0.0}}, {"a", {0.0, 1.0}}}), mtd::ArgumentError);
  EXPECT_THROW(mtd::DetectorBank({{"a", {1.0, 0.1}}}), mtd::ArgumentError);
  EXPECT_THROW(mtd::DetectorBank({{"a", {1.0, 0.0}}, {"b", {1.0}}}), mtd::ArgumentError);
}

TEST(ScoreAll, IdenticalAndOrthogonal) {
  auto bank = bank_of({{1, 0, 0}, {0, 1, 0}});
  auto trials = make_set({{5, 0, 0}, {0, 0, 2}}, "t");
  auto m = mtd::score_all(bank, trials);
  EXPECT_EQ(m(0, 0), 1.0);
  EXPECT_EQ(m(0, 1), 0.0);
  EXPECT_EQ(m(1, 0), 0.0);
  EXPECT_EQ(m(1, 1), 0.0);
}

TEST(ScoreAll, MatchesNaiveOracle) {
  std::mt19937_64 rng(21);
  for (auto [t, s, d] : {std::tuple{5, 3, 4}, std::tuple{17, 9, 33}, std::tuple{64, 41, 7},
                         std::tuple{3, 100, 64}}) {
    auto dirs = oracle::random_matrix(rng, s, d);
    for (auto& r : dirs) r = oracle::unit(r);
    auto bank = bank_of(dirs);
    auto rows = oracle::random_matrix(rng, t, d, 3.0);
    auto m = mtd::score_all(bank, make_set(rows, "t"));
    auto ref = oracle::cosine_scores(rows, directions_of(bank));
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < s; ++j) {
        EXPECT_NEAR(m(i, j), ref[i][j], 1e-12);
        EXPECT_LE(std::abs(m(i, j)), 1.0 + 1e-12);
      }
  }
}

TEST(ScoreAll, ThreadCountDoesNotChangeBits) {
  std::mt19937_64 rng(4);
  auto bank = bank_of(oracle::random_matrix(rng, 37, 19));
  auto trials = make_set(oracle::random_matrix(rng, 301, 19), "t");
  auto one = mtd::score_all(bank, trials, {1});
  for (unsigned threads : {2u, 3u, 8u}) {
    auto many = mtd::score_all(bank, trials, {threads});
    ASSERT_EQ(std::memcmp(one.values().data(), many.values().data(),
                          one.values().size() * sizeof(double)),
              0);
  }
}

TEST(ScoreAll, ScoreRowsMatchesColumnPrefix) {
  std::mt19937_64 rng(14);
  auto bank = bank_of(oracle::random_matrix(rng, 29, 11));
  auto trials = make_set(oracle::random_matrix(rng, 13, 11), "t");
  auto full = mtd::score_all(bank, trials);
  std::vector<double> out(5 * 20);
  mtd::score_rows(bank, trials, 4, 5, 20, out);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t j = 0; j < 20; ++j) EXPECT_EQ(out[r * 20 + j], full(4 + r, j));
}

TEST(ScoreAll, Errors) {
  auto bank = bank_of({{1, 0}});
  EXPECT_THROW(mtd::score_all(bank, make_set({{1, 0, 0}}, "t")), mtd::ArgumentError);
  EXPECT_THROW(mtd::score_all(bank, make_set({{0, 0}}, "t")), mtd::ArgumentError);
}

TEST(MNorm, HandEvaluatedStats) {
  mtd::ScoreMatrix cohort({"a", "b", "c"}, {"d"}, {0.2, 0.4, 0.6});
  auto stats = mtd::stats_from_scores(cohort);
  EXPECT_NEAR(stats.mu()[0], 0.4, 1e-15);
  // sqrt(((0.2-0.4)^2 + 0 + (0.6-0.4)^2) / 3) = sqrt(0.08 / 3)
  EXPECT_NEAR(stats.sigma()[0], 0.16329931618554522, 1e-12);
  EXPECT_EQ(stats.cohort_size(), 3u);

  mtd::ScoreMatrix trial({"x"}, {"d"}, {0.6});
  auto normed = mtd::apply_mnorm(trial, stats);
  EXPECT_NEAR(normed(0, 0), 1.2247449, 1e-6);
}

TEST(MNorm, StatsFromBankMatchHandValues) {
  auto bank = bank_of({{1, 0}});
  oracle::Matrix rows;
  for (double c : {0.2, 0.4, 0.6}) rows.push_back({c, std::sqrt(1 - c * c)});
  auto stats = mtd::compute_mnorm_stats(bank, make_set(rows, "c"));
  EXPECT_NEAR(stats.mu()[0], 0.4, 1e-12);
  EXPECT_NEAR(stats.sigma()[0], 0.16329931618554522, 1e-12);
}

TEST(MNorm, DegenerateCohortNamesDetector) {
  mtd::ScoreMatrix cohort({"a", "b"}, {"d1", "d2"}, {0.1, 0.5, 0.3, 0.5});
  try {
    mtd::stats_from_scores(cohort);
    FAIL() << "expected degenerate-cohort error";
  } catch (const mtd::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("detector 2"), std::string::npos) << e.what();
  }
}

TEST(MNorm, IdentityStatsLeaveScoresUnchanged) {
  std::mt19937_64 rng(6);
  auto rows = oracle::random_matrix(rng, 7, 3);
  std::vector<double> flat;
  for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  mtd::ScoreMatrix m({"a", "b", "c", "d", "e", "f", "g"}, {"x", "y", "z"}, flat);
  mtd::MNormStats id({0, 0, 0}, {1, 1, 1}, 1);
  EXPECT_EQ(mtd::apply_mnorm(m, id), m);
  EXPECT_EQ(mtd::apply_mnorm(m, id, mtd::NormMode::kShiftOnly), m);
  EXPECT_EQ(mtd::apply_mnorm(m, id, mtd::NormMode::kScaleOnly), m);
}

TEST(MNorm, ModesAndSizeMismatch) {
  mtd::ScoreMatrix m({"t"}, {"a", "b"}, {0.6, -0.2});
  mtd::MNormStats stats({0.4, 0.1}, {0.2, 0.5}, 10);
  auto full = mtd::apply_mnorm(m, stats, mtd::NormMode::kFull);
  auto shift = mtd::apply_mnorm(m, stats, mtd::NormMode::kShiftOnly);
  auto scale = mtd::apply_mnorm(m, stats, mtd::NormMode::kScaleOnly);
  auto none = mtd::apply_mnorm(m, stats, mtd::NormMode::kNone);
  EXPECT_DOUBLE_EQ(full(0, 0), (0.6 - 0.4) / 0.2);
  EXPECT_DOUBLE_EQ(full(0, 1), (-0.2 - 0.1) / 0.5);
  EXPECT_DOUBLE_EQ(shift(0, 1), -0.2 - 0.1);
  EXPECT_DOUBLE_EQ(scale(0, 0), 0.6 / 0.2);
  EXPECT_EQ(none, m);
  EXPECT_EQ(full.trial_ids(), m.trial_ids());
  EXPECT_EQ(full.detector_ids(), m.detector_ids());
  EXPECT_THROW(mtd::apply_mnorm(m, mtd::MNormStats({0}, {1}, 1)), mtd::ArgumentError);
  EXPECT_EQ(mtd::parse_norm_mode("shift-only"), mtd::NormMode::kShiftOnly);
  EXPECT_THROW(mtd::parse_norm_mode("z-norm"), mtd::ArgumentError);
}

TEST(MNorm, BlockedStatsEqualMatrixStats) {
  std::mt19937_64 rng(77);
  // More detectors than one stats block so the blocking is exercised.
  auto bank = bank_of(oracle::random_matrix(rng, 300, 12));
  auto cohort = make_set(oracle::random_matrix(rng, 50, 12), "c");
  auto blocked = mtd::compute_mnorm_stats(bank, cohort, {3});
  auto direct = mtd::stats_from_scores(mtd::score_all(bank, cohort));
  EXPECT_EQ(blocked, direct);
  EXPECT_EQ(blocked.cohort_size(), 50u);
}

TEST(MNorm, NormalizedCohortIsStandardized) {
  std::mt19937_64 rng(9);
  auto bank = bank_of(oracle::random_matrix(rng, 25, 16));
  auto cohort = make_set(oracle::random_matrix(rng, 90, 16), "c");
  auto raw = mtd::score_all(bank, cohort);
  auto normed = mtd::apply_mnorm(raw, mtd::compute_mnorm_stats(bank, cohort));
  for (std::size_t i = 0; i < bank.size(); ++i) {
    double sum = 0.0, ss = 0.0;
    for (std::size_t r = 0; r < normed.num_trials(); ++r) sum += normed(r, i);
    const double mean = sum / normed.num_trials();
    for (std::size_t r = 0; r < normed.num_trials(); ++r)
      ss += (normed(r, i) - mean) * (normed(r, i) - mean);
    EXPECT_NEAR(mean, 0.0, 1e-10);
    EXPECT_NEAR(std::sqrt(ss / normed.num_trials()), 1.0, 1e-10);
  }
}

TEST(MNorm, AffineInvariance) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ua(0.05, 20.0), ub(-5.0, 5.0);
  auto bank = bank_of(oracle::random_matrix(rng, 6, 10));
  auto cohort_raw = mtd::score_all(bank, make_set(oracle::random_matrix(rng, 40, 10), "c"));
  auto trial_raw = mtd::score_all(bank, make_set(oracle::random_matrix(rng, 15, 10), "t"));
  auto base = mtd::apply_mnorm(trial_raw, mtd::stats_from_scores(cohort_raw));
  for (int rep = 0; rep < 20; ++rep) {
    auto cohort = cohort_raw;
    auto trials = trial_raw;
    for (std::size_t i = 0; i < bank.size(); ++i) {
      const double a = ua(rng), b = ub(rng);
      for (std::size_t r = 0; r < cohort.num_trials(); ++r) cohort(r, i) = a * cohort(r, i) + b;
      for (std::size_t r = 0; r < trials.num_trials(); ++r) trials(r, i) = a * trials(r, i) + b;
    }
    auto out = mtd::apply_mnorm(trials, mtd::stats_from_scores(cohort));
    for (std::size_t k = 0; k < out.values().size(); ++k)
      EXPECT_NEAR(out.values()[k], base.values()[k], 1e-10);
  }
}

TEST(BankFile, RoundTripIsBitExact) {
  std::mt19937_64 rng(2);
  auto bank = bank_of(oracle::random_matrix(rng, 9, 13));
  auto path = (std::filesystem::temp_directory_path() / "mtdetect_bank_roundtrip.csv").string();
  mtd::save_bank(bank, path);
  auto back = mtd::load_bank(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back, bank);
}
