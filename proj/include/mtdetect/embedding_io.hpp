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

// Embedding sets, partition manifests and score files.
//
// Embedding CSV (UTF-8, LF, no header), one utterance per row:
//
//   utterance_id,speaker_id,v1,v2,...,vD
//
// speaker_id is the literal `-` for unlabeled utterances. Score CSV has a
// header `utterance_id,<detector ids...>` followed by one row per trial.
// Manifests are `key=value` lines. Every real number is written with 17
// significant digits so a reload reproduces the same binary64 values.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtdetect/common.hpp"
#include "mtdetect/score_matrix.hpp"

namespace mtd {

inline constexpr std::string_view kUnlabeled = "-";

struct Embedding {
  std::string utterance_id;
  std::optional<std::string> speaker_id;
  std::vector<double> vector;
};

/// Ordered collection of D-dimensional embeddings with unique utterance ids.
/// Vectors are stored contiguously, row-major, in insertion order.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  explicit EmbeddingSet(std::size_t dimension) : dimension_(dimension) {
    if (dimension == 0) throw ArgumentError("embedding dimension must be >= 1");
  }

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return utterance_ids_.size(); }
  bool empty() const { return utterance_ids_.empty(); }

  const std::string& utterance_id(std::size_t i) const { return utterance_ids_[i]; }
  const std::optional<std::string>& speaker_id(std::size_t i) const {
    return speaker_ids_[i];
  }
  std::span<const double> vector(std::size_t i) const {
    return {data_.data() + i * dimension_, dimension_};
  }
  const std::vector<double>& data() const { return data_; }

  Embedding at(std::size_t i) const {
    auto v = vector(i);
    return {utterance_ids_[i], speaker_ids_[i], {v.begin(), v.end()}};
  }

  void reserve(std::size_t n) {
    utterance_ids_.reserve(n);
    speaker_ids_.reserve(n);
    data_.reserve(n * dimension_);
    index_.reserve(n);
  }

  /// Appends one embedding; throws DataError on a duplicate utterance id,
  /// a dimension mismatch or a non-finite component.
  void push_back(std::string utterance_id, std::optional<std::string> speaker_id,
                 std::span<const double> vec) {
    if (dimension_ == 0) throw ArgumentError("embedding set has no dimension");
    if (vec.size() != dimension_)
      throw DataError("dimension mismatch for '" + utterance_id + "': expected " +
                      std::to_string(dimension_) + ", got " +
                      std::to_string(vec.size()));
    for (double x : vec)
      if (!std::isfinite(x))
        throw DataError("non-finite value in '" + utterance_id + "'");
    if (utterance_id.empty()) throw DataError("empty utterance id");
    if (!index_.emplace(utterance_id, utterance_ids_.size()).second)
      throw DataError("duplicate utterance id '" + utterance_id + "'");
    utterance_ids_.push_back(std::move(utterance_id));
    speaker_ids_.push_back(std::move(speaker_id));
    data_.insert(data_.end(), vec.begin(), vec.end());
  }

  void push_back(const Embedding& e) {
    push_back(e.utterance_id, e.speaker_id, e.vector);
  }

  std::optional<std::size_t> find(const std::string& utterance_id) const {
    auto it = index_.find(utterance_id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// New set holding the rows selected by `keep`, in original order.
  template <typename Pred>
  EmbeddingSet filter(Pred keep) const {
    EmbeddingSet out(dimension_);
    for (std::size_t i = 0; i < size(); ++i)
      if (keep(i)) out.push_back(utterance_ids_[i], speaker_ids_[i], vector(i));
    return out;
  }

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.dimension_ == b.dimension_ && a.utterance_ids_ == b.utterance_ids_ &&
           a.speaker_ids_ == b.speaker_ids_ && a.data_ == b.data_;
  }

 private:
  std::size_t dimension_ = 0;
  std::vector<std::string> utterance_ids_;
  std::vector<std::optional<std::string>> speaker_ids_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline void check_id_field(std::string_view id, std::string_view what) {
  if (id.empty() || id.find_first_of(",\n\r") != std::string_view::npos)
    throw ArgumentError(std::string(what) + " '" + std::string(id) +
                        "' cannot be written to CSV");
}

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  return out;
}

inline void finish_write(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline std::string row_error(const std::string& path, std::size_t row,
                             const std::string& msg) {
  return path + ": row " + std::to_string(row) + ": " + msg;
}

}  // namespace detail

/// Parses an embedding CSV from a stream. `source` names the input in error
/// messages. Rows are numbered from 1; blank lines are skipped but still
/// counted.
inline EmbeddingSet read_embeddings(std::istream& in, const std::string& source,
                                    std::optional<std::size_t> expected_dimension =
                                        std::nullopt) {
  if (expected_dimension && *expected_dimension == 0)
    throw ArgumentError("expected dimension must be >= 1");
  EmbeddingSet set;
  bool have_dim = false;
  std::string line;
  std::size_t row = 0;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++row;
    std::string_view text = detail::strip_cr(line);
    if (text.empty()) continue;
    auto fields = detail::split(text, ',');
    if (fields.size() < 3)
      throw DataError(detail::row_error(
          source, row, "expected utterance_id,speaker_id and at least one value"));
    const std::size_t dim = fields.size() - 2;
    if (!have_dim) {
      if (expected_dimension && dim != *expected_dimension)
        throw DataError(detail::row_error(
            source, row,
            "dimension mismatch: expected " + std::to_string(*expected_dimension) +
                ", got " + std::to_string(dim)));
      set = EmbeddingSet(dim);
      have_dim = true;
    } else if (dim != set.dimension()) {
      throw DataError(detail::row_error(
          source, row,
          "dimension mismatch: expected " + std::to_string(set.dimension()) +
              ", got " + std::to_string(dim)));
    }
    values.resize(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      if (!detail::parse_double(fields[k + 2], values[k]))
        throw DataError(detail::row_error(
            source, row, "cannot parse value '" + std::string(fields[k + 2]) + "'"));
      if (!std::isfinite(values[k]))
        throw DataError(detail::row_error(source, row, "non-finite value"));
    }
    std::string utt(fields[0]);
    if (utt.empty()) throw DataError(detail::row_error(source, row, "empty utterance id"));
    if (set.find(utt))
      throw DataError(detail::row_error(source, row, "duplicate utterance id '" + utt + "'"));
    std::optional<std::string> spk;
    if (fields[1].empty())
      throw DataError(detail::row_error(source, row, "empty speaker id (use '-')"));
    if (fields[1] != kUnlabeled) spk = std::string(fields[1]);
    set.push_back(std::move(utt), std::move(spk), values);
  }
  if (!have_dim) throw DataError(source + ": empty embedding file");
  return set;
}

inline EmbeddingSet load_embeddings(const std::string& path,
                                    std::optional<std::size_t> expected_dimension =
                                        std::nullopt) {
  auto in = detail::open_for_read(path);
  return read_embeddings(in, path, expected_dimension);
}

inline void write_embeddings(std::ostream& out, const EmbeddingSet& set) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    detail::check_id_field(set.utterance_id(i), "utterance id");
    const auto& spk = set.speaker_id(i);
    if (spk) detail::check_id_field(*spk, "speaker id");
    std::string line = set.utterance_id(i);
    line += ',';
    line += spk ? *spk : std::string(kUnlabeled);
    for (double x : set.vector(i)) {
      line += ',';
      line += detail::format_double(x);
    }
    line += '\n';
    out << line;
  }
}

inline void save_embeddings(const EmbeddingSet& set, const std::string& path) {
  auto out = detail::open_for_write(path);
  write_embeddings(out, set);
  detail::finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Score CSV

inline void write_scores(std::ostream& out, const ScoreMatrix& m) {
  if (m.first_non_finite() != m.values().size())
    throw ArgumentError("score matrix contains a non-finite value");
  std::string line = "utterance_id";
  for (const auto& d : m.detector_ids()) {
    detail::check_id_field(d, "detector id");
    line += ',';
    line += d;
  }
  line += '\n';
  out << line;
  for (std::size_t t = 0; t < m.num_trials(); ++t) {
    detail::check_id_field(m.trial_ids()[t], "trial id");
    line = m.trial_ids()[t];
    for (double x : m.row(t)) {
      line += ',';
      line += detail::format_double(x);
    }
    line += '\n';
    out << line;
  }
}

/// Writes the score CSV. The matrix is checked for finiteness before the
/// file is opened, so a rejected matrix never leaves a partial file.
inline void save_scores(const ScoreMatrix& m, const std::string& path) {
  if (m.first_non_finite() != m.values().size())
    throw ArgumentError("score matrix contains a non-finite value");
  auto out = detail::open_for_write(path);
  write_scores(out, m);
  detail::finish_write(out, path);
}

inline ScoreMatrix read_scores(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t row = 0;
  std::vector<std::string> detector_ids;
  bool have_header = false;
  std::vector<std::string> trial_ids;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++row;
    std::string_view text = detail::strip_cr(line);
    if (text.empty()) continue;
    auto fields = detail::split(text, ',');
    if (!have_header) {
      if (fields.empty() || fields[0] != "utterance_id")
        throw DataError(detail::row_error(source, row, "missing score header"));
      for (std::size_t k = 1; k < fields.size(); ++k)
        detector_ids.emplace_back(fields[k]);
      have_header = true;
      continue;
    }
    if (fields.size() != detector_ids.size() + 1)
      throw DataError(detail::row_error(
          source, row,
          "expected " + std::to_string(detector_ids.size()) + " scores, got " +
              std::to_string(fields.size() - 1)));
    trial_ids.emplace_back(fields[0]);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v;
      if (!detail::parse_double(fields[k], v) || !std::isfinite(v))
        throw DataError(detail::row_error(
            source, row, "bad score '" + std::string(fields[k]) + "'"));
      values.push_back(v);
    }
  }
  if (!have_header) throw DataError(source + ": empty score file");
  return ScoreMatrix(std::move(trial_ids), std::move(detector_ids), std::move(values));
}

inline ScoreMatrix load_scores(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_scores(in, path);
}

// ---------------------------------------------------------------------------
// Trial key CSV: `utterance_id,truth` where truth is a blacklist speaker id or
// `-` for background. A leading `utterance_id,truth` header line is skipped.

using LabelRow = std::pair<std::string, std::optional<std::string>>;

inline std::vector<LabelRow> read_labels(std::istream& in, const std::string& source) {
  std::vector<LabelRow> rows;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    std::string_view text = detail::strip_cr(line);
    if (text.empty()) continue;
    auto fields = detail::split(text, ',');
    if (fields.size() != 2)
      throw DataError(detail::row_error(source, row, "expected utterance_id,truth"));
    if (row == 1 && fields[0] == "utterance_id" && fields[1] == "truth") continue;
    if (fields[0].empty() || fields[1].empty())
      throw DataError(detail::row_error(source, row, "empty field"));
    std::optional<std::string> truth;
    if (fields[1] != kUnlabeled) truth = std::string(fields[1]);
    rows.emplace_back(std::string(fields[0]), std::move(truth));
  }
  return rows;
}

inline std::vector<LabelRow> load_labels(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_labels(in, path);
}

inline void save_labels(const std::vector<LabelRow>& rows, const std::string& path) {
  auto out = detail::open_for_write(path);
  for (const auto& [utt, truth] : rows) {
    detail::check_id_field(utt, "utterance id");
    if (truth) detail::check_id_field(*truth, "speaker id");
    out << utt << ',' << (truth ? *truth : std::string(kUnlabeled)) << '\n';
  }
  detail::finish_write(out, path);
}

// ---------------------------------------------------------------------------
// Partition manifests

enum class PartitionName { kTrain, kDev, kTest };

inline std::string to_string(PartitionName p) {
  switch (p) {
    case PartitionName::kTrain: return "train";
    case PartitionName::kDev: return "dev";
    case PartitionName::kTest: return "test";
  }
  return "?";
}

inline PartitionName parse_partition_name(std::string_view s) {
  if (s == "train") return PartitionName::kTrain;
  if (s == "dev") return PartitionName::kDev;
  if (s == "test") return PartitionName::kTest;
  throw DataError("unknown partition name '" + std::string(s) + "'");
}

/// Expected shape of one data partition.
struct PartitionManifest {
  PartitionName partition_name = PartitionName::kTrain;
  std::size_t blacklist_speaker_count = 0;
  std::size_t background_speaker_count = 0;
  std::size_t min_utterances_per_blacklist_speaker = 1;
  std::size_t total_utterances = 1;

  friend bool operator==(const PartitionManifest&, const PartitionManifest&) = default;
};

inline PartitionManifest read_manifest(std::istream& in, const std::string& source) {
  std::map<std::string, std::string, std::less<>> kv;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    auto text = detail::trim(line);
    if (text.empty() || text.front() == '#') continue;
    auto eq = text.find('=');
    if (eq == std::string_view::npos)
      throw DataError(detail::row_error(source, row, "expected key=value"));
    std::string key(detail::trim(text.substr(0, eq)));
    std::string value(detail::trim(text.substr(eq + 1)));
    if (!kv.emplace(key, value).second)
      throw DataError(detail::row_error(source, row, "duplicate key '" + key + "'"));
  }
  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end())
      throw DataError(source + ": missing manifest key '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_count = [&](const char* key) -> std::size_t {
    std::string v = take(key);
    std::size_t n;
    if (!detail::parse_integer(v, n))
      throw DataError(source + ": manifest key '" + key + "' is not a count: '" + v + "'");
    return n;
  };
  PartitionManifest m;
  m.partition_name = parse_partition_name(take("partition_name"));
  m.blacklist_speaker_count = take_count("blacklist_speaker_count");
  m.background_speaker_count = take_count("background_speaker_count");
  m.min_utterances_per_blacklist_speaker =
      take_count("min_utterances_per_blacklist_speaker");
  m.total_utterances = take_count("total_utterances");
  if (!kv.empty())
    throw DataError(source + ": unknown manifest key '" + kv.begin()->first + "'");
  if (m.min_utterances_per_blacklist_speaker == 0)
    throw DataError(source + ": min_utterances_per_blacklist_speaker must be positive");
  if (m.total_utterances == 0)
    throw DataError(source + ": total_utterances must be positive");
  return m;
}

inline PartitionManifest load_manifest(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_manifest(in, path);
}

inline void write_manifest(std::ostream& out, const PartitionManifest& m) {
  out << "partition_name=" << to_string(m.partition_name) << '\n'
      << "blacklist_speaker_count=" << m.blacklist_speaker_count << '\n'
      << "background_speaker_count=" << m.background_speaker_count << '\n'
      << "min_utterances_per_blacklist_speaker="
      << m.min_utterances_per_blacklist_speaker << '\n'
      << "total_utterances=" << m.total_utterances << '\n';
}

inline void save_manifest(const PartitionManifest& m, const std::string& path) {
  auto out = detail::open_for_write(path);
  write_manifest(out, m);
  detail::finish_write(out, path);
}

/// Speaker id roster, one id per line.
inline std::set<std::string> load_roster(const std::string& path) {
  auto in = detail::open_for_read(path);
  std::set<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    auto id = detail::trim(line);
    if (!id.empty()) ids.emplace(id);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Validation

struct ValidationReport {
  std::vector<std::string> violations;
  // What was observed, whether or not it matched.
  std::size_t blacklist_speakers = 0;
  std::size_t background_speakers = 0;
  std::size_t total_utterances = 0;
  bool ok() const { return violations.empty(); }
};

/// Reference data for classifying speakers in a partition.
///
/// `blacklist` is the roster of blacklist speaker ids: a labeled speaker of
/// the partition is a blacklist speaker iff it is on the roster; everything
/// else is background. Unlabeled utterances are background, one anonymous
/// speaker per utterance. When `foreign_background` is set, labeled
/// background ids must not occur in it.
struct PartitionReference {
  std::set<std::string> blacklist;
  std::optional<std::set<std::string>> foreign_background;
};

/// Checks a partition against its manifest. Violations come back in a fixed
/// order (counts, per-speaker minimums by first appearance, disjointness by
/// first appearance, total), so identical inputs give identical reports.
inline ValidationReport validate_partition(const EmbeddingSet& set,
                                           const PartitionManifest& manifest,
                                           const PartitionReference& reference) {
  ValidationReport report;
  const std::string part = to_string(manifest.partition_name);

  std::vector<std::string> order;  // labeled speakers by first appearance
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t unlabeled = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& spk = set.speaker_id(i);
    if (!spk) {
      ++unlabeled;
      continue;
    }
    auto [it, inserted] = counts.emplace(*spk, 0);
    if (inserted) order.push_back(*spk);
    ++it->second;
  }

  std::size_t blacklist_speakers = 0, labeled_background = 0;
  for (const auto& spk : order) {
    if (reference.blacklist.count(spk)) ++blacklist_speakers;
    else ++labeled_background;
  }
  const std::size_t background_speakers = labeled_background + unlabeled;
  report.blacklist_speakers = blacklist_speakers;
  report.background_speakers = background_speakers;
  report.total_utterances = set.size();

  if (blacklist_speakers != manifest.blacklist_speaker_count)
    report.violations.push_back(
        part + ": blacklist speaker count " + std::to_string(blacklist_speakers) +
        " != expected " + std::to_string(manifest.blacklist_speaker_count));
  if (background_speakers != manifest.background_speaker_count)
    report.violations.push_back(
        part + ": background speaker count " + std::to_string(background_speakers) +
        " != expected " + std::to_string(manifest.background_speaker_count));

  for (const auto& spk : order) {
    if (!reference.blacklist.count(spk)) continue;
    const std::size_t n = counts[spk];
    if (n < manifest.min_utterances_per_blacklist_speaker)
      report.violations.push_back(
          part + ": blacklist speaker '" + spk + "' has " + std::to_string(n) +
          " utterances, fewer than " +
          std::to_string(manifest.min_utterances_per_blacklist_speaker));
  }

  if (reference.foreign_background) {
    for (const auto& spk : order) {
      if (reference.blacklist.count(spk)) continue;
      if (reference.foreign_background->count(spk))
        report.violations.push_back(part + ": background speaker '" + spk +
                                    "' also appears in another partition");
    }
  }

  if (set.size() != manifest.total_utterances)
    report.violations.push_back(part + ": total utterances " +
                                std::to_string(set.size()) + " != expected " +
                                std::to_string(manifest.total_utterances));
  return report;
}

/// Labeled speaker ids of `set` that are not on `blacklist`.
inline std::set<std::string> background_speakers(const EmbeddingSet& set,
                                                 const std::set<std::string>& blacklist) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& spk = set.speaker_id(i);
    if (spk && !blacklist.count(*spk)) ids.insert(*spk);
  }
  return ids;
}

}  // namespace mtd
