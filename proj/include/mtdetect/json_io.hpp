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

// JSON and CSV serialization of reports, M-Norm statistics and size-sweep
// results. Infinite thresholds are written as the strings "-inf" / "inf".

#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mtdetect/detector_bank.hpp"
#include "mtdetect/embedding_io.hpp"
#include "mtdetect/stack_metrics.hpp"
#include "mtdetect/synth_lab.hpp"

namespace mtd {

inline constexpr int kReportSchemaVersion = 1;

using json = nlohmann::ordered_json;

inline json real_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double real_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    throw DataError("bad real value '" + s + "'");
  }
  return j.get<double>();
}

inline json to_json(const OperatingPoint& p) {
  return {{"theta", real_to_json(p.theta)},
          {"p_miss", p.p_miss},
          {"p_fa", p.p_fa},
          {"misses", p.misses},
          {"false_alarms", p.false_alarms}};
}

inline json to_json(const DetectorReport& r) {
  json pts = json::array();
  for (const auto& p : r.operating_points) pts.push_back(to_json(p));
  return {{"mode", to_string(r.mode)},
          {"eer", r.eer},
          {"eer_threshold", real_to_json(r.eer_threshold)},
          {"counts", {{"blacklist", r.blacklist_trials}, {"background", r.background_trials}}},
          {"operating_points", std::move(pts)}};
}

inline DetectorReport report_from_json(const json& j) {
  DetectorReport r;
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "top_s") r.mode = StackMode::kTopS;
  else if (mode == "top_1") r.mode = StackMode::kTop1;
  else throw DataError("unknown report mode '" + mode + "'");
  r.eer = j.at("eer").get<double>();
  r.eer_threshold = real_from_json(j.at("eer_threshold"));
  r.blacklist_trials = j.at("counts").at("blacklist").get<std::size_t>();
  r.background_trials = j.at("counts").at("background").get<std::size_t>();
  for (const auto& p : j.at("operating_points")) {
    OperatingPoint op;
    op.theta = real_from_json(p.at("theta"));
    op.p_miss = p.at("p_miss").get<double>();
    op.p_fa = p.at("p_fa").get<double>();
    op.misses = p.at("misses").get<std::size_t>();
    op.false_alarms = p.at("false_alarms").get<std::size_t>();
    r.operating_points.push_back(op);
  }
  return r;
}

/// DET samples as CSV `theta,p_fa,p_miss`.
inline void save_det_csv(const std::vector<OperatingPoint>& points, const std::string& path) {
  auto out = detail::open_for_write(path);
  out << "theta,p_fa,p_miss\n";
  for (const auto& p : points)
    out << detail::format_double(p.theta) << ',' << detail::format_double(p.p_fa) << ','
        << detail::format_double(p.p_miss) << '\n';
  detail::finish_write(out, path);
}

inline void save_json(const json& j, const std::string& path) {
  auto out = detail::open_for_write(path);
  out << j.dump(2) << '\n';
  detail::finish_write(out, path);
}

inline json load_json(const std::string& path) {
  auto in = detail::open_for_read(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// M-Norm statistics file

inline json stats_to_json(const MNormStats& stats, const std::vector<std::string>& detector_ids) {
  json dets = json::array();
  for (std::size_t i = 0; i < stats.size(); ++i)
    dets.push_back({{"id", detector_ids.at(i)}, {"mu", stats.mu()[i]}, {"sigma", stats.sigma()[i]}});
  return {{"schema_version", kReportSchemaVersion},
          {"cohort_size", stats.cohort_size()},
          {"detectors", std::move(dets)}};
}

/// Reads stats and checks that they list exactly the bank's detectors, in
/// bank order.
inline MNormStats stats_from_json(const json& j, const std::vector<std::string>& detector_ids) {
  std::vector<double> mu, sigma;
  const auto& dets = j.at("detectors");
  if (dets.size() != detector_ids.size())
    throw DataError("stats list " + std::to_string(dets.size()) + " detectors, bank has " +
                    std::to_string(detector_ids.size()));
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const auto id = dets[i].at("id").get<std::string>();
    if (id != detector_ids[i])
      throw DataError("stats detector " + std::to_string(i + 1) + " is '" + id +
                      "', bank has '" + detector_ids[i] + "'");
    mu.push_back(dets[i].at("mu").get<double>());
    sigma.push_back(dets[i].at("sigma").get<double>());
  }
  return MNormStats(std::move(mu), std::move(sigma), j.at("cohort_size").get<std::size_t>());
}

// ---------------------------------------------------------------------------
// Size sweep

inline void save_sweep_csv(const SizeSweepResult& result, const std::string& path) {
  auto out = detail::open_for_write(path);
  out << "blacklist_size,top_s_eer,top_1_eer\n";
  for (const auto& row : result.rows)
    out << row.blacklist_size << ',' << detail::format_double(row.top_s_eer) << ','
        << detail::format_double(row.top_1_eer) << '\n';
  detail::finish_write(out, path);
}

inline json sweep_to_json(const SizeSweepResult& result, const PopulationConfig& config,
                          const PartitionSpec& test_spec, const SweepOptions& options) {
  json reps = json::array();
  for (std::size_t r = 0; r < result.replicates.size(); ++r) {
    json rows = json::array();
    for (const auto& row : result.replicates[r])
      rows.push_back({{"blacklist_size", row.blacklist_size},
                      {"top_s_eer", row.top_s_eer},
                      {"top_1_eer", row.top_1_eer}});
    reps.push_back({{"index", r}, {"seed", result.replicate_seeds[r]}, {"rows", std::move(rows)}});
  }
  json means = json::array();
  for (const auto& row : result.rows)
    means.push_back({{"blacklist_size", row.blacklist_size},
                     {"top_s_eer", row.top_s_eer},
                     {"top_1_eer", row.top_1_eer}});
  return {{"schema_version", kReportSchemaVersion},
          {"config",
           {{"dimension", config.dimension},
            {"speaker_spread", config.speaker_spread},
            {"channel_spread", config.channel_spread},
            {"seed", config.seed},
            {"norm", to_string(options.norm)},
            {"enroll_utts_per_speaker", options.enroll_utts_per_speaker},
            {"test_blacklist_speakers", test_spec.blacklist_speakers},
            {"test_background_speakers", test_spec.background_speakers}}},
          {"replicate_count", result.replicate_count},
          {"rows", std::move(means)},
          {"replicates", std::move(reps)}};
}

}  // namespace mtd
