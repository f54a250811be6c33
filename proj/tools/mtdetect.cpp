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

// mtdetect: enroll / score / eval / simulate driver, plus generate and
// validate helpers for synthetic data.
//
// Errors go to stderr as `error: <message>` and the exit code is nonzero.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "CLI11.hpp"
#include "mtdetect/detector_bank.hpp"
#include "mtdetect/embedding_io.hpp"
#include "mtdetect/json_io.hpp"
#include "mtdetect/pipeline.hpp"
#include "mtdetect/stack_metrics.hpp"
#include "mtdetect/synth_lab.hpp"

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct EnrollArgs {
  std::string train, dev, roster, bank_out, stats_out;
  unsigned threads = 1;
};

struct ScoreArgs {
  std::string bank, stats, trials, out, norm = "full";
  unsigned threads = 1;
};

struct EvalArgs {
  std::string bank, stats, trials, labels, report_out, det_prefix, norm = "full";
  std::size_t det_points = 1000;
  unsigned threads = 1;
  bool timing = false;
};

struct SimulateArgs {
  std::string out_dir, sizes, norm = "full";
  std::size_t replicates = 5, dimension = 600, enroll_utts = 3;
  std::size_t test_blacklist = 3631, test_background = 12386;
  double speaker_spread = mtd::PopulationConfig{}.speaker_spread;
  double channel_spread = mtd::PopulationConfig{}.channel_spread;
  std::uint64_t seed = mtd::PopulationConfig{}.seed;
  unsigned threads = 1;
};

struct GenerateArgs {
  std::string out_dir, preset = "full";
  std::size_t dimension = 600;
  double speaker_spread = mtd::PopulationConfig{}.speaker_spread;
  double channel_spread = mtd::PopulationConfig{}.channel_spread;
  std::uint64_t seed = mtd::PopulationConfig{}.seed;
};

struct ValidateArgs {
  std::string embeddings, manifest, roster;
  std::vector<std::string> foreign;
};

std::vector<std::size_t> parse_sizes(const std::string& text) {
  if (text.empty()) return mtd::default_sweep_sizes();
  std::vector<std::size_t> sizes;
  for (auto field : mtd::detail::split(text, ',')) {
    std::size_t n;
    if (!mtd::detail::parse_integer(mtd::detail::trim(field), n))
      throw mtd::ArgumentError("bad size '" + std::string(field) + "' in --sizes");
    sizes.push_back(n);
  }
  return sizes;
}

mtd::DetectorBank load_bank_with_stats(const std::string& bank_path,
                                       const std::string& stats_path, mtd::NormMode mode) {
  auto bank = mtd::load_bank(bank_path);
  if (mode != mtd::NormMode::kNone) {
    if (stats_path.empty())
      throw mtd::ArgumentError("--norm " + mtd::to_string(mode) + " needs --stats");
    bank = bank.with_mnorm(mtd::stats_from_json(mtd::load_json(stats_path), bank.speaker_ids()));
  }
  return bank;
}

int cmd_enroll(const EnrollArgs& a) {
  auto train = mtd::load_embeddings(a.train);
  for (std::size_t i = 0; i < train.size(); ++i)
    if (!train.speaker_id(i))
      throw mtd::DataError(a.train + ": row " + std::to_string(i + 1) + " ('" +
                           train.utterance_id(i) + "') has no speaker label");
  if (!a.roster.empty()) {
    const auto roster = mtd::load_roster(a.roster);
    train = train.filter([&](std::size_t i) { return roster.count(*train.speaker_id(i)) > 0; });
    if (train.empty()) throw mtd::DataError("no train utterance belongs to a roster speaker");
  }
  mtd::EmbeddingSet augment;
  const mtd::EmbeddingSet* augment_ptr = nullptr;
  if (!a.dev.empty()) {
    auto dev = mtd::load_embeddings(a.dev, train.dimension());
    std::unordered_set<std::string> enrolled;
    for (std::size_t i = 0; i < train.size(); ++i) enrolled.insert(*train.speaker_id(i));
    augment = dev.filter([&](std::size_t i) {
      const auto& spk = dev.speaker_id(i);
      return spk && enrolled.count(*spk) > 0;
    });
    if (!augment.empty()) augment_ptr = &augment;
  }
  const mtd::ScoringOptions scoring{a.threads};
  const auto bank = mtd::enroll(train, augment_ptr);
  const auto stats = mtd::compute_mnorm_stats(bank, train, scoring);
  mtd::save_bank(bank, a.bank_out);
  mtd::save_json(mtd::stats_to_json(stats, bank.speaker_ids()), a.stats_out);
  std::cout << "detectors " << bank.size() << "\n"
            << "dimension " << bank.dimension() << "\n"
            << "augment_utterances " << augment.size() << "\n"
            << "cohort_size " << stats.cohort_size() << "\n";
  return 0;
}

int cmd_score(const ScoreArgs& a) {
  const auto mode = mtd::parse_norm_mode(a.norm);
  const auto bank = load_bank_with_stats(a.bank, a.stats, mode);
  const auto trials = mtd::load_embeddings(a.trials, bank.dimension());
  auto scores = mtd::score_all(bank, trials, {a.threads});
  if (mode != mtd::NormMode::kNone) scores = mtd::apply_mnorm(scores, *bank.mnorm(), mode);
  mtd::save_scores(scores, a.out);
  std::cout << "trials " << scores.num_trials() << "\n"
            << "detectors " << scores.num_detectors() << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  const auto start = Clock::now();
  const auto mode = mtd::parse_norm_mode(a.norm);
  if (a.det_points < 2) throw mtd::ArgumentError("--det-points must be >= 2");
  const auto bank = load_bank_with_stats(a.bank, a.stats, mode);
  const auto trials = mtd::load_embeddings(a.trials, bank.dimension());
  std::vector<std::string> trial_ids;
  trial_ids.reserve(trials.size());
  for (std::size_t i = 0; i < trials.size(); ++i) trial_ids.push_back(trials.utterance_id(i));
  const auto labels =
      mtd::resolve_labels(trial_ids, mtd::load_labels(a.labels), bank.speaker_ids());
  const auto load_done = seconds_since(start);

  const auto stack = mtd::score_and_reduce(bank, trials, mode, {a.threads});
  const auto score_done = seconds_since(start);
  const auto result = mtd::evaluate(stack, labels);

  std::string prefix = a.det_prefix;
  if (prefix.empty()) {
    fs::path p(a.report_out);
    prefix = (p.parent_path() / p.stem()).string();
  }
  const std::string det_s = prefix + ".top_s.det.csv", det_1 = prefix + ".top_1.det.csv";
  mtd::save_det_csv(mtd::det_points(result.top_s, a.det_points), det_s);
  mtd::save_det_csv(mtd::det_points(result.top_1, a.det_points), det_1);

  mtd::json report;
  report["schema_version"] = mtd::kReportSchemaVersion;
  report["mode_reports"] = {{"top_s", mtd::to_json(result.top_s)},
                            {"top_1", mtd::to_json(result.top_1)}};
  report["config"] = {{"subcommand", "eval"},
                      {"bank", a.bank},
                      {"stats", a.stats},
                      {"trials", a.trials},
                      {"labels", a.labels},
                      {"norm", mtd::to_string(mode)},
                      {"det_points", a.det_points},
                      {"det_top_s", det_s},
                      {"det_top_1", det_1}};
  if (a.timing)
    report["timing"] = {{"recorded", true},
                        {"load_seconds", load_done},
                        {"score_seconds", score_done - load_done},
                        {"total_seconds", seconds_since(start)}};
  else
    report["timing"] = {{"recorded", false}};
  mtd::save_json(report, a.report_out);
  std::cout << "trials " << trials.size() << " (blacklist " << result.top_s.blacklist_trials
            << ", background " << result.top_s.background_trials << ")\n"
            << "top_s_eer " << mtd::detail::format_double(result.top_s.eer) << "\n"
            << "top_1_eer " << mtd::detail::format_double(result.top_1.eer) << "\n";
  return 0;
}

int cmd_simulate(const SimulateArgs& a) {
  mtd::PopulationConfig config{a.dimension, a.speaker_spread, a.channel_spread, a.seed};
  mtd::PartitionSpec test_spec{a.test_blacklist, a.test_background, 1, 1, std::nullopt};
  mtd::SweepOptions options{mtd::parse_norm_mode(a.norm), a.enroll_utts, a.threads};
  const auto sizes = parse_sizes(a.sizes);
  // Validate everything before the (long) run starts.
  config.validate();
  if (a.replicates == 0) throw mtd::ArgumentError("--replicates must be positive");
  const auto result = mtd::run_size_sweep(config, sizes, a.replicates, test_spec, options);
  fs::create_directories(a.out_dir);
  const auto csv = (fs::path(a.out_dir) / "size_sweep.csv").string();
  const auto js = (fs::path(a.out_dir) / "size_sweep.json").string();
  mtd::save_sweep_csv(result, csv);
  mtd::save_json(mtd::sweep_to_json(result, config, test_spec, options), js);
  std::cout << "blacklist_size,top_s_eer,top_1_eer\n";
  for (const auto& row : result.rows)
    std::cout << row.blacklist_size << ',' << mtd::detail::format_double(row.top_s_eer) << ','
              << mtd::detail::format_double(row.top_1_eer) << '\n';
  return 0;
}

int cmd_generate(const GenerateArgs& a) {
  mtd::PopulationSpec spec;
  if (a.preset == "full") {
    spec = mtd::challenge_spec();
  } else if (a.preset == "small") {
    spec.train = {40, 60, 3, 4, std::nullopt};
    spec.dev = {40, 60, 1, 1, std::nullopt};
    spec.test = {40, 120, 1, 1, std::nullopt};
  } else {
    throw mtd::ArgumentError("unknown preset '" + a.preset + "' (expected full or small)");
  }
  mtd::PopulationConfig config{a.dimension, a.speaker_spread, a.channel_spread, a.seed};
  const auto pop = mtd::generate_population(config, spec);
  fs::create_directories(a.out_dir);
  const fs::path dir(a.out_dir);
  const auto roster = pop.roster();
  mtd::save_embeddings(pop.train, (dir / "train.csv").string());
  mtd::save_embeddings(pop.dev, (dir / "dev.csv").string());
  mtd::save_embeddings(pop.test, (dir / "test.csv").string());
  mtd::save_manifest(mtd::manifest_for(spec.train, mtd::PartitionName::kTrain),
                     (dir / "train.manifest").string());
  mtd::save_manifest(mtd::manifest_for(spec.dev, mtd::PartitionName::kDev),
                     (dir / "dev.manifest").string());
  mtd::save_manifest(mtd::manifest_for(spec.test, mtd::PartitionName::kTest),
                     (dir / "test.manifest").string());
  {
    auto out = mtd::detail::open_for_write((dir / "roster.txt").string());
    for (const auto& id : pop.blacklist_ids) out << id << '\n';
    mtd::detail::finish_write(out, (dir / "roster.txt").string());
  }
  mtd::save_labels(mtd::trial_key(pop.dev, roster), (dir / "dev.labels.csv").string());
  mtd::save_labels(mtd::trial_key(pop.test, roster), (dir / "test.labels.csv").string());
  std::cout << "train " << pop.train.size() << "\n"
            << "dev " << pop.dev.size() << "\n"
            << "test " << pop.test.size() << "\n";
  return 0;
}

int cmd_validate(const ValidateArgs& a) {
  const auto set = mtd::load_embeddings(a.embeddings);
  const auto manifest = mtd::load_manifest(a.manifest);
  mtd::PartitionReference ref;
  ref.blacklist = mtd::load_roster(a.roster);
  if (!a.foreign.empty()) {
    std::set<std::string> ids;
    for (const auto& path : a.foreign) {
      auto other = mtd::background_speakers(mtd::load_embeddings(path), ref.blacklist);
      ids.insert(other.begin(), other.end());
    }
    ref.foreign_background = std::move(ids);
  }
  const auto report = mtd::validate_partition(set, manifest, ref);
  for (const auto& v : report.violations) std::cout << "violation: " << v << "\n";
  if (!report.ok()) {
    std::cerr << "error: " << report.violations.size() << " manifest violation(s)\n";
    return 3;
  }
  std::cout << "ok " << mtd::to_string(manifest.partition_name) << " " << set.size()
            << " utterances\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-target (blacklist) speaker detection toolkit"};
  app.require_subcommand(1);

  EnrollArgs enroll;
  auto* c_enroll = app.add_subcommand("enroll", "Enroll blacklist detectors and M-Norm stats");
  c_enroll->add_option("--train", enroll.train, "Train embedding CSV (labeled)")->required();
  c_enroll->add_option("--dev", enroll.dev, "Dev embedding CSV used to augment enrollment");
  c_enroll->add_option("--roster", enroll.roster, "Blacklist speaker ids, one per line");
  c_enroll->add_option("--bank-out", enroll.bank_out, "Output bank CSV")->required();
  c_enroll->add_option("--stats-out", enroll.stats_out, "Output M-Norm stats JSON")->required();
  c_enroll->add_option("--threads", enroll.threads)->check(CLI::PositiveNumber);

  ScoreArgs score;
  auto* c_score = app.add_subcommand("score", "Score trials against every detector");
  c_score->add_option("--bank", score.bank)->required();
  c_score->add_option("--stats", score.stats, "M-Norm stats JSON");
  c_score->add_option("--trials", score.trials)->required();
  c_score->add_option("--out", score.out, "Output score CSV")->required();
  c_score->add_option("--norm", score.norm, "full | shift-only | scale-only | none");
  c_score->add_option("--threads", score.threads)->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Top-S / Top-1 evaluation of a trial list");
  c_eval->add_option("--bank", eval.bank)->required();
  c_eval->add_option("--stats", eval.stats, "M-Norm stats JSON");
  c_eval->add_option("--trials", eval.trials)->required();
  c_eval->add_option("--labels", eval.labels, "Trial key CSV utterance_id,truth")->required();
  c_eval->add_option("--report-out", eval.report_out)->required();
  c_eval->add_option("--det-prefix", eval.det_prefix,
                     "DET CSV prefix (default: report path without extension)");
  c_eval->add_option("--det-points", eval.det_points, "Maximum DET points per curve");
  c_eval->add_option("--norm", eval.norm, "full | shift-only | scale-only | none");
  c_eval->add_option("--threads", eval.threads)->check(CLI::PositiveNumber);
  c_eval->add_flag("--timing", eval.timing, "Record wall-clock timings in the report");

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Blacklist-size sweep on synthetic data");
  c_sim->add_option("--out-dir", sim.out_dir)->required();
  c_sim->add_option("--sizes", sim.sizes, "Comma separated blacklist sizes");
  c_sim->add_option("--replicates", sim.replicates);
  c_sim->add_option("--seed", sim.seed);
  c_sim->add_option("--dimension", sim.dimension);
  c_sim->add_option("--speaker-spread", sim.speaker_spread);
  c_sim->add_option("--channel-spread", sim.channel_spread);
  c_sim->add_option("--enroll-utts", sim.enroll_utts);
  c_sim->add_option("--test-blacklist", sim.test_blacklist);
  c_sim->add_option("--test-background", sim.test_background);
  c_sim->add_option("--norm", sim.norm, "full | shift-only | scale-only | none");
  c_sim->add_option("--threads", sim.threads)->check(CLI::PositiveNumber);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Write a synthetic population as CSV files");
  c_gen->add_option("--out-dir", gen.out_dir)->required();
  c_gen->add_option("--preset", gen.preset, "full | small");
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--dimension", gen.dimension);
  c_gen->add_option("--speaker-spread", gen.speaker_spread);
  c_gen->add_option("--channel-spread", gen.channel_spread);

  ValidateArgs val;
  auto* c_val = app.add_subcommand("validate", "Check a partition against its manifest");
  c_val->add_option("--embeddings", val.embeddings)->required();
  c_val->add_option("--manifest", val.manifest)->required();
  c_val->add_option("--roster", val.roster)->required();
  c_val->add_option("--foreign", val.foreign,
                    "Embedding CSVs of other partitions (background disjointness)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*c_enroll) return cmd_enroll(enroll);
    if (*c_score) return cmd_score(score);
    if (*c_eval) return cmd_eval(eval);
    if (*c_sim) return cmd_simulate(sim);
    if (*c_gen) return cmd_generate(gen);
    if (*c_val) return cmd_validate(val);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
