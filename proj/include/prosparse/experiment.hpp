#pragma once

// Loads the corpora named by an experiment config and runs the multi-seed
// protocol into a self-describing run directory.

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prosparse/config.hpp"
#include "prosparse/corpus.hpp"
#include "prosparse/trainer.hpp"

namespace prosparse {

inline constexpr const char* kSummaryFormat = "prosparse-run v1";

struct ExperimentData {
  std::vector<Corpus> train;
  std::optional<Corpus> dev;
  std::optional<Corpus> test;
  DurationStats duration_stats;
  std::vector<std::string> warnings;

  TrainData view() const {
    TrainData d;
    for (const auto& c : train) d.train.push_back(&c);
    d.dev = dev ? &*dev : nullptr;
    d.duration_stats = duration_stats;
    return d;
  }
};

// Duration statistics pooled over every training corpus with alignments.
inline DurationStats training_duration_stats(const std::vector<NamedCorpus>& train) {
  std::vector<std::vector<WordAlignment>> words;
  for (const auto& c : train) {
    if (c.paths.alignments.empty()) continue;
    for (auto& s : read_alignment_file(c.paths.alignments)) words.push_back(std::move(s.words));
  }
  if (words.empty()) return {};
  return compute_duration_stats(words);
}

inline LoadOptions load_options(const ExperimentConfig& c) {
  LoadOptions o;
  o.with_prosody = c.model.use_prosody;
  o.speechify_trees = c.speechify;
  o.prosody = c.model.prosody_options;
  o.cache_dir = c.cache_dir;
  return o;
}

inline ExperimentData load_data(const ExperimentConfig& c, bool need_train = true) {
  validate_paths(c, need_train);
  ExperimentData d;
  d.duration_stats = training_duration_stats(c.train);
  auto opts = load_options(c);
  for (const auto& t : c.train) d.train.push_back(load_corpus(t.name, t.paths, d.duration_stats, opts, &d.warnings));
  if (c.dev) d.dev = load_corpus(c.dev->name, c.dev->paths, d.duration_stats, opts, &d.warnings);
  if (c.test) d.test = load_corpus(c.test->name, c.test->paths, d.duration_stats, opts, &d.warnings);
  return d;
}

struct RunSummary {
  std::vector<RunRecord> records;
  MedianSummary median;
  std::string run_dir;
  json document;
};

// Run directory layout:
//   config.json           verbatim config text
//   effective_config.json config after overrides, paths resolved
//   seed-<s>/metrics.tsv, seed-<s>/best.ckpt
//   test.pred.txt         median seed's test parses (when a test corpus exists)
//   test.gold.txt         test gold trees after preprocessing
//   summary.json
inline RunSummary run_experiment(const ExperimentConfig& c, const ExperimentData& data, const std::string& run_dir,
                                 std::function<void(const std::string&)> log = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(run_dir);
  {
    std::ofstream snap(fs::path(run_dir) / "config.json", std::ios::binary);
    snap << c.source_text;
  }
  {
    std::ofstream eff(fs::path(run_dir) / "effective_config.json");
    eff << c.raw.dump(2) << '\n';
  }
  RunSummary s;
  s.run_dir = run_dir;
  s.records = train(c.model, c.training, data.view(), run_dir, log);
  s.median = median_report(s.records, data.test ? &*data.test : nullptr,
                           data.test ? data.test->vectors.get() : nullptr);

  json runs = json::array();
  for (const auto& r : s.records) runs.push_back(to_json(r));
  json train_names = json::array();
  for (const auto& t : data.train) train_names.push_back(t.name);
  json doc{{"format", kSummaryFormat},
           {"config", "config.json"},
           {"train_corpora", train_names},
           {"dev_corpus", data.dev ? data.dev->name : ""},
           {"test_corpus", data.test ? data.test->name : ""},
           {"use_prosody", c.model.use_prosody},
           {"median_seed", s.median.seed},
           {"median_dev_f1", s.median.dev_f1},
           {"runs", runs}};
  if (s.median.test) {
    auto pred = (fs::path(run_dir) / "test.pred.txt").string();
    write_tree_file(pred, s.median.test_predictions);
    doc["test_predictions"] = "test.pred.txt";
    write_tree_file((fs::path(run_dir) / "test.gold.txt").string(), data.test->gold_trees());
    doc["test_gold"] = "test.gold.txt";
    doc["test"] = eval_to_json(*s.median.test);
  }
  {
    std::ofstream out(fs::path(run_dir) / "summary.json");
    out << doc.dump(2) << '\n';
  }
  s.document = std::move(doc);
  return s;
}

}  // namespace prosparse
