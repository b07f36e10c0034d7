#pragma once

// Multi-seed training with warmup + inverse-sqrt Adam, length-bucketed
// batches, weighted corpus mixing, per-epoch dev selection and fine-tuning.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "prosparse/corpus.hpp"
#include "prosparse/evaluation.hpp"
#include "prosparse/model.hpp"

namespace prosparse {

struct TrainConfig {
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::size_t batch_size = 32;
  double learning_rate = 8e-4;
  std::size_t warmup_steps = 160;
  AdamOptions adam;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::vector<double> corpus_weights;  // one per training corpus; empty means equal
  std::string fine_tune_from;
  double fine_tune_lr_scale = 0.1;
  std::optional<double> target_dev_f1;  // stop once dev F1 reaches this
  std::size_t jobs = 1;                 // seeds trained concurrently

  void validate(std::size_t num_corpora) const {
    if (seeds.empty()) fail(ErrorKind::kConfig, "train: at least one seed required");
    if (batch_size == 0) fail(ErrorKind::kConfig, "train: batch_size must be >= 1");
    if (patience == 0) fail(ErrorKind::kConfig, "train: patience must be >= 1");
    if (!(learning_rate > 0)) fail(ErrorKind::kConfig, "train: learning_rate must be > 0");
    if (!(fine_tune_lr_scale > 0)) fail(ErrorKind::kConfig, "train: fine_tune_lr_scale must be > 0");
    if (!corpus_weights.empty()) {
      if (corpus_weights.size() != num_corpora) {
        fail(ErrorKind::kConfig, "train: " + std::to_string(corpus_weights.size()) + " corpus weights for " +
                                     std::to_string(num_corpora) + " training corpora");
      }
      double total = 0;
      for (double w : corpus_weights) {
        if (!(w >= 0) || !std::isfinite(w)) fail(ErrorKind::kConfig, "train: corpus weights must be non-negative");
        total += w;
      }
      if (!(total > 0)) fail(ErrorKind::kConfig, "train: corpus weights must not all be zero");
    }
    std::vector<std::uint64_t> sorted = seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      fail(ErrorKind::kConfig, "train: duplicate seeds");
    }
  }

  std::vector<double> weights(std::size_t num_corpora) const {
    return corpus_weights.empty() ? std::vector<double>(num_corpora, 1.0) : corpus_weights;
  }
};

// Linear warmup to `base`, then base * sqrt(warmup / step). Steps are 1-based.
inline double learning_rate_at(std::size_t step, double base, std::size_t warmup) {
  if (step == 0) step = 1;
  if (warmup == 0) return base;
  double s = static_cast<double>(step), w = static_cast<double>(warmup);
  return base * std::min(s / w, std::sqrt(w / s));
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0;
  double dev_f1 = 0;
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  double best_dev_f1 = 0;
  std::size_t best_epoch = 0;
  std::string checkpoint;
  std::string metrics_path;
  double wall_seconds = 0;
  bool failed = false;
  std::string error;

  std::vector<double> dev_f1s() const {
    std::vector<double> out;
    for (const auto& e : epochs) out.push_back(e.dev_f1);
    return out;
  }
};

// Epoch after which training stops: `patience` consecutive epochs without a
// new best dev F1 (or the last epoch).
inline std::size_t early_stop_epoch(const std::vector<double>& dev_f1, std::size_t patience) {
  double best = -1;
  std::size_t since = 0;
  for (std::size_t i = 0; i < dev_f1.size(); ++i) {
    if (dev_f1[i] > best) {
      best = dev_f1[i];
      since = 0;
    } else if (++since >= patience) {
      return i + 1;
    }
  }
  return dev_f1.size();
}

// Length-bucketed batches: shuffle, stable-sort by length, chunk, then
// shuffle batch order.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& lengths,
                                                          std::size_t batch_size, std::mt19937_64& rng) {
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size));
  }
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

struct BatchRef {
  std::size_t corpus = 0;
  std::vector<std::size_t> sentences;
};

// Draws the batches of one epoch. Each corpus has its own shuffling stream and
// the corpus of every batch is drawn from a separate mixing stream, so a
// zero-weight corpus leaves the others' batch sequences untouched.
class BatchSchedule {
 public:
  BatchSchedule(const std::vector<std::vector<std::size_t>>& lengths, std::vector<double> weights,
                std::size_t batch_size, std::uint64_t seed)
      : lengths_(lengths), weights_(std::move(weights)), batch_size_(batch_size), mix_(splitmix64(seed ^ 0x6d6978ULL)) {
    for (std::size_t c = 0; c < lengths_.size(); ++c) {
      shuffle_.emplace_back(splitmix64(seed + 0x9e37ULL * (c + 1)));
      pending_.emplace_back();
    }
  }

  std::vector<BatchRef> epoch() {
    std::size_t total = 0;
    for (std::size_t c = 0; c < lengths_.size(); ++c) {
      if (weights_[c] > 0) total += (lengths_[c].size() + batch_size_ - 1) / batch_size_;
    }
    std::discrete_distribution<std::size_t> pick(weights_.begin(), weights_.end());
    std::vector<BatchRef> out;
    for (std::size_t k = 0; k < total; ++k) {
      std::size_t c = lengths_.size() == 1 ? 0 : pick(mix_);
      if (pending_[c].empty()) {
        auto fresh = make_batches(lengths_[c], batch_size_, shuffle_[c]);
        pending_[c].assign(fresh.rbegin(), fresh.rend());
      }
      out.push_back({c, std::move(pending_[c].back())});
      pending_[c].pop_back();
    }
    return out;
  }

 private:
  std::vector<std::vector<std::size_t>> lengths_;
  std::vector<double> weights_;
  std::size_t batch_size_;
  std::mt19937_64 mix_;
  std::vector<std::mt19937_64> shuffle_;
  std::vector<std::vector<std::vector<std::size_t>>> pending_;
};

inline LabelVocab build_label_vocab(const std::vector<const Corpus*>& corpora) {
  std::set<std::string> labels;
  for (const auto* c : corpora)
    for (const auto& e : c->examples)
      for (const auto& s : tree_to_spans(e.gold)) labels.insert(s.label);
  LabelVocab v;
  for (const auto& l : labels) v.add(l);
  return v;
}

inline WordVocab build_word_vocab(const std::vector<const Corpus*>& corpora, std::size_t min_count) {
  std::vector<std::vector<std::string>> sents;
  for (const auto* c : corpora)
    for (const auto& e : c->examples) sents.push_back(e.input.words);
  return WordVocab::build(sents, min_count);
}

template <typename Real>
std::vector<Tree> parse_all(const ParserModel<Real>& model, const std::vector<Example>& examples) {
  std::vector<Tree> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(model.parse(e.input).tree);
  return out;
}

template <typename Real>
EvalReport evaluate_model(const ParserModel<Real>& model, const Corpus& corpus, const EvalOptions& opts = {}) {
  return parseval(corpus.gold_trees(), parse_all(model, corpus.examples), opts, corpus.ids());
}

struct TrainData {
  std::vector<const Corpus*> train;
  const Corpus* dev = nullptr;
  DurationStats duration_stats;
};

using ModelT = ParserModel<float>;

inline std::unique_ptr<ModelT> build_model(const ModelConfig& config, const TrainData& data, std::uint64_t seed) {
  const VectorStore* store = data.train.front()->vectors.get();
  auto model = std::make_unique<ModelT>(config, build_label_vocab(data.train),
                                        build_word_vocab(data.train, config.embedding.min_count), store, seed,
                                        data.train.front()->tokenized());
  model->duration_stats() = data.duration_stats;
  return model;
}

// Starts from a checkpoint: label/word vocabularies come from it, the
// architecture from `config`; shape disagreements are checkpoint errors.
inline std::unique_ptr<ModelT> model_from_checkpoint(const ModelConfig& config, const std::string& path,
                                                     const TrainData& data, std::uint64_t seed) {
  auto ck = read_checkpoint(path);
  auto meta = ModelT::read_metadata(ck, path);
  const VectorStore* store = data.train.front()->vectors.get();
  auto model = std::make_unique<ModelT>(config, LabelVocab::from_symbols(meta.labels), WordVocab::from_words(meta.words),
                                        store, seed);
  restore(model->params(), ck.tensors);
  model->duration_stats() = meta.duration_stats;
  model->lineage() = meta.lineage;
  model->lineage().push_back(path);
  return model;
}

inline std::string format_metric(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

struct SeedOptions {
  std::string run_dir;  // seed-<s>/ is created inside; empty keeps everything in memory
  std::function<void(const std::string&)> log;
};

// One seed: returns its record; numeric failures are captured in the record.
inline RunRecord train_seed(const ModelConfig& model_config, const TrainConfig& config, const TrainData& data,
                            std::uint64_t seed, const SeedOptions& opts,
                            std::unique_ptr<ModelT>* trained = nullptr) {
  namespace fs = std::filesystem;
  RunRecord rec;
  rec.seed = seed;
  auto t0 = std::chrono::steady_clock::now();
  std::string seed_dir;
  if (!opts.run_dir.empty()) {
    seed_dir = (fs::path(opts.run_dir) / ("seed-" + std::to_string(seed))).string();
    fs::create_directories(seed_dir);
    rec.checkpoint = (fs::path(seed_dir) / "best.ckpt").string();
    rec.metrics_path = (fs::path(seed_dir) / "metrics.tsv").string();
  }
  auto log = [&](const std::string& m) {
    if (opts.log) opts.log("[seed " + std::to_string(seed) + "] " + m);
  };

  std::unique_ptr<ModelT> model;
  double base_lr = config.learning_rate;
  if (!config.fine_tune_from.empty()) {
    model = model_from_checkpoint(model_config, config.fine_tune_from, data, seed);
    base_lr *= config.fine_tune_lr_scale;
  } else {
    model = build_model(model_config, data, seed);
  }

  std::vector<std::vector<std::vector<IndexedSpan>>> gold(data.train.size());
  std::vector<std::vector<std::size_t>> lengths(data.train.size());
  for (std::size_t c = 0; c < data.train.size(); ++c) {
    for (const auto& e : data.train[c]->examples) {
      try {
        gold[c].push_back(model->gold_spans(e.gold));
      } catch (const Error& err) {
        fail(err.kind(), data.train[c]->name + ": sentence " + e.input.id + ": " + err.what());
      }
      lengths[c].push_back(e.input.words.size());
    }
  }

  std::ofstream metrics;
  if (!rec.metrics_path.empty()) {
    metrics.open(rec.metrics_path);
    metrics << "epoch\ttrain_loss\tdev_F1\n";
  }
  auto save_best = [&] {
    if (!rec.checkpoint.empty()) model->save(rec.checkpoint);
  };

  Adam<float> adam(config.adam);
  BatchSchedule schedule(lengths, config.weights(data.train.size()), config.batch_size, seed);
  std::size_t step = 0, since_best = 0;
  rec.best_dev_f1 = -1;
  try {
    if (config.max_epochs == 0) save_best();
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
      double epoch_loss = 0;
      for (const auto& batch : schedule.epoch()) {
        ++step;
        model->params().zero_grad();
        double batch_loss = 0;
        for (std::size_t idx : batch.sentences) {
          const auto& ex = data.train[batch.corpus]->examples[idx];
          Graph<float> g(true, splitmix64(seed ^ splitmix64(step * 1000003ULL + idx)));
          Var loss = model->loss(g, ex.input, gold[batch.corpus][idx]);
          batch_loss += g.value(loss)[0];
          g.backward(loss);
        }
        if (!std::isfinite(batch_loss)) {
          fail(ErrorKind::kNumeric, "seed " + std::to_string(seed) + ": loss became non-finite at step " +
                                        std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
        }
        double norm = adam.step(model->params(), learning_rate_at(step, base_lr, config.warmup_steps));
        if (!std::isfinite(norm)) {
          fail(ErrorKind::kNumeric, "seed " + std::to_string(seed) + ": non-finite gradient at step " +
                                        std::to_string(step));
        }
        epoch_loss += batch_loss;
      }
      double dev_f1 = data.dev ? evaluate_model(*model, *data.dev).f1() : 0.0;
      rec.epochs.push_back({epoch, epoch_loss, dev_f1});
      if (metrics.is_open()) {
        metrics << epoch << '\t' << format_metric(epoch_loss, 6) << '\t' << format_metric(dev_f1, 4) << '\n';
        metrics.flush();
      }
      log("epoch " + std::to_string(epoch) + " loss " + format_metric(epoch_loss, 4) + " dev F1 " +
          format_metric(dev_f1, 2));
      if (dev_f1 > rec.best_dev_f1) {
        rec.best_dev_f1 = dev_f1;
        rec.best_epoch = epoch;
        since_best = 0;
        save_best();
      } else if (++since_best >= config.patience) {
        break;
      }
      if (config.target_dev_f1 && dev_f1 >= *config.target_dev_f1) break;
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kNumeric) throw;
    rec.failed = true;
    rec.error = e.what();
    if (rec.error.rfind("seed ", 0) != 0) rec.error = "seed " + std::to_string(seed) + ": " + rec.error;
    log(std::string("aborted: ") + e.what());
  }
  if (rec.best_dev_f1 < 0) rec.best_dev_f1 = 0;
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (trained) *trained = std::move(model);
  return rec;
}

// Lower median by best dev F1 among successful runs (index (n-1)/2 after a
// stable ascending sort).
inline std::optional<std::size_t> median_run(const std::vector<RunRecord>& records) {
  std::vector<std::size_t> ok;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!records[i].failed) ok.push_back(i);
  if (ok.empty()) return std::nullopt;
  std::stable_sort(ok.begin(), ok.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].best_dev_f1 < records[b].best_dev_f1; });
  return ok[(ok.size() - 1) / 2];
}

struct MedianSummary {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double dev_f1 = 0;
  std::optional<EvalReport> test;
  std::vector<Tree> test_predictions;
};

inline MedianSummary median_report(const std::vector<RunRecord>& records, const Corpus* test = nullptr,
                                   const VectorStore* vectors = nullptr) {
  if (records.empty()) fail(ErrorKind::kData, "median_report: no runs");
  auto idx = median_run(records);
  if (!idx) fail(ErrorKind::kNumeric, "median_report: every seed failed");
  MedianSummary s;
  s.index = *idx;
  s.seed = records[*idx].seed;
  s.dev_f1 = records[*idx].best_dev_f1;
  if (test && !records[*idx].checkpoint.empty()) {
    auto model = ModelT::load(records[*idx].checkpoint, vectors);
    s.test_predictions = parse_all(*model, test->examples);
    s.test = parseval(test->gold_trees(), s.test_predictions, {}, test->ids());
  }
  return s;
}

// All seeds, `config.jobs` at a time. Seeds share nothing mutable.
inline std::vector<RunRecord> train(const ModelConfig& model_config, const TrainConfig& config, const TrainData& data,
                                    const std::string& run_dir, std::function<void(const std::string&)> log = {}) {
  if (data.train.empty()) fail(ErrorKind::kData, "train: no training corpora");
  for (const auto* c : data.train)
    if (c->examples.empty()) fail(ErrorKind::kData, "train: corpus " + c->name + " is empty");
  config.validate(data.train.size());
  model_config.validate();

  std::mutex log_mutex;
  auto safe_log = [&](const std::string& m) {
    if (!log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    log(m);
  };
  std::vector<RunRecord> records(config.seeds.size());
  std::vector<std::exception_ptr> errors(config.seeds.size());
  auto run = [&](std::size_t i) {
    try {
      records[i] = train_seed(model_config, config, data, config.seeds[i], {run_dir, safe_log});
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  std::size_t jobs = std::max<std::size_t>(1, std::min(config.jobs, config.seeds.size()));
  for (std::size_t start = 0; start < config.seeds.size(); start += jobs) {
    std::vector<std::thread> workers;
    for (std::size_t i = start; i < std::min(start + jobs, config.seeds.size()); ++i) {
      if (jobs == 1) {
        run(i);
      } else {
        workers.emplace_back(run, i);
      }
    }
    for (auto& w : workers) w.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return records;
}

inline json to_json(const RunRecord& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"dev_f1", e.dev_f1}});
  return json{{"seed", r.seed},         {"best_dev_f1", r.best_dev_f1}, {"best_epoch", r.best_epoch},
              {"checkpoint", r.checkpoint}, {"metrics", r.metrics_path}, {"wall_seconds", r.wall_seconds},
              {"failed", r.failed},     {"error", r.error},           {"epochs", epochs}};
}

inline json eval_to_json(const EvalReport& r) {
  auto counts = [](const BracketCounts& c) {
    return json{{"precision", c.precision()}, {"recall", c.recall()},       {"f1", c.f1()},
                {"matched", c.matched},       {"gold", c.gold},             {"predicted", c.predicted},
                {"sentences", c.sentences},   {"exact", c.exact}};
  };
  json j = counts(r.overall);
  json b = json::object();
  for (const auto& [name, c] : r.breakdown) b[name] = counts(c);
  j["breakdown"] = b;
  return j;
}

}  // namespace prosparse
