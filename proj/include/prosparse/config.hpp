#pragma once

// Experiment configuration: a JSON document with data, model, train and eval
// sections. Relative paths resolve against the config file's directory.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "prosparse/corpus.hpp"
#include "prosparse/evaluation.hpp"
#include "prosparse/model.hpp"
#include "prosparse/trainer.hpp"

namespace prosparse {

struct NamedCorpus {
  std::string name;
  CorpusPaths paths;
};

struct EvalConfig {
  bool delete_punctuation = false;
  std::size_t bootstrap_resamples = 10000;
  std::uint64_t bootstrap_seed = 1;
};

struct ExperimentConfig {
  std::vector<NamedCorpus> train;
  std::optional<NamedCorpus> dev;
  std::optional<NamedCorpus> test;
  bool speechify = false;
  ModelConfig model;
  TrainConfig training;
  EvalConfig eval;
  std::string output_dir;
  std::string cache_dir;
  std::string source_path;
  std::string source_text;
  json raw;
};

namespace detail {

inline std::string resolve_path(const std::string& base_dir, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path.lexically_normal().string();
  return (std::filesystem::path(base_dir) / path).lexically_normal().string();
}

inline NamedCorpus corpus_from_json(const json& j, const std::string& where, const std::string& base) {
  reject_unknown_keys(j, {"name", "trees", "ids", "alignments", "frames_dir", "vectors", "features"}, where);
  NamedCorpus c;
  read_key(j, "name", c.name, where);
  read_key(j, "trees", c.paths.trees, where);
  read_key(j, "ids", c.paths.ids, where);
  read_key(j, "alignments", c.paths.alignments, where);
  read_key(j, "frames_dir", c.paths.frames_dir, where);
  read_key(j, "vectors", c.paths.vectors, where);
  read_key(j, "features", c.paths.features, where);
  if (c.paths.trees.empty()) fail(ErrorKind::kConfig, where + ": 'trees' is required");
  for (auto* p : {&c.paths.trees, &c.paths.ids, &c.paths.alignments, &c.paths.frames_dir, &c.paths.vectors,
                  &c.paths.features})
    *p = resolve_path(base, *p);
  if (c.name.empty()) c.name = std::filesystem::path(c.paths.trees).parent_path().filename().string();
  return c;
}

}  // namespace detail

// Applies "a.b.c=value" overrides; values parse as JSON, falling back to a
// plain string.
inline void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) fail(ErrorKind::kConfig, "override '" + o + "': expected key.path=value");
    std::string key = o.substr(0, eq), text = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    std::string pointer;
    std::stringstream ks(key);
    std::string part;
    while (std::getline(ks, part, '.')) pointer += "/" + part;
    try {
      j[json::json_pointer(pointer)] = value;
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, "override '" + o + "': " + e.what());
    }
  }
}

inline ExperimentConfig experiment_from_json(const json& j, const std::string& base_dir) {
  ExperimentConfig c;
  c.raw = j;
  reject_unknown_keys(j, {"data", "model", "train", "eval", "output_dir", "cache_dir"}, "config");
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown_keys(d, {"train", "dev", "test", "speechify"}, "config.data");
    if (d.contains("train")) {
      const auto& t = d["train"];
      if (t.is_array()) {
        for (std::size_t i = 0; i < t.size(); ++i)
          c.train.push_back(detail::corpus_from_json(t[i], "config.data.train[" + std::to_string(i) + "]", base_dir));
      } else {
        c.train.push_back(detail::corpus_from_json(t, "config.data.train", base_dir));
      }
    }
    if (d.contains("dev")) c.dev = detail::corpus_from_json(d["dev"], "config.data.dev", base_dir);
    if (d.contains("test")) c.test = detail::corpus_from_json(d["test"], "config.data.test", base_dir);
    read_key(d, "speechify", c.speechify, "config.data");
  }
  if (j.contains("model")) c.model = model_config_from_json(j["model"], "config.model");
  if (j.contains("train")) {
    const auto& t = j["train"];
    const std::string w = "config.train";
    reject_unknown_keys(t, {"seeds", "batch_size", "learning_rate", "warmup_steps", "max_epochs", "patience",
                            "corpus_weights", "fine_tune_from", "fine_tune_lr_scale", "target_dev_f1", "adam", "jobs"},
                        w);
    read_key(t, "seeds", c.training.seeds, w);
    read_key(t, "batch_size", c.training.batch_size, w);
    read_key(t, "learning_rate", c.training.learning_rate, w);
    read_key(t, "warmup_steps", c.training.warmup_steps, w);
    read_key(t, "max_epochs", c.training.max_epochs, w);
    read_key(t, "patience", c.training.patience, w);
    read_key(t, "corpus_weights", c.training.corpus_weights, w);
    read_key(t, "fine_tune_from", c.training.fine_tune_from, w);
    read_key(t, "fine_tune_lr_scale", c.training.fine_tune_lr_scale, w);
    read_key(t, "jobs", c.training.jobs, w);
    if (t.contains("target_dev_f1") && !t["target_dev_f1"].is_null()) {
      double v = 0;
      read_key(t, "target_dev_f1", v, w);
      c.training.target_dev_f1 = v;
    }
    if (t.contains("adam")) {
      const auto& a = t["adam"];
      reject_unknown_keys(a, {"beta1", "beta2", "eps", "clip_norm"}, w + ".adam");
      read_key(a, "beta1", c.training.adam.beta1, w + ".adam");
      read_key(a, "beta2", c.training.adam.beta2, w + ".adam");
      read_key(a, "eps", c.training.adam.eps, w + ".adam");
      read_key(a, "clip_norm", c.training.adam.clip_norm, w + ".adam");
    }
    c.training.fine_tune_from = detail::resolve_path(base_dir, c.training.fine_tune_from);
  }
  if (j.contains("eval")) {
    const auto& e = j["eval"];
    reject_unknown_keys(e, {"delete_punctuation", "bootstrap_resamples", "bootstrap_seed"}, "config.eval");
    read_key(e, "delete_punctuation", c.eval.delete_punctuation, "config.eval");
    read_key(e, "bootstrap_resamples", c.eval.bootstrap_resamples, "config.eval");
    read_key(e, "bootstrap_seed", c.eval.bootstrap_seed, "config.eval");
  }
  read_key(j, "output_dir", c.output_dir, "config");
  read_key(j, "cache_dir", c.cache_dir, "config");
  c.output_dir = detail::resolve_path(base_dir, c.output_dir);
  c.cache_dir = detail::resolve_path(base_dir, c.cache_dir);
  c.model.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path, const std::vector<std::string>& overrides = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    fail(ErrorKind::kConfig, path + ": byte " + std::to_string(e.byte) + ": " + e.what());
  }
  apply_overrides(j, overrides);
  auto base = std::filesystem::absolute(path).parent_path().string();
  ExperimentConfig c;
  try {
    c = experiment_from_json(j, base);
  } catch (const Error& e) {
    fail(e.kind(), path + ": " + e.what());
  }
  c.source_path = path;
  c.source_text = ss.str();
  return c;
}

// Every referenced input must exist before any computation starts.
inline void validate_paths(const ExperimentConfig& c, bool need_train) {
  auto check = [&](const NamedCorpus& nc, const std::string& role) {
    for (const auto& p : nc.paths.referenced_paths()) {
      if (!std::filesystem::exists(p)) {
        fail(ErrorKind::kConfig, c.source_path + ": " + role + " corpus '" + nc.name + "': path does not exist: " + p);
      }
    }
  };
  if (need_train && c.train.empty()) fail(ErrorKind::kConfig, c.source_path + ": data.train is required");
  for (const auto& t : c.train) check(t, "train");
  if (c.dev) check(*c.dev, "dev");
  if (c.test) check(*c.test, "test");
  if (!c.training.fine_tune_from.empty() && !std::filesystem::exists(c.training.fine_tune_from)) {
    fail(ErrorKind::kConfig, c.source_path + ": train.fine_tune_from does not exist: " + c.training.fine_tune_from);
  }
  if (c.model.use_prosody) {
    for (const auto& t : c.train) {
      if (t.paths.features.empty() && (t.paths.alignments.empty() || t.paths.frames_dir.empty())) {
        fail(ErrorKind::kConfig, c.source_path + ": prosody model needs alignments and frames_dir for corpus '" +
                                     t.name + "'");
      }
    }
  }
}

}  // namespace prosparse
