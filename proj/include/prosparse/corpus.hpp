#pragma once

// Assembles model inputs from trees, sentence ids, alignments, frame tracks
// and vector stores.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "prosparse/features.hpp"
#include "prosparse/model.hpp"
#include "prosparse/treebank.hpp"

namespace prosparse {

struct CorpusPaths {
  std::string trees;
  std::string ids;         // optional; one id per line, else 1-based line numbers
  std::string alignments;  // optional; required by prosody models
  std::string frames_dir;  // <frames_dir>/<speaker_id>.csv
  std::string vectors;     // optional; required by frozen/fine-tuned embeddings
  std::string features;    // optional precomputed feature file; replaces alignments + frames

  std::vector<std::string> referenced_paths() const {
    std::vector<std::string> out;
    for (const auto* p : {&trees, &ids, &alignments, &frames_dir, &vectors, &features})
      if (!p->empty()) out.push_back(*p);
    return out;
  }
};

struct Example {
  SentenceInput input;
  Tree gold;
};

struct Corpus {
  std::string name;
  std::vector<Example> examples;
  std::shared_ptr<VectorStore> vectors;

  std::vector<Tree> gold_trees() const {
    std::vector<Tree> out;
    for (const auto& e : examples) out.push_back(e.gold);
    return out;
  }
  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    for (const auto& e : examples) out.push_back(e.input.id);
    return out;
  }
  std::vector<TokenizedSentence> tokenized() const {
    std::vector<TokenizedSentence> out;
    for (const auto& e : examples) out.push_back({e.input.id, e.input.words});
    return out;
  }
};

inline std::vector<std::string> read_ids(const std::string& path, std::size_t expected) {
  std::vector<std::string> ids;
  if (path.empty()) {
    for (std::size_t i = 0; i < expected; ++i) ids.push_back(std::to_string(i + 1));
    return ids;
  }
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "cannot open id file: " + path);
  std::string line;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!seen.insert(line).second) fail(ErrorKind::kData, path + ":" + std::to_string(lineno) + ": duplicate id " + line);
    ids.push_back(line);
  }
  if (ids.size() != expected) {
    fail(ErrorKind::kData, path + ": " + std::to_string(ids.size()) + " ids for " + std::to_string(expected) + " sentences");
  }
  return ids;
}

inline std::vector<std::vector<WordAlignment>> alignment_words(const std::vector<AlignedSentence>& sents) {
  std::vector<std::vector<WordAlignment>> out;
  for (const auto& s : sents) out.push_back(s.words);
  return out;
}

// Speaker-normalized tracks for every speaker in `sentences`.
inline std::map<std::string, FrameTrack> load_tracks(const std::vector<AlignedSentence>& sentences,
                                                     const std::string& frames_dir,
                                                     std::vector<std::string>* warnings = nullptr) {
  std::set<std::string> speakers;
  for (const auto& s : sentences)
    for (const auto& w : s.words) speakers.insert(w.speaker_id);
  std::map<std::string, FrameTrack> raw;
  for (const auto& sp : speakers) {
    auto path = (std::filesystem::path(frames_dir) / (sp + ".csv")).string();
    if (!std::filesystem::exists(path)) fail(ErrorKind::kData, "missing frame track for speaker " + sp + ": " + path);
    raw.emplace(sp, read_frame_file(path));
  }
  auto norm = normalize_speaker(raw);
  if (warnings)
    for (const auto& w : norm.warnings) warnings->push_back("speaker " + w.speaker_id + ": " + w.message);
  return std::move(norm.tracks);
}

// Content hash of everything that determines a feature set.
inline std::string feature_cache_key(const std::string& alignments, const std::vector<AlignedSentence>& sentences,
                                     const std::string& frames_dir, const DurationStats& stats,
                                     const ProsodyOptions& options) {
  ContentHash h;
  h.add(kFeatureHeader).add_file(alignments);
  std::set<std::string> speakers;
  for (const auto& s : sentences)
    for (const auto& w : s.words) speakers.insert(w.speaker_id);
  for (const auto& sp : speakers) {
    h.add(sp).add_file((std::filesystem::path(frames_dir) / (sp + ".csv")).string());
  }
  h.add(to_json(stats).dump());
  h.add(detail::exact(options.context_s)).add(std::to_string(options.max_frames));
  return h.hex();
}

inline FeatureSet compute_feature_set(const std::vector<AlignedSentence>& sentences, const std::string& frames_dir,
                                      const DurationStats& stats, const ProsodyOptions& options,
                                      std::vector<std::string>* warnings = nullptr) {
  auto tracks = load_tracks(sentences, frames_dir, warnings);
  FeatureSet out;
  for (const auto& s : sentences) out.emplace(s.sentence_id, compute_features(s, tracks, stats, options));
  return out;
}

inline FeatureSet features_for(const CorpusPaths& paths, const DurationStats& stats, const ProsodyOptions& options,
                               const std::string& cache_dir, std::vector<std::string>* warnings = nullptr) {
  if (!paths.features.empty()) return read_feature_file(paths.features);
  if (paths.alignments.empty() || paths.frames_dir.empty()) {
    fail(ErrorKind::kData, "prosodic features need an alignment file and a frames directory (corpus " + paths.trees + ")");
  }
  auto sentences = read_alignment_file(paths.alignments);
  auto key = feature_cache_key(paths.alignments, sentences, paths.frames_dir, stats, options);
  return cached_features(cache_dir, key, options,
                         [&] { return compute_feature_set(sentences, paths.frames_dir, stats, options, warnings); });
}

// Checks that alignment words agree with the tree words and attaches features.
inline void attach_features(std::vector<Example>& examples, const FeatureSet& features, const std::string& source) {
  for (auto& e : examples) {
    auto it = features.find(e.input.id);
    if (it == features.end()) fail(ErrorKind::kData, source + ": no prosodic features for sentence " + e.input.id);
    if (it->second.size() != e.input.words.size()) {
      fail(ErrorKind::kAlignment, source + ": sentence " + e.input.id + " has " + std::to_string(it->second.size()) +
                                      " aligned words but the tree has " + std::to_string(e.input.words.size()));
    }
    e.input.prosody = it->second;
  }
}

inline void check_alignment_words(const std::vector<Example>& examples, const std::string& alignments) {
  if (alignments.empty()) return;
  std::map<std::string, const AlignedSentence*> by_id;
  auto sentences = read_alignment_file(alignments);
  for (const auto& s : sentences) by_id[s.sentence_id] = &s;
  for (const auto& e : examples) {
    auto it = by_id.find(e.input.id);
    if (it == by_id.end()) continue;
    const auto& words = it->second->words;
    if (words.size() != e.input.words.size()) {
      fail(ErrorKind::kAlignment, alignments + ": sentence " + e.input.id + " has " + std::to_string(words.size()) +
                                      " aligned words but the tree has " + std::to_string(e.input.words.size()));
    }
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (lowercase(words[i].word) != lowercase(e.input.words[i])) {
        fail(ErrorKind::kAlignment, alignments + ": sentence " + e.input.id + " word " + std::to_string(i + 1) + " is '" +
                                        words[i].word + "' but the tree has '" + e.input.words[i] + "'");
      }
    }
  }
}

inline std::vector<Example> examples_from_trees(const std::vector<Tree>& trees, const std::vector<std::string>& ids) {
  std::vector<Example> out;
  for (std::size_t i = 0; i < trees.size(); ++i) {
    Example e;
    e.gold = trees[i];
    e.input.id = ids[i];
    e.input.words = trees[i].words();
    e.input.tags = trees[i].tags();
    out.push_back(std::move(e));
  }
  return out;
}

struct LoadOptions {
  bool with_prosody = false;
  bool speechify_trees = false;
  ProsodyOptions prosody;
  std::string cache_dir;
};

inline DurationStats duration_stats_for(const CorpusPaths& paths) {
  if (paths.alignments.empty()) return {};
  return compute_duration_stats(alignment_words(read_alignment_file(paths.alignments)));
}

inline Corpus load_corpus(const std::string& name, const CorpusPaths& paths, const DurationStats& stats,
                          const LoadOptions& opts, std::vector<std::string>* warnings = nullptr) {
  Corpus c;
  c.name = name;
  auto trees = read_tree_file(paths.trees);
  if (opts.speechify_trees)
    for (auto& t : trees) t = speechify(std::move(t));
  c.examples = examples_from_trees(trees, read_ids(paths.ids, trees.size()));
  if (opts.with_prosody) {
    check_alignment_words(c.examples, paths.alignments);
    attach_features(c.examples, features_for(paths, stats, opts.prosody, opts.cache_dir, warnings),
                    paths.features.empty() ? paths.alignments : paths.features);
  }
  if (!paths.vectors.empty()) {
    c.vectors = std::make_shared<VectorStore>(load_vector_store(paths.vectors));
    for (auto& e : c.examples) e.input.vectors = c.vectors.get();
    if (warnings)
      for (const auto& w : c.vectors->warnings) warnings->push_back(w);
  }
  return c;
}

}  // namespace prosparse
