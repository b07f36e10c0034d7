#pragma once

// Toy spoken treebank with time alignments and energy/pitch tracks. Phrase
// boundaries carry pauses, pre-boundary lengthening and pitch falls. A share
// of sentences are 7-noun compounds whose two bracketings differ completely
// and are told apart only by where the long pause falls.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "prosparse/embeddings.hpp"
#include "prosparse/prosody.hpp"
#include "prosparse/treebank.hpp"

namespace prosparse {

struct SyntheticOptions {
  std::size_t sentences = 200;
  std::uint64_t seed = 7;
  double ambiguous_fraction = 0.3;
  std::size_t speakers = 4;
  std::size_t vector_dim = 16;
  std::string id_prefix = "syn";
};

struct SyntheticCorpus {
  std::vector<std::string> ids;
  std::vector<Tree> trees;
  std::vector<AlignedSentence> alignments;
  std::map<std::string, FrameTrack> tracks;
  VectorStore vectors;
};

inline const std::vector<std::string>& synthetic_nouns() {
  static const std::vector<std::string> k = {"dog", "cat",  "house", "car",  "tree", "book",
                                             "man", "road", "plan",  "song", "team", "game"};
  return k;
}

// Compound A: ((((n1 n2) n3) n4) n5) (n6 n7). Compound B: n1 ((((n2 n3) n4) n5) n6), n7.
// The two share only the root bracket.
inline Tree ambiguous_tree(const std::vector<std::string>& nouns, bool variant_a) {
  if (nouns.size() != 7) fail(ErrorKind::kData, "ambiguous_tree: needs 7 words");
  std::vector<Tree> w;
  for (const auto& n : nouns) w.push_back(Tree::leaf(n, "NN"));
  auto np = [](std::vector<Tree> kids) { return Tree::node("NP", std::move(kids)); };
  if (variant_a) {
    Tree left = np({np({np({np({w[0], w[1]}), w[2]}), w[3]}), w[4]});
    return np({std::move(left), np({w[5], w[6]})});
  }
  Tree inner = np({np({np({np({w[1], w[2]}), w[3]}), w[4]}), w[5]});
  return np({np({w[0], std::move(inner)}), w[6]});
}

// Fencepost carrying the long pause for each compound variant.
inline std::size_t ambiguous_pause_fencepost(bool variant_a) { return variant_a ? 5 : 1; }

namespace detail {

class ToyGrammar {
 public:
  explicit ToyGrammar(std::mt19937_64& rng) : rng_(rng) {}

  // Returns the tree and the fenceposts after which a prosodic break falls.
  Tree sentence(std::vector<std::size_t>& breaks) {
    std::vector<Tree> kids;
    std::size_t pos = 0;
    if (chance(0.25)) {
      kids.push_back(Tree::node("INTJ", {leaf("UH")}));
      pos += 1;
      breaks.push_back(pos);
    }
    Tree subject = np(0);
    if (chance(0.15)) {
      Tree edited = Tree::node("EDITED", {subject});
      pos += edited.num_leaves();
      kids.push_back(std::move(edited));
      breaks.push_back(pos);
    }
    pos += subject.num_leaves();
    kids.push_back(std::move(subject));
    if (kids.back().num_leaves() > 1 && chance(0.5)) breaks.push_back(pos);
    kids.push_back(vp(pos, breaks));
    return Tree::node("S", std::move(kids));
  }

 private:
  bool chance(double p) { return std::uniform_real_distribution<double>(0, 1)(rng_) < p; }

  Tree leaf(const std::string& tag) {
    static const std::map<std::string, std::vector<std::string>> kLex = {
        {"DT", {"the", "a", "this", "that"}},        {"NN", synthetic_nouns()},
        {"PRP", {"i", "you", "we", "they"}},         {"VBD", {"saw", "liked", "found", "took", "made", "had"}},
        {"VB", {"see", "like", "find", "take"}},     {"MD", {"can", "will"}},
        {"JJ", {"big", "old", "red", "new"}},        {"IN", {"in", "on", "with", "near"}},
        {"UH", {"uh", "um", "well", "yeah"}}};
    const auto& words = kLex.at(tag);
    std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
    return Tree::leaf(words[pick(rng_)], tag);
  }

  Tree np(int depth) {
    double r = std::uniform_real_distribution<double>(0, 1)(rng_);
    if (r < 0.25) return Tree::node("NP", {leaf("PRP")});
    if (r < 0.6 || depth >= 2) return Tree::node("NP", {leaf("DT"), leaf("NN")});
    if (r < 0.85) return Tree::node("NP", {leaf("DT"), leaf("JJ"), leaf("NN")});
    return Tree::node("NP", {np(depth + 1), pp(depth + 1)});
  }

  Tree pp(int depth) { return Tree::node("PP", {leaf("IN"), np(depth)}); }

  Tree vp(std::size_t start, std::vector<std::size_t>& breaks) {
    double r = std::uniform_real_distribution<double>(0, 1)(rng_);
    if (r < 0.15) return Tree::node("VP", {leaf("VBD")});
    if (r < 0.55) return Tree::node("VP", {leaf("VBD"), np(1)});
    if (r < 0.8) {
      Tree obj = np(1);
      std::size_t before_pp = start + 1 + obj.num_leaves();
      if (chance(0.3)) breaks.push_back(before_pp);
      return Tree::node("VP", {leaf("VBD"), std::move(obj), pp(1)});
    }
    return Tree::node("VP", {leaf("MD"), Tree::node("VP", {leaf("VB"), np(1)})});
  }

  std::mt19937_64& rng_;
};

inline double word_base_duration(const std::string& w) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : w) h = (h ^ c) * 1099511628211ULL;
  return 0.16 + 0.14 * static_cast<double>(h % 100) / 100.0;
}

}  // namespace detail

struct SpeakerTimeline {
  double cursor = 0.5;
  double base_f0 = 120;
  std::vector<std::pair<double, double>> words;  // (start, end)
  std::vector<double> f0_target;                 // per word
  std::vector<bool> falling;                     // pitch fall at word end
};

// Places one sentence on its speaker's timeline and records the alignment.
inline AlignedSentence realize_sentence(const std::string& id, const std::vector<std::string>& words,
                                        const std::vector<std::size_t>& breaks, const std::string& speaker,
                                        SpeakerTimeline& tl, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  AlignedSentence s;
  s.sentence_id = id;
  double t = tl.cursor;
  const std::size_t T = words.size();
  for (std::size_t i = 0; i < T; ++i) {
    bool boundary_after = std::find(breaks.begin(), breaks.end(), i + 1) != breaks.end() && i + 1 < T;
    double dur = detail::word_base_duration(words[i]) * (0.9 + 0.2 * u(rng)) * (boundary_after ? 1.4 : 1.0);
    WordAlignment w{words[i], std::round(t * 1000) / 1000, std::round((t + dur) * 1000) / 1000, speaker};
    s.words.push_back(w);
    tl.words.emplace_back(w.start, w.end);
    double decl = 1.0 - 0.15 * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(1, T - 1));
    tl.f0_target.push_back(tl.base_f0 * decl);
    tl.falling.push_back(boundary_after || i + 1 == T);
    t = w.end + (boundary_after ? 0.3 + 0.3 * u(rng) : 0.03 * u(rng));
  }
  tl.cursor = s.words.back().end + 0.8;
  return s;
}

inline FrameTrack render_track(const SpeakerTimeline& tl, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0, 1);
  FrameTrack tr;
  tr.frame_period = 0.010;
  tr.start_time = 0;
  const std::size_t n = static_cast<std::size_t>(std::ceil((tl.cursor + 0.5) / tr.frame_period));
  tr.energy.assign(n, 0);
  tr.f0.assign(n, 0);
  std::size_t w = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double t = tr.start_time + tr.frame_period * static_cast<double>(k);
    while (w < tl.words.size() && tl.words[w].second <= t) ++w;
    bool inside = w < tl.words.size() && tl.words[w].first <= t;
    if (inside) {
      double rel = (t - tl.words[w].first) / (tl.words[w].second - tl.words[w].first);
      double env = std::sin(3.14159265358979 * std::clamp(rel, 0.0, 1.0));
      tr.energy[k] = 1.0 + 1.5 * env + 0.05 * noise(rng);
      double f = tl.f0_target[w] * (1.0 + 0.03 * env);
      if (tl.falling[w] && rel > 0.5) f -= 30.0 * (rel - 0.5) * 2.0;
      tr.f0[k] = std::max(50.0, f + 2.0 * noise(rng));
    } else {
      tr.energy[k] = 0.05 + 0.02 * std::abs(noise(rng));
      tr.f0[k] = 0;
    }
  }
  // Round to the precision frame files are written with, so that in-memory and
  // on-disk tracks agree exactly.
  for (auto& v : tr.energy) v = std::round(v * 1e4) / 1e4;
  for (auto& v : tr.f0) v = std::round(v * 1e4) / 1e4;
  tr.mark_voicing();
  return tr;
}

// Static per-type vectors (deterministic in the word), standing in for an
// external embedding producer.
inline std::vector<float> synthetic_word_vector(const std::string& w, std::size_t dim) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : w) h = (h ^ c) * 1099511628211ULL;
  std::mt19937_64 rng(h);
  std::normal_distribution<float> d(0.f, 1.f);
  std::vector<float> v(dim);
  for (auto& x : v) x = std::round(d(rng) * 1e4f) / 1e4f;
  return v;
}

namespace detail {

struct PlannedSentence {
  Tree tree;
  std::vector<std::size_t> breaks;
};

inline SyntheticCorpus assemble(const std::vector<PlannedSentence>& plan, const SyntheticOptions& opts,
                                std::mt19937_64& rng) {
  SyntheticCorpus out;
  std::vector<SpeakerTimeline> timelines(std::max<std::size_t>(1, opts.speakers));
  for (std::size_t s = 0; s < timelines.size(); ++s) timelines[s].base_f0 = 100.0 + 35.0 * static_cast<double>(s);
  out.vectors.dim = opts.vector_dim;
  out.vectors.producer = "synthetic-static";
  for (std::size_t i = 0; i < plan.size(); ++i) {
    std::string id = opts.id_prefix + "-" + std::to_string(i + 1);
    std::size_t spk = i % timelines.size();
    std::string speaker = "spk" + std::to_string(spk + 1);
    auto words = plan[i].tree.words();
    out.ids.push_back(id);
    out.trees.push_back(plan[i].tree);
    out.alignments.push_back(realize_sentence(id, words, plan[i].breaks, speaker, timelines[spk], rng));
    if (opts.vector_dim > 0) {
      auto m = Tensor<float>::matrix(words.size(), opts.vector_dim);
      for (std::size_t r = 0; r < words.size(); ++r) {
        auto v = synthetic_word_vector(words[r], opts.vector_dim);
        std::copy(v.begin(), v.end(), m.data() + r * opts.vector_dim);
      }
      out.vectors.sentences.emplace(id, std::move(m));
    }
  }
  for (std::size_t s = 0; s < timelines.size(); ++s) {
    if (timelines[s].words.empty()) continue;
    out.tracks.emplace("spk" + std::to_string(s + 1), render_track(timelines[s], rng));
  }
  return out;
}

inline std::vector<std::string> random_nouns(std::mt19937_64& rng) {
  const auto& pool = synthetic_nouns();
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  std::vector<std::string> w(7);
  for (auto& x : w) x = pool[pick(rng)];
  return w;
}

}  // namespace detail

inline SyntheticCorpus generate_synthetic(const SyntheticOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(0, 1);
  detail::ToyGrammar grammar(rng);
  std::vector<detail::PlannedSentence> plan;
  for (std::size_t i = 0; i < opts.sentences; ++i) {
    detail::PlannedSentence p;
    if (u(rng) < opts.ambiguous_fraction) {
      bool a = u(rng) < 0.5;
      p.tree = ambiguous_tree(detail::random_nouns(rng), a);
      p.breaks = {ambiguous_pause_fencepost(a)};
    } else {
      p.tree = grammar.sentence(p.breaks);
    }
    plan.push_back(std::move(p));
  }
  return detail::assemble(plan, opts, rng);
}

// Held-out probe set: `pairs` word sequences, each realized once as compound
// A and once as compound B (A first).
inline SyntheticCorpus generate_ambiguous_pairs(std::size_t pairs, std::uint64_t seed,
                                                const SyntheticOptions& base = {}) {
  SyntheticOptions opts = base;
  opts.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<detail::PlannedSentence> plan;
  for (std::size_t i = 0; i < pairs; ++i) {
    auto words = detail::random_nouns(rng);
    for (bool a : {true, false}) plan.push_back({ambiguous_tree(words, a), {ambiguous_pause_fencepost(a)}});
  }
  return detail::assemble(plan, opts, rng);
}

// trees.txt, ids.txt, alignments.tsv, frames/<speaker>.csv, vectors.txt
inline void write_synthetic(const SyntheticCorpus& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "frames");
  write_tree_file((fs::path(dir) / "trees.txt").string(), c.trees);
  {
    std::ofstream ids((fs::path(dir) / "ids.txt").string());
    for (const auto& id : c.ids) ids << id << '\n';
  }
  write_alignment_file((fs::path(dir) / "alignments.tsv").string(), c.alignments);
  for (const auto& [spk, tr] : c.tracks) write_frame_file((fs::path(dir) / "frames" / (spk + ".csv")).string(), tr);
  if (c.vectors.dim > 0) write_vector_store((fs::path(dir) / "vectors.txt").string(), c.vectors);
}

}  // namespace prosparse
