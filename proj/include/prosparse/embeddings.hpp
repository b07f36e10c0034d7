#pragma once

// Word vectors in three modes: learned jointly, pretrained and frozen
// (per-sentence vector stores), and pretrained then fine-tuned.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prosparse/autodiff.hpp"

namespace prosparse {

enum class EmbeddingMode { kLearned, kFrozen, kFinetuned };

inline const char* to_string(EmbeddingMode m) {
  switch (m) {
    case EmbeddingMode::kLearned:
      return "learned";
    case EmbeddingMode::kFrozen:
      return "frozen";
    case EmbeddingMode::kFinetuned:
      return "finetuned";
  }
  return "?";
}

inline EmbeddingMode parse_embedding_mode(const std::string& s) {
  if (s == "learned") return EmbeddingMode::kLearned;
  if (s == "frozen") return EmbeddingMode::kFrozen;
  if (s == "finetuned") return EmbeddingMode::kFinetuned;
  fail(ErrorKind::kConfig, "unknown embedding mode '" + s + "' (learned|frozen|finetuned)");
}

struct EmbeddingConfig {
  EmbeddingMode mode = EmbeddingMode::kFrozen;
  std::size_t dim = 128;  // learned mode only; stores declare their own
  std::size_t min_count = 2;
  double unk_dropout = 0.01;
};

// Index 0 is the unknown-word row.
class WordVocab {
 public:
  static constexpr const char* kUnk = "<unk>";

  WordVocab() { add(kUnk); }

  static WordVocab build(const std::vector<std::vector<std::string>>& sentences, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    for (const auto& s : sentences)
      for (const auto& w : s) ++counts[w];
    WordVocab v;
    for (const auto& [w, n] : counts)
      if (n >= min_count && w != kUnk) v.add(w);
    return v;
  }

  static WordVocab from_words(const std::vector<std::string>& words) {
    WordVocab v;
    for (const auto& w : words)
      if (w != kUnk) v.add(w);
    return v;
  }

  std::size_t index(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? 0 : it->second;
  }
  bool contains(const std::string& w) const { return index_.count(w) > 0; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  void add(const std::string& w) {
    if (index_.count(w)) return;
    index_.emplace(w, words_.size());
    words_.push_back(w);
  }
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Precomputed word-level vectors per sentence (contextual or static).
struct VectorStore {
  std::size_t dim = 0;
  std::string producer;
  std::map<std::string, Tensor<float>> sentences;
  std::vector<std::string> warnings;

  const Tensor<float>* find(const std::string& id) const {
    auto it = sentences.find(id);
    return it == sentences.end() ? nullptr : &it->second;
  }
  std::size_t size() const { return sentences.size(); }

  double coverage(const std::vector<std::string>& ids) const {
    if (ids.empty()) return 1.0;
    std::size_t hit = 0;
    for (const auto& id : ids) hit += sentences.count(id);
    return static_cast<double>(hit) / static_cast<double>(ids.size());
  }
};

// Header "dim=<d> producer=<name>", then blocks "sentence <id> <T>" followed
// by T lines of d space-separated reals.
inline VectorStore load_vector_store(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "cannot open vector store: " + path);
  VectorStore store;
  std::string line;
  std::size_t lineno = 0;
  auto where = [&] { return path + ":" + std::to_string(lineno) + ": "; };
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      have_header = true;
      break;
    }
  }
  if (!have_header) {
    store.warnings.push_back("empty vector store: " + path);
    return store;
  }
  {
    std::istringstream hs(line);
    std::string tok;
    bool have_dim = false;
    while (hs >> tok) {
      if (tok.rfind("dim=", 0) == 0) {
        try {
          store.dim = std::stoul(tok.substr(4));
        } catch (const std::exception&) {
          fail(ErrorKind::kData, where() + "bad dim in header");
        }
        have_dim = true;
      } else if (tok.rfind("producer=", 0) == 0) {
        store.producer = tok.substr(9);
      }
    }
    if (!have_dim || store.dim == 0) fail(ErrorKind::kData, where() + "header must declare dim=<d>");
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream bs(line);
    std::string kw, id;
    long T = -1;
    if (!(bs >> kw >> id >> T) || kw != "sentence" || T < 0) {
      fail(ErrorKind::kData, where() + "expected 'sentence <id> <T>'");
    }
    auto m = Tensor<float>::matrix(static_cast<std::size_t>(T), store.dim);
    for (long r = 0; r < T; ++r) {
      if (!std::getline(in, line)) fail(ErrorKind::kData, where() + "truncated block for sentence " + id);
      ++lineno;
      std::istringstream vs(line);
      std::vector<float> row;
      float v;
      while (vs >> v) row.push_back(v);
      if (row.size() != store.dim) {
        fail(ErrorKind::kData, where() + "dim inconsistency: sentence " + id + " has a " +
                                   std::to_string(row.size()) + "-dim vector, store declares " +
                                   std::to_string(store.dim));
      }
      std::copy(row.begin(), row.end(), m.data() + r * store.dim);
    }
    if (!store.sentences.emplace(id, std::move(m)).second) {
      fail(ErrorKind::kData, where() + "duplicate sentence id " + id);
    }
  }
  return store;
}

inline void write_vector_store(const std::string& path, const VectorStore& store) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kData, "cannot write vector store: " + path);
  out << "dim=" << store.dim << " producer=" << (store.producer.empty() ? "unknown" : store.producer) << '\n';
  out.precision(9);
  for (const auto& [id, m] : store.sentences) {
    out << "sentence " << id << ' ' << m.rows() << '\n';
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) out << (c ? " " : "") << m(r, c);
      out << '\n';
    }
  }
}

struct TokenizedSentence {
  std::string id;
  std::vector<std::string> tokens;
};

template <typename Real>
class EmbeddingProvider {
 public:
  // `vectors` is required for frozen and fine-tuned modes. Fine-tuned tables
  // start from the word-type average of the store's vectors over `corpus`.
  EmbeddingProvider(const EmbeddingConfig& config, WordVocab vocab, ParameterStore<Real>& params,
                    std::mt19937_64& rng, const VectorStore* vectors,
                    const std::vector<TokenizedSentence>& corpus = {})
      : config_(config), vocab_(std::move(vocab)), vectors_(vectors) {
    switch (config_.mode) {
      case EmbeddingMode::kLearned:
        dim_ = config_.dim;
        table_ = &params.add("embed.table", {vocab_.size(), dim_}, Init::kNormal, rng, 0.1);
        break;
      case EmbeddingMode::kFrozen:
        if (!vectors_ || vectors_->dim == 0) {
          fail(ErrorKind::kConfig, "frozen embeddings need a non-empty vector store");
        }
        dim_ = vectors_->dim;
        break;
      case EmbeddingMode::kFinetuned: {
        // Without a store the table keeps its random start; used when the
        // values come from a checkpoint.
        dim_ = vectors_ && vectors_->dim > 0 ? vectors_->dim : config_.dim;
        table_ = &params.add("embed.table", {vocab_.size(), dim_}, Init::kNormal, rng, 0.1);
        if (vectors_ && vectors_->dim > 0) init_from_store(corpus);
        break;
      }
    }
  }

  EmbeddingMode mode() const { return config_.mode; }
  std::size_t dim() const { return dim_; }
  const WordVocab& vocab() const { return vocab_; }
  void set_vectors(const VectorStore* vectors) { vectors_ = vectors; }
  const VectorStore* vectors() const { return vectors_; }

  // [T x dim]. Gradients reach the table only in learned/fine-tuned modes.
  // `store` overrides the attached vector store for this sentence.
  Var embed(Graph<Real>& g, const std::string& sentence_id, const std::vector<std::string>& tokens,
            const VectorStore* store = nullptr) const {
    if (config_.mode == EmbeddingMode::kFrozen) {
      if (!store) store = vectors_;
      if (!store) fail(ErrorKind::kData, "no vector store attached for frozen embeddings");
      if (store->dim != dim_) {
        fail(ErrorKind::kData, "vector store dim " + std::to_string(store->dim) + " does not match embedding dim " +
                                   std::to_string(dim_));
      }
      const auto* m = store->find(sentence_id);
      if (!m) fail(ErrorKind::kData, "sentence " + sentence_id + " missing from vector store");
      if (m->rows() != tokens.size()) {
        fail(ErrorKind::kAlignment, "sentence " + sentence_id + ": vector store has " + std::to_string(m->rows()) +
                                        " vectors for " + std::to_string(tokens.size()) + " tokens");
      }
      return g.constant(m->template cast<Real>());
    }
    std::vector<std::size_t> ids;
    ids.reserve(tokens.size());
    std::bernoulli_distribution drop(config_.unk_dropout);
    for (const auto& t : tokens) {
      std::size_t id = vocab_.index(t);
      if (g.training() && config_.unk_dropout > 0 && drop(g.rng())) id = 0;
      ids.push_back(id);
    }
    return ad::embedding_lookup(g, g.param(*table_), std::move(ids));
  }

 private:
  void init_from_store(const std::vector<TokenizedSentence>& corpus) {
    std::vector<std::vector<double>> sums(vocab_.size(), std::vector<double>(dim_, 0.0));
    std::vector<std::size_t> counts(vocab_.size(), 0);
    std::vector<double> all(dim_, 0.0);
    std::size_t all_n = 0;
    for (const auto& s : corpus) {
      const auto* m = vectors_->find(s.id);
      if (!m || m->rows() != s.tokens.size()) continue;
      for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        std::size_t id = vocab_.index(s.tokens[i]);
        for (std::size_t c = 0; c < dim_; ++c) {
          sums[id][c] += (*m)(i, c);
          all[c] += (*m)(i, c);
        }
        ++counts[id];
        ++all_n;
      }
    }
    auto& T = table_->value;
    for (std::size_t w = 0; w < vocab_.size(); ++w) {
      if (counts[w] == 0) continue;
      for (std::size_t c = 0; c < dim_; ++c) T(w, c) = static_cast<Real>(sums[w][c] / counts[w]);
    }
    if (all_n > 0) {
      for (std::size_t c = 0; c < dim_; ++c) T(0, c) = static_cast<Real>(all[c] / all_n);
    }
  }

  EmbeddingConfig config_;
  WordVocab vocab_;
  const VectorStore* vectors_ = nullptr;
  Parameter<Real>* table_ = nullptr;
  std::size_t dim_ = 0;
};

}  // namespace prosparse
