#pragma once

// The full parser: word vectors, optional prosodic stream, factored encoder
// and labeled span classifier, plus checkpoint metadata.

#include <json.hpp>

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prosparse/chart.hpp"
#include "prosparse/embeddings.hpp"
#include "prosparse/encoder.hpp"
#include "prosparse/features.hpp"

namespace prosparse {

using json = nlohmann::json;

struct ModelConfig {
  EncoderConfig encoder;
  CnnConfig cnn;
  EmbeddingConfig embedding;
  ProsodyOptions prosody_options;
  bool use_prosody = true;
  bool use_pause_duration = true;
  bool use_cnn = true;
  std::size_t label_hidden = 250;

  std::size_t prosody_dim() const {
    if (!use_prosody) return 0;
    return (use_pause_duration ? kPhiDim : 0) + (use_cnn ? cnn.output_dim() : 0);
  }

  void validate() const {
    encoder.validate(use_prosody);
    if (use_prosody) {
      if (!use_pause_duration && !use_cnn) {
        fail(ErrorKind::kConfig, "model: prosody enabled but both pause/duration and cnn features are off");
      }
      if (use_cnn) cnn.validate(prosody_options.max_frames);
    }
    if (label_hidden == 0) fail(ErrorKind::kConfig, "model: label_hidden must be >= 1");
    if (embedding.mode == EmbeddingMode::kLearned && embedding.dim == 0) {
      fail(ErrorKind::kConfig, "model: learned embedding dim must be >= 1");
    }
  }
};

// Reads `key` into `out` when present; type errors are config errors.
template <typename T>
void read_key(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, where + "." + key + ": " + e.what());
  }
}

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::kConfig, where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      fail(ErrorKind::kConfig, where + ": unknown key '" + it.key() + "'");
    }
  }
}

inline json to_json(const ModelConfig& c) {
  return json{{"encoder",
               {{"layers", c.encoder.layers},
                {"heads", c.encoder.heads},
                {"d_content", c.encoder.d_content},
                {"d_position", c.encoder.d_position},
                {"d_prosody", c.encoder.d_prosody},
                {"d_ff", c.encoder.d_ff},
                {"dropout", c.encoder.dropout},
                {"max_len", c.encoder.max_len}}},
              {"cnn", {{"widths", c.cnn.widths}, {"filters_per_width", c.cnn.filters_per_width}}},
              {"embedding",
               {{"mode", to_string(c.embedding.mode)},
                {"dim", c.embedding.dim},
                {"min_count", c.embedding.min_count},
                {"unk_dropout", c.embedding.unk_dropout}}},
              {"prosody",
               {{"enabled", c.use_prosody},
                {"pause_duration", c.use_pause_duration},
                {"cnn", c.use_cnn},
                {"context_s", c.prosody_options.context_s},
                {"max_frames", c.prosody_options.max_frames}}},
              {"label_hidden", c.label_hidden}};
}

inline ModelConfig model_config_from_json(const json& j, const std::string& where = "model") {
  ModelConfig c;
  reject_unknown_keys(j, {"encoder", "cnn", "embedding", "prosody", "label_hidden"}, where);
  if (j.contains("encoder")) {
    const auto& e = j["encoder"];
    const std::string w = where + ".encoder";
    reject_unknown_keys(e, {"layers", "heads", "d_content", "d_position", "d_prosody", "d_ff", "dropout", "max_len"}, w);
    read_key(e, "layers", c.encoder.layers, w);
    read_key(e, "heads", c.encoder.heads, w);
    read_key(e, "d_content", c.encoder.d_content, w);
    read_key(e, "d_position", c.encoder.d_position, w);
    read_key(e, "d_prosody", c.encoder.d_prosody, w);
    read_key(e, "d_ff", c.encoder.d_ff, w);
    read_key(e, "dropout", c.encoder.dropout, w);
    read_key(e, "max_len", c.encoder.max_len, w);
  }
  if (j.contains("cnn")) {
    const auto& e = j["cnn"];
    const std::string w = where + ".cnn";
    reject_unknown_keys(e, {"widths", "filters_per_width"}, w);
    read_key(e, "widths", c.cnn.widths, w);
    read_key(e, "filters_per_width", c.cnn.filters_per_width, w);
  }
  if (j.contains("embedding")) {
    const auto& e = j["embedding"];
    const std::string w = where + ".embedding";
    reject_unknown_keys(e, {"mode", "dim", "min_count", "unk_dropout"}, w);
    std::string mode = to_string(c.embedding.mode);
    read_key(e, "mode", mode, w);
    c.embedding.mode = parse_embedding_mode(mode);
    read_key(e, "dim", c.embedding.dim, w);
    read_key(e, "min_count", c.embedding.min_count, w);
    read_key(e, "unk_dropout", c.embedding.unk_dropout, w);
  }
  if (j.contains("prosody")) {
    const auto& e = j["prosody"];
    const std::string w = where + ".prosody";
    reject_unknown_keys(e, {"enabled", "pause_duration", "cnn", "context_s", "max_frames"}, w);
    read_key(e, "enabled", c.use_prosody, w);
    read_key(e, "pause_duration", c.use_pause_duration, w);
    read_key(e, "cnn", c.use_cnn, w);
    read_key(e, "context_s", c.prosody_options.context_s, w);
    read_key(e, "max_frames", c.prosody_options.max_frames, w);
  }
  read_key(j, "label_hidden", c.label_hidden, where);
  return c;
}

inline json to_json(const DurationStats& s) {
  return json{{"global_mean", s.global_mean}, {"mean_by_word", s.mean_by_word}};
}

inline DurationStats duration_stats_from_json(const json& j) {
  DurationStats s;
  s.global_mean = j.at("global_mean").get<double>();
  s.mean_by_word = j.at("mean_by_word").get<std::map<std::string, double>>();
  return s;
}

struct SentenceInput {
  std::string id;
  std::vector<std::string> words;
  std::vector<std::string> tags;
  std::optional<ProsodicFeatures> prosody;
  const VectorStore* vectors = nullptr;  // frozen-mode vectors for this sentence

  std::vector<Leaf> leaves() const {
    std::vector<Leaf> out;
    for (std::size_t i = 0; i < words.size(); ++i) out.push_back({words[i], i < tags.size() ? tags[i] : "XX"});
    return out;
  }
};

struct ModelMetadata {
  ModelConfig config;
  std::vector<std::string> labels;
  std::vector<std::string> words;
  DurationStats duration_stats;
  std::vector<std::string> lineage;
  std::string vector_producer;
};

template <typename Real>
class ParserModel {
 public:
  // `vectors` is required for frozen mode; fine-tuned tables start from
  // `corpus` averages when a store is given.
  ParserModel(ModelConfig config, LabelVocab labels, WordVocab words, const VectorStore* vectors, std::uint64_t seed,
              const std::vector<TokenizedSentence>& corpus = {})
      : config_(std::move(config)), labels_(std::move(labels)), rng_(seed) {
    config_.validate();
    embed_ = std::make_unique<EmbeddingProvider<Real>>(config_.embedding, std::move(words), params_, rng_, vectors,
                                                       corpus);
    config_.embedding.dim = embed_->dim();
    if (vectors) vector_producer_ = vectors->producer;
    if (config_.use_prosody && config_.use_cnn) cnn_ = std::make_unique<ProsodyCnn<Real>>(config_.cnn, params_, rng_);
    if (config_.use_prosody && config_.use_pause_duration) {
      pause_ = std::make_unique<PauseDurationEmbedder<Real>>(params_, rng_);
    }
    encoder_ = std::make_unique<Encoder<Real>>(config_.encoder, config_.use_prosody, embed_->dim(),
                                               config_.prosody_dim(), params_, rng_);
    std::vector<std::size_t> widths;
    for (Stream s : encoder_->streams()) widths.push_back(encoder_->width(s));
    scorer_ = std::make_unique<SpanScorer<Real>>(encoder_->streams(), widths, config_.label_hidden, labels_.size(),
                                                 params_, rng_);
  }

  const ModelConfig& config() const { return config_; }
  const LabelVocab& labels() const { return labels_; }
  const WordVocab& words() const { return embed_->vocab(); }
  ParameterStore<Real>& params() { return params_; }
  const ParameterStore<Real>& params() const { return params_; }
  EmbeddingProvider<Real>& embeddings() { return *embed_; }
  const Encoder<Real>& encoder() const { return *encoder_; }
  bool uses_prosody() const { return config_.use_prosody; }

  DurationStats& duration_stats() { return duration_stats_; }
  const DurationStats& duration_stats() const { return duration_stats_; }
  std::vector<std::string>& lineage() { return lineage_; }

  // Assembled prosodic input [T x prosody_dim]: [phi_i ; s_i].
  Var prosody_input(Graph<Real>& g, const SentenceInput& s) const {
    if (!config_.use_prosody) return Var{};
    if (!s.prosody) {
      fail(ErrorKind::kData, "sentence " + s.id + ": model uses prosody but no prosodic features were supplied");
    }
    const auto& f = *s.prosody;
    if (f.pauses.size() != s.words.size() || f.patches.size() != s.words.size()) {
      fail(ErrorKind::kAlignment, "sentence " + s.id + ": " + std::to_string(f.pauses.size()) +
                                      " prosodic records for " + std::to_string(s.words.size()) + " words");
    }
    std::vector<Var> parts;
    if (pause_) parts.push_back(pause_->forward(g, f.pauses));
    if (cnn_) {
      std::vector<Var> rows;
      for (const auto& patch : f.patches) rows.push_back(cnn_->forward(g, patch));
      parts.push_back(ad::concat(g, rows, 0));
    }
    return ad::concat(g, parts, 1);
  }

  EncodedSentence encode(Graph<Real>& g, const SentenceInput& s, AttentionTrace<Real>* trace = nullptr) const {
    if (s.words.empty()) fail(ErrorKind::kData, "sentence " + s.id + ": empty sentence");
    Var words = embed_->embed(g, s.id, s.words, s.vectors);
    return encoder_->encode(g, words, prosody_input(g, s), trace);
  }

  // [num_spans x (L - 1)] in SpanIndex order.
  Var span_logits(Graph<Real>& g, const SentenceInput& s, AttentionTrace<Real>* trace = nullptr) const {
    auto enc = encode(g, s, trace);
    return scorer_->forward(g, enc, SpanIndex(s.words.size()));
  }

  SpanScores span_scores(const SentenceInput& s) const {
    Graph<Real> g(false);
    Var logits = span_logits(g, s);
    return scorer_->to_scores(g.value(logits), SpanIndex(s.words.size()), s.words.size());
  }

  DecodedTree parse(const SentenceInput& s) const { return cky_decode(span_scores(s), s.leaves(), labels_); }

  // Structured hinge on one sentence. The decoded violator is recorded as a
  // branch so finite-difference checks stay on one linear piece.
  Var loss(Graph<Real>& g, const SentenceInput& s, const std::vector<IndexedSpan>& gold,
           MarginResult* details = nullptr) const {
    const std::size_t T = s.words.size();
    SpanIndex index(T);
    Var logits = span_logits(g, s);
    SpanScores scores = scorer_->to_scores(g.value(logits), index, T);
    MarginResult m = margin_loss(scores, gold);
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& sp : m.predicted) {
      h = (h ^ static_cast<std::uint64_t>(sp.a)) * 1099511628211ULL;
      h = (h ^ static_cast<std::uint64_t>(sp.b)) * 1099511628211ULL;
      h = (h ^ sp.label) * 1099511628211ULL;
    }
    g.mark_branch(h);
    const std::size_t cols = labels_.size() - 1;
    std::vector<std::pair<std::size_t, Real>> entries;
    for (const auto& sp : m.predicted)
      if (sp.label != 0) entries.push_back({index.row(sp.a, sp.b) * cols + sp.label - 1, Real(1)});
    for (const auto& sp : gold)
      if (sp.label != 0) entries.push_back({index.row(sp.a, sp.b) * cols + sp.label - 1, Real(-1)});
    if (details) *details = m;
    return ad::weighted_entries(g, logits, std::move(entries), static_cast<Real>(m.hamming));
  }

  std::vector<IndexedSpan> gold_spans(const Tree& tree) const {
    return index_gold_spans(tree_to_spans(tree), labels_, tree.num_leaves());
  }

  ModelMetadata metadata() const {
    ModelMetadata m;
    m.config = config_;
    m.labels = labels_.symbols();
    m.words = embed_->vocab().words();
    m.duration_stats = duration_stats_;
    m.lineage = lineage_;
    m.vector_producer = vector_producer_;
    return m;
  }

  void save(const std::string& path) const {
    auto m = metadata();
    json meta{{"format", "prosparse-model"},
              {"model", to_json(m.config)},
              {"labels", m.labels},
              {"words", m.words},
              {"duration_stats", to_json(m.duration_stats)},
              {"lineage", m.lineage},
              {"vector_producer", m.vector_producer}};
    CheckpointData ck;
    ck.metadata = meta.dump();
    ck.tensors = snapshot(params_);
    write_checkpoint(path, ck);
  }

  static ModelMetadata read_metadata(const CheckpointData& ck, const std::string& path) {
    ModelMetadata m;
    try {
      auto meta = json::parse(ck.metadata);
      if (meta.value("format", "") != "prosparse-model") fail(ErrorKind::kCheckpoint, "not a parser checkpoint: " + path);
      m.config = model_config_from_json(meta.at("model"), "checkpoint.model");
      m.labels = meta.at("labels").get<std::vector<std::string>>();
      m.words = meta.at("words").get<std::vector<std::string>>();
      m.duration_stats = duration_stats_from_json(meta.at("duration_stats"));
      m.lineage = meta.at("lineage").get<std::vector<std::string>>();
      m.vector_producer = meta.value("vector_producer", "");
    } catch (const json::exception& e) {
      fail(ErrorKind::kCheckpoint, "bad checkpoint metadata in " + path + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorKind::kCheckpoint, path + ": " + e.what());
    }
    return m;
  }

  static std::unique_ptr<ParserModel> load(const std::string& path, const VectorStore* vectors) {
    auto ck = read_checkpoint(path);
    auto m = read_metadata(ck, path);
    if (m.config.embedding.mode == EmbeddingMode::kFrozen) {
      if (!vectors) fail(ErrorKind::kConfig, "checkpoint " + path + " uses frozen embeddings: a vector store is required");
      if (vectors->dim != m.config.embedding.dim) {
        fail(ErrorKind::kCheckpoint, "vector store dim " + std::to_string(vectors->dim) + " does not match checkpoint dim " +
                                         std::to_string(m.config.embedding.dim));
      }
    }
    const VectorStore* store = m.config.embedding.mode == EmbeddingMode::kFrozen ? vectors : nullptr;
    auto model = std::make_unique<ParserModel>(m.config, LabelVocab::from_symbols(m.labels),
                                               WordVocab::from_words(m.words), store, 0);
    if (m.config.embedding.mode != EmbeddingMode::kFrozen) model->embed_->set_vectors(vectors);
    restore(model->params_, ck.tensors);
    model->duration_stats_ = m.duration_stats;
    model->lineage_ = m.lineage;
    model->vector_producer_ = m.vector_producer;
    return model;
  }

 private:
  ModelConfig config_;
  LabelVocab labels_;
  std::mt19937_64 rng_;
  ParameterStore<Real> params_;
  std::unique_ptr<EmbeddingProvider<Real>> embed_;
  std::unique_ptr<ProsodyCnn<Real>> cnn_;
  std::unique_ptr<PauseDurationEmbedder<Real>> pause_;
  std::unique_ptr<Encoder<Real>> encoder_;
  std::unique_ptr<SpanScorer<Real>> scorer_;
  DurationStats duration_stats_;
  std::vector<std::string> lineage_;
  std::string vector_producer_;
};

}  // namespace prosparse
