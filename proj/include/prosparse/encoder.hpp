#pragma once

// Self-attention encoder with separate query/key/value mappings for the
// lexical, positional and prosodic streams, plus the convolutional
// extractor that turns energy/pitch frame patches into word-level features.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "prosparse/autodiff.hpp"
#include "prosparse/prosody.hpp"

namespace prosparse {

struct CnnConfig {
  std::vector<std::size_t> widths{3, 5, 10};
  std::size_t filters_per_width = 32;

  std::size_t output_dim() const { return widths.size() * filters_per_width; }

  void validate(std::size_t max_frames) const {
    if (widths.empty()) fail(ErrorKind::kConfig, "cnn: at least one filter width required");
    if (filters_per_width == 0) fail(ErrorKind::kConfig, "cnn: filters_per_width must be >= 1");
    std::set<std::size_t> seen;
    for (auto w : widths) {
      if (w == 0 || w > max_frames) {
        fail(ErrorKind::kConfig, "cnn: filter width " + std::to_string(w) + " outside [1, max_frames]");
      }
      if (!seen.insert(w).second) fail(ErrorKind::kConfig, "cnn: duplicate filter width " + std::to_string(w));
    }
  }
};

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t d_content = 256;
  std::size_t d_position = 64;
  std::size_t d_prosody = 64;
  std::size_t d_ff = 512;
  double dropout = 0.2;
  std::size_t max_len = 300;

  void validate(bool use_prosody) const {
    if (heads == 0) fail(ErrorKind::kConfig, "encoder: heads must be >= 1");
    auto check = [&](std::size_t d, const char* name) {
      if (d == 0 || d % heads != 0 || d % 2 != 0) {
        fail(ErrorKind::kConfig, std::string("encoder: ") + name + " must be even, positive and divisible by heads");
      }
    };
    check(d_content, "d_content");
    check(d_position, "d_position");
    if (use_prosody) check(d_prosody, "d_prosody");
    if (d_ff < 2) fail(ErrorKind::kConfig, "encoder: d_ff must be >= 2");
    if (dropout < 0 || dropout >= 1) fail(ErrorKind::kConfig, "encoder: dropout must be in [0, 1)");
    if (max_len < 3) fail(ErrorKind::kConfig, "encoder: max_len must be >= 3");
  }
};

inline constexpr std::size_t kPhiDim = 10;

// Convolution over a word's frame patch: N filters per width, relu, max over
// time, widths concatenated in ascending order.
template <typename Real>
class ProsodyCnn {
 public:
  ProsodyCnn(CnnConfig config, ParameterStore<Real>& params, std::mt19937_64& rng) : config_(std::move(config)) {
    std::sort(config_.widths.begin(), config_.widths.end());
    for (auto w : config_.widths) {
      filters_.push_back(&params.add("prosody.cnn.w" + std::to_string(w), {w * 2, config_.filters_per_width},
                                     Init::kXavier, rng));
      biases_.push_back(&params.add("prosody.cnn.b" + std::to_string(w), {1, config_.filters_per_width},
                                    Init::kZeros, rng));
    }
  }

  const CnnConfig& config() const { return config_; }

  Var forward(Graph<Real>& g, const FramePatch& patch) const {
    if (patch.n_frames == 0) fail(ErrorKind::kData, "prosody_cnn: empty frame patch");
    Tensor<Real> frames({patch.n_frames, 2});
    for (std::size_t i = 0; i < patch.frames.size(); ++i) frames[i] = static_cast<Real>(patch.frames[i]);
    Var x = g.constant(std::move(frames));
    std::vector<Var> pooled;
    for (std::size_t k = 0; k < filters_.size(); ++k) {
      Var conv = ad::conv1d(g, x, g.param(*filters_[k]), g.param(*biases_[k]), config_.widths[k]);
      pooled.push_back(ad::max_pool_over_time(g, ad::relu(g, conv)));
    }
    return ad::concat(g, pooled, 1);
  }

 private:
  CnnConfig config_;
  std::vector<Parameter<Real>*> filters_;
  std::vector<Parameter<Real>*> biases_;
};

// phi_i = [pause-before embedding; pause-after embedding; duration_norm;
//          log(1 + duration_raw)]
template <typename Real>
class PauseDurationEmbedder {
 public:
  static constexpr std::size_t kPauseDim = 4;

  PauseDurationEmbedder(ParameterStore<Real>& params, std::mt19937_64& rng) {
    before_ = &params.add("prosody.pause_before", {kPauseBuckets, kPauseDim}, Init::kNormal, rng, 0.1);
    after_ = &params.add("prosody.pause_after", {kPauseBuckets, kPauseDim}, Init::kNormal, rng, 0.1);
  }

  Var forward(Graph<Real>& g, const std::vector<PauseDuration>& words) const {
    std::vector<std::size_t> before, after;
    auto dur = Tensor<Real>::matrix(words.size(), 2);
    for (std::size_t i = 0; i < words.size(); ++i) {
      before.push_back(static_cast<std::size_t>(std::clamp(words[i].pause_before_bucket, 0, kPauseBuckets - 1)));
      after.push_back(static_cast<std::size_t>(std::clamp(words[i].pause_after_bucket, 0, kPauseBuckets - 1)));
      dur(i, 0) = static_cast<Real>(words[i].duration_norm);
      dur(i, 1) = static_cast<Real>(std::log1p(words[i].duration_raw));
    }
    return ad::concat(g,
                      {ad::embedding_lookup(g, g.param(*before_), std::move(before)),
                       ad::embedding_lookup(g, g.param(*after_), std::move(after)), g.constant(std::move(dur))},
                      1);
  }

 private:
  Parameter<Real>* before_;
  Parameter<Real>* after_;
};

enum class Stream { kContent, kPosition, kProsody };

inline const char* stream_name(Stream s) {
  switch (s) {
    case Stream::kContent:
      return "content";
    case Stream::kPosition:
      return "position";
    case Stream::kProsody:
      return "prosody";
  }
  return "?";
}

// Fencepost k sits between word k and word k+1; row count is T + 1.
struct EncodedSentence {
  Var fenceposts;
  std::vector<Stream> streams;
  std::vector<std::size_t> stream_widths;
  std::size_t length = 0;
};

// Optional capture of per-layer, per-head attention logits and weights.
template <typename Real>
struct AttentionTrace {
  std::vector<std::vector<Tensor<Real>>> logits;
  std::vector<std::vector<Tensor<Real>>> weights;
};

template <typename Real>
class Encoder {
 public:
  Encoder(EncoderConfig config, bool use_prosody, std::size_t content_in_dim, std::size_t prosody_in_dim,
          ParameterStore<Real>& params, std::mt19937_64& rng)
      : config_(config), use_prosody_(use_prosody) {
    config_.validate(use_prosody_);
    streams_ = {Stream::kContent, Stream::kPosition};
    if (use_prosody_) streams_.push_back(Stream::kProsody);

    content_proj_ = &params.add("content.proj", {content_in_dim, config_.d_content}, Init::kXavier, rng);
    sentinels_ = &params.add("content.sentinel", {2, config_.d_content}, Init::kNormal, rng, 0.1);
    positions_ = &params.add("position.table", {config_.max_len, config_.d_position}, Init::kNormal, rng, 0.1);
    if (use_prosody_) {
      prosody_proj_ = &params.add("prosody.proj.w", {prosody_in_dim, config_.d_prosody}, Init::kXavier, rng);
      prosody_bias_ = &params.add("prosody.proj.b", {1, config_.d_prosody}, Init::kZeros, rng);
    }
    for (std::size_t l = 0; l < config_.layers; ++l) {
      std::vector<StreamLayer> per_stream;
      for (Stream s : streams_) {
        std::size_t d = width(s);
        std::size_t hidden = std::max<std::size_t>(1, config_.d_ff / 2);
        std::string p = "encoder.L" + std::to_string(l) + "." + stream_name(s) + ".";
        StreamLayer sl;
        sl.wq = &params.add(p + "wq", {d, d}, Init::kXavier, rng);
        sl.wk = &params.add(p + "wk", {d, d}, Init::kXavier, rng);
        sl.wv = &params.add(p + "wv", {d, d}, Init::kXavier, rng);
        sl.wo = &params.add(p + "wo", {d, d}, Init::kXavier, rng);
        sl.ln1_gain = &params.add(p + "ln1.gain", {1, d}, Init::kOnes, rng);
        sl.ln1_bias = &params.add(p + "ln1.bias", {1, d}, Init::kZeros, rng);
        sl.ff1 = &params.add(p + "ff1.w", {d, hidden}, Init::kXavier, rng);
        sl.ff1_bias = &params.add(p + "ff1.b", {1, hidden}, Init::kZeros, rng);
        sl.ff2 = &params.add(p + "ff2.w", {hidden, d}, Init::kXavier, rng);
        sl.ff2_bias = &params.add(p + "ff2.b", {1, d}, Init::kZeros, rng);
        sl.ln2_gain = &params.add(p + "ln2.gain", {1, d}, Init::kOnes, rng);
        sl.ln2_bias = &params.add(p + "ln2.bias", {1, d}, Init::kZeros, rng);
        per_stream.push_back(sl);
      }
      layers_.push_back(std::move(per_stream));
    }
  }

  const EncoderConfig& config() const { return config_; }
  bool use_prosody() const { return use_prosody_; }
  const std::vector<Stream>& streams() const { return streams_; }

  std::size_t width(Stream s) const {
    switch (s) {
      case Stream::kContent:
        return config_.d_content;
      case Stream::kPosition:
        return config_.d_position;
      case Stream::kProsody:
        return config_.d_prosody;
    }
    return 0;
  }

  // words: [T x content_in_dim]; prosody: [T x prosody_in_dim] or invalid
  // for text-only models.
  EncodedSentence encode(Graph<Real>& g, Var words, Var prosody, AttentionTrace<Real>* trace = nullptr) const {
    const std::size_t T = g.value(words).rows();
    if (T == 0) fail(ErrorKind::kData, "encode: empty sentence");
    if (T + 2 > config_.max_len) {
      fail(ErrorKind::kData, "encode: sentence length " + std::to_string(T) + " exceeds max_len " +
                                 std::to_string(config_.max_len) + " (including boundary sentinels)");
    }
    if (use_prosody_ && (!prosody.valid() || g.value(prosody).rows() != T)) {
      fail(ErrorKind::kData, "encode: prosody features must have one row per word");
    }
    const std::size_t n = T + 2;

    std::vector<Var> x;
    {
      Var sent = g.param(*sentinels_);
      Var body = ad::matmul(g, words, g.param(*content_proj_));
      Var c = ad::concat(g, {ad::slice_rows(g, sent, 0, 1), body, ad::slice_rows(g, sent, 1, 1)}, 0);
      x.push_back(ad::dropout(g, c, config_.dropout));
    }
    {
      std::vector<std::size_t> pos(n);
      for (std::size_t i = 0; i < n; ++i) pos[i] = i;
      x.push_back(ad::gather_rows(g, g.param(*positions_), std::move(pos)));
    }
    if (use_prosody_) {
      Var body = ad::add_bias(g, ad::matmul(g, prosody, g.param(*prosody_proj_)), g.param(*prosody_bias_));
      Var edge = g.constant(Tensor<Real>::matrix(1, config_.d_prosody));
      Var p = ad::concat(g, {edge, body, edge}, 0);
      x.push_back(ad::dropout(g, p, config_.dropout));
    }

    if (trace) {
      trace->logits.assign(config_.layers, {});
      trace->weights.assign(config_.layers, {});
    }
    for (std::size_t l = 0; l < config_.layers; ++l) {
      x = layer(g, l, x, trace);
      for (std::size_t s = 0; s < x.size(); ++s) {
        for (Real v : g.value(x[s]).values()) {
          if (!std::isfinite(static_cast<double>(v))) {
            fail(ErrorKind::kNumeric, "encoder layer " + std::to_string(l) + " (" + stream_name(streams_[s]) +
                                          " stream) produced non-finite values");
          }
        }
      }
    }

    EncodedSentence out;
    out.length = T;
    out.streams = streams_;
    std::vector<Var> parts;
    for (std::size_t s = 0; s < x.size(); ++s) {
      std::size_t d = width(streams_[s]);
      std::size_t half = d / 2;
      Var fwd = ad::slice_rows(g, ad::slice_cols(g, x[s], 0, half), 0, T + 1);
      Var bwd = ad::slice_rows(g, ad::slice_cols(g, x[s], half, half), 1, T + 1);
      parts.push_back(ad::concat(g, {fwd, bwd}, 1));
      out.stream_widths.push_back(d);
    }
    out.fenceposts = ad::concat(g, parts, 1);
    return out;
  }

 private:
  struct StreamLayer {
    Parameter<Real>* wq;
    Parameter<Real>* wk;
    Parameter<Real>* wv;
    Parameter<Real>* wo;
    Parameter<Real>* ln1_gain;
    Parameter<Real>* ln1_bias;
    Parameter<Real>* ff1;
    Parameter<Real>* ff1_bias;
    Parameter<Real>* ff2;
    Parameter<Real>* ff2_bias;
    Parameter<Real>* ln2_gain;
    Parameter<Real>* ln2_bias;
  };

  Var affine_norm(Graph<Real>& g, Var x, Parameter<Real>* gain, Parameter<Real>* bias) const {
    return ad::add_bias(g, ad::mul_row(g, ad::layer_norm(g, x), g.param(*gain)), g.param(*bias));
  }

  std::vector<Var> layer(Graph<Real>& g, std::size_t l, const std::vector<Var>& x, AttentionTrace<Real>* trace) const {
    const auto& params = layers_[l];
    const std::size_t S = x.size();
    std::vector<Var> q(S), k(S), v(S);
    for (std::size_t s = 0; s < S; ++s) {
      q[s] = ad::matmul(g, x[s], g.param(*params[s].wq));
      k[s] = ad::matmul(g, x[s], g.param(*params[s].wk));
      v[s] = ad::matmul(g, x[s], g.param(*params[s].wv));
    }
    const std::size_t H = config_.heads;
    std::vector<std::vector<Var>> head_out(S, std::vector<Var>(H));
    for (std::size_t h = 0; h < H; ++h) {
      Var logits;
      for (std::size_t s = 0; s < S; ++s) {
        std::size_t dh = width(streams_[s]) / H;
        Var qh = ad::slice_cols(g, q[s], h * dh, dh);
        Var kh = ad::slice_cols(g, k[s], h * dh, dh);
        Var term = ad::scale(g, ad::matmul(g, qh, ad::transpose(g, kh)),
                             static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh))));
        logits = logits.valid() ? ad::add(g, logits, term) : term;
      }
      Var attn = ad::softmax(g, logits, 1);
      if (trace) {
        trace->logits[l].push_back(g.value(logits));
        trace->weights[l].push_back(g.value(attn));
      }
      for (std::size_t s = 0; s < S; ++s) {
        std::size_t dh = width(streams_[s]) / H;
        head_out[s][h] = ad::matmul(g, attn, ad::slice_cols(g, v[s], h * dh, dh));
      }
    }
    std::vector<Var> out(S);
    for (std::size_t s = 0; s < S; ++s) {
      const auto& p = params[s];
      Var merged = ad::matmul(g, ad::concat(g, head_out[s], 1), g.param(*p.wo));
      Var y = affine_norm(g, ad::add(g, x[s], ad::dropout(g, merged, config_.dropout)), p.ln1_gain, p.ln1_bias);
      Var hidden = ad::relu(g, ad::add_bias(g, ad::matmul(g, y, g.param(*p.ff1)), g.param(*p.ff1_bias)));
      hidden = ad::dropout(g, hidden, config_.dropout);
      Var ff = ad::add_bias(g, ad::matmul(g, hidden, g.param(*p.ff2)), g.param(*p.ff2_bias));
      out[s] = affine_norm(g, ad::add(g, y, ad::dropout(g, ff, config_.dropout)), p.ln2_gain, p.ln2_bias);
    }
    return out;
  }

  EncoderConfig config_;
  bool use_prosody_;
  std::vector<Stream> streams_;
  Parameter<Real>* content_proj_ = nullptr;
  Parameter<Real>* sentinels_ = nullptr;
  Parameter<Real>* positions_ = nullptr;
  Parameter<Real>* prosody_proj_ = nullptr;
  Parameter<Real>* prosody_bias_ = nullptr;
  std::vector<std::vector<StreamLayer>> layers_;
};

}  // namespace prosparse
