#pragma once

// Labeled span scoring, exact CKY decoding over binarized trees and the
// Hamming-augmented structured hinge loss.

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "prosparse/autodiff.hpp"
#include "prosparse/encoder.hpp"
#include "prosparse/treebank.hpp"

namespace prosparse {

// Dense s(a, b, l) over fencepost pairs; only a < b is meaningful and the
// empty label (index 0) always scores 0.
class SpanScores {
 public:
  SpanScores() = default;
  SpanScores(std::size_t length, std::size_t num_labels)
      : length_(length), labels_(num_labels), data_((length + 1) * (length + 1) * num_labels, 0.0) {
    if (length == 0) fail(ErrorKind::kData, "span scores: sentence length must be >= 1");
    if (num_labels < 2) fail(ErrorKind::kData, "span scores: need at least one non-empty label");
  }

  std::size_t length() const { return length_; }
  std::size_t num_labels() const { return labels_; }

  double operator()(std::size_t a, std::size_t b, std::size_t l) const { return data_[offset(a, b, l)]; }

  // Writes to the empty label are ignored to keep its score fixed at 0.
  void set(std::size_t a, std::size_t b, std::size_t l, double v) {
    auto o = offset(a, b, l);
    if (l != 0) data_[o] = v;
  }

  void add(std::size_t a, std::size_t b, std::size_t l, double v) { data_[offset(a, b, l)] += v; }

 private:
  std::size_t offset(std::size_t a, std::size_t b, std::size_t l) const {
    if (!(a < b && b <= length_ && l < labels_)) {
      fail(ErrorKind::kShape, "span scores: invalid access (" + std::to_string(a) + "," + std::to_string(b) + "," +
                                  std::to_string(l) + ") for length " + std::to_string(length_));
    }
    return (a * (length_ + 1) + b) * labels_ + l;
  }

  std::size_t length_ = 0;
  std::size_t labels_ = 0;
  std::vector<double> data_;
};

struct IndexedSpan {
  int a = 0;
  int b = 0;
  std::size_t label = 0;

  auto operator<=>(const IndexedSpan&) const = default;
};

// Row order of the span scorer's output: every (a, b) with a < b.
class SpanIndex {
 public:
  explicit SpanIndex(std::size_t T) : T_(T), index_((T + 1) * (T + 1), kNone) {
    for (std::size_t len = 1; len <= T; ++len)
      for (std::size_t a = 0; a + len <= T; ++a) {
        index_[a * (T + 1) + a + len] = spans_.size();
        spans_.emplace_back(a, a + len);
      }
  }
  std::size_t size() const { return spans_.size(); }
  std::size_t row(std::size_t a, std::size_t b) const {
    auto r = index_.at(a * (T_ + 1) + b);
    if (r == kNone) fail(ErrorKind::kShape, "span index: (a,b) must satisfy a < b <= T");
    return r;
  }
  const std::vector<std::pair<std::size_t, std::size_t>>& spans() const { return spans_; }

 private:
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t T_;
  std::vector<std::size_t> index_;
  std::vector<std::pair<std::size_t, std::size_t>> spans_;
};

struct ChartResult {
  double total_score = 0;
  std::vector<IndexedSpan> spans;  // every span of the binary tree, root first
  std::vector<double> best;        // best[a * (T + 1) + b]
};

struct DecodedTree {
  Tree tree;
  double total_score = 0;
  std::vector<IndexedSpan> labeled_spans;  // non-empty labels only
  std::vector<double> chart;
};

// best(a,b) = max_l s(a,b,l) + [b - a > 1] max_k best(a,k) + best(k,b), with
// the root restricted to non-empty labels. Ties: lowest label, then smallest k.
inline ChartResult cky_chart(const SpanScores& s) {
  const std::size_t T = s.length(), L = s.num_labels(), W = T + 1;
  std::vector<double> best(W * W, 0.0);
  std::vector<std::size_t> arg_label(W * W, 0), arg_split(W * W, 0);
  for (std::size_t len = 1; len <= T; ++len) {
    for (std::size_t a = 0; a + len <= T; ++a) {
      const std::size_t b = a + len;
      const bool root = a == 0 && b == T;
      std::size_t bl = root ? 1 : 0;
      double bs = s(a, b, bl);
      for (std::size_t l = bl + 1; l < L; ++l) {
        if (s(a, b, l) > bs) {
          bs = s(a, b, l);
          bl = l;
        }
      }
      double split_score = 0;
      std::size_t bk = 0;
      if (len > 1) {
        split_score = -std::numeric_limits<double>::infinity();
        for (std::size_t k = a + 1; k < b; ++k) {
          double v = best[a * W + k] + best[k * W + b];
          if (v > split_score) {
            split_score = v;
            bk = k;
          }
        }
      }
      best[a * W + b] = bs + split_score;
      arg_label[a * W + b] = bl;
      arg_split[a * W + b] = bk;
    }
  }
  ChartResult out;
  out.total_score = best[T];
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, T}};
  while (!stack.empty()) {
    auto [a, b] = stack.back();
    stack.pop_back();
    out.spans.push_back({static_cast<int>(a), static_cast<int>(b), arg_label[a * W + b]});
    if (b - a > 1) {
      std::size_t k = arg_split[a * W + b];
      stack.emplace_back(k, b);
      stack.emplace_back(a, k);
    }
  }
  out.best = std::move(best);
  return out;
}

inline Tree spans_to_tree(const std::vector<IndexedSpan>& spans, const std::vector<Leaf>& leaves,
                          const LabelVocab& vocab) {
  std::vector<LabeledSpan> labeled;
  for (const auto& s : spans) {
    if (s.label != 0) labeled.push_back({s.a, s.b, vocab.symbol(s.label)});
  }
  return spans_to_tree(labeled, leaves);
}

inline DecodedTree cky_decode(const SpanScores& scores, const std::vector<Leaf>& leaves, const LabelVocab& vocab) {
  if (leaves.size() != scores.length()) {
    fail(ErrorKind::kAlignment, "cky_decode: " + std::to_string(leaves.size()) + " leaves for a chart of length " +
                                    std::to_string(scores.length()));
  }
  if (vocab.size() != scores.num_labels()) {
    fail(ErrorKind::kVocabulary, "cky_decode: label vocabulary size does not match the score tensor");
  }
  auto chart = cky_chart(scores);
  DecodedTree out;
  out.total_score = chart.total_score;
  for (const auto& s : chart.spans)
    if (s.label != 0) out.labeled_spans.push_back(s);
  out.tree = spans_to_tree(out.labeled_spans, leaves, vocab);
  out.chart = std::move(chart.best);
  return out;
}

// Sum of s(a,b,l) over the non-empty labeled spans.
inline double tree_score(const SpanScores& s, const std::vector<IndexedSpan>& spans) {
  double total = 0;
  for (const auto& sp : spans)
    if (sp.label != 0) total += s(sp.a, sp.b, sp.label);
  return total;
}

// Label indices for the spans of a gold tree; unknown labels and crossing
// brackets are data errors.
inline std::vector<IndexedSpan> index_gold_spans(const std::vector<LabeledSpan>& gold, const LabelVocab& vocab,
                                                 std::size_t T) {
  std::vector<IndexedSpan> out;
  for (const auto& s : gold) {
    if (s.a < 0 || s.b > static_cast<int>(T) || s.a >= s.b) {
      fail(ErrorKind::kData, "gold span (" + std::to_string(s.a) + "," + std::to_string(s.b) + ") out of range");
    }
    auto id = vocab.find(s.label);
    if (!id) fail(ErrorKind::kVocabulary, "gold label '" + s.label + "' is not in the label vocabulary");
    out.push_back({s.a, s.b, *id});
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = i + 1; j < out.size(); ++j) {
      const auto& x = out[i];
      const auto& y = out[j];
      bool crossing = (x.a < y.a && y.a < x.b && x.b < y.b) || (y.a < x.a && x.a < y.b && y.b < x.b);
      if (crossing || (x.a == y.a && x.b == y.b)) {
        fail(ErrorKind::kData, "invalid gold bracketing: spans (" + std::to_string(x.a) + "," + std::to_string(x.b) +
                                   ") and (" + std::to_string(y.a) + "," + std::to_string(y.b) +
                                   (crossing ? ") cross" : ") duplicate"));
      }
    }
  }
  return out;
}

struct MarginResult {
  double loss = 0;
  double hamming = 0;
  double predicted_score = 0;
  double gold_score = 0;
  std::vector<IndexedSpan> predicted;  // loss-augmented argmax, all binary spans
};

// Loss-augmented decoding: +1 on every (span, label) entry that disagrees with
// the gold label of that span (the empty label is gold for non-gold spans).
inline MarginResult margin_loss(const SpanScores& scores, const std::vector<IndexedSpan>& gold) {
  const std::size_t T = scores.length(), L = scores.num_labels(), W = T + 1;
  std::vector<std::size_t> gold_label(W * W, 0);
  for (const auto& g : gold) gold_label[g.a * W + g.b] = g.label;

  SpanScores augmented = scores;
  for (std::size_t a = 0; a < T; ++a)
    for (std::size_t b = a + 1; b <= T; ++b)
      for (std::size_t l = 0; l < L; ++l)
        if (l != gold_label[a * W + b]) augmented.add(a, b, l, 1.0);

  auto chart = cky_chart(augmented);
  MarginResult out;
  out.predicted = chart.spans;
  for (const auto& s : chart.spans)
    if (s.label != gold_label[s.a * W + s.b]) out.hamming += 1;
  out.predicted_score = tree_score(scores, chart.spans);
  out.gold_score = tree_score(scores, gold);
  out.loss = std::max(0.0, out.predicted_score + out.hamming - out.gold_score);
  return out;
}

// Two-layer feed-forward span classifier on fencepost differences. The
// first layer keeps a separate block per encoder stream.
template <typename Real>
class SpanScorer {
 public:
  SpanScorer(const std::vector<Stream>& streams, const std::vector<std::size_t>& widths, std::size_t hidden,
             std::size_t num_labels, ParameterStore<Real>& params, std::mt19937_64& rng)
      : num_labels_(num_labels) {
    if (num_labels < 2) fail(ErrorKind::kVocabulary, "span scorer: label vocabulary has no constituent labels");
    for (std::size_t s = 0; s < streams.size(); ++s) {
      w1_.push_back(&params.add(std::string("span.w1.") + stream_name(streams[s]), {widths[s], hidden},
                                Init::kXavier, rng));
    }
    b1_ = &params.add("span.b1", {1, hidden}, Init::kZeros, rng);
    gain_ = &params.add("span.ln.gain", {1, hidden}, Init::kOnes, rng);
    bias_ = &params.add("span.ln.bias", {1, hidden}, Init::kZeros, rng);
    w2_ = &params.add("span.w2", {hidden, num_labels - 1}, Init::kXavier, rng);
    b2_ = &params.add("span.b2", {1, num_labels - 1}, Init::kZeros, rng);
  }

  // [num_spans x (L - 1)] scores for the non-empty labels, rows in SpanIndex order.
  Var forward(Graph<Real>& g, const EncodedSentence& enc, const SpanIndex& index) const {
    std::vector<std::size_t> left, right;
    for (auto [a, b] : index.spans()) {
      left.push_back(a);
      right.push_back(b);
    }
    Var span = ad::sub(g, ad::gather_rows(g, enc.fenceposts, std::move(right)),
                       ad::gather_rows(g, enc.fenceposts, std::move(left)));
    Var hidden;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < enc.stream_widths.size(); ++s) {
      Var part = ad::matmul(g, ad::slice_cols(g, span, offset, enc.stream_widths[s]), g.param(*w1_[s]));
      hidden = hidden.valid() ? ad::add(g, hidden, part) : part;
      offset += enc.stream_widths[s];
    }
    hidden = ad::add_bias(g, hidden, g.param(*b1_));
    hidden = ad::add_bias(g, ad::mul_row(g, ad::layer_norm(g, hidden), g.param(*gain_)), g.param(*bias_));
    hidden = ad::relu(g, hidden);
    return ad::add_bias(g, ad::matmul(g, hidden, g.param(*w2_)), g.param(*b2_));
  }

  SpanScores to_scores(const Tensor<Real>& logits, const SpanIndex& index, std::size_t T) const {
    SpanScores s(T, num_labels_);
    for (std::size_t r = 0; r < index.size(); ++r) {
      auto [a, b] = index.spans()[r];
      for (std::size_t l = 1; l < num_labels_; ++l) s.set(a, b, l, static_cast<double>(logits(r, l - 1)));
    }
    return s;
  }

  std::size_t num_labels() const { return num_labels_; }

 private:
  std::size_t num_labels_;
  std::vector<Parameter<Real>*> w1_;
  Parameter<Real>* b1_;
  Parameter<Real>* gain_;
  Parameter<Real>* bias_;
  Parameter<Real>* w2_;
  Parameter<Real>* b2_;
};

}  // namespace prosparse
