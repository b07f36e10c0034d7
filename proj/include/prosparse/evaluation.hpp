#pragma once

// Labeled-bracket scoring with EVALB conventions, sentence breakdowns, the
// paired bootstrap test and table rendering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "prosparse/treebank.hpp"

namespace prosparse {

struct BracketCounts {
  std::size_t matched = 0;
  std::size_t gold = 0;
  std::size_t predicted = 0;
  std::size_t sentences = 0;
  std::size_t exact = 0;

  double precision() const { return predicted ? 100.0 * matched / predicted : 0.0; }
  double recall() const { return gold ? 100.0 * matched / gold : 0.0; }
  double f1() const {
    double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }

  BracketCounts& operator+=(const BracketCounts& o) {
    matched += o.matched;
    gold += o.gold;
    predicted += o.predicted;
    sentences += o.sentences;
    exact += o.exact;
    return *this;
  }
};

inline const std::vector<std::string>& breakdown_names() {
  static const std::vector<std::string> kNames = {"fluent", "disfluent", "len_0_5", "len_6_10", "len_11_plus"};
  return kNames;
}

inline std::string length_bucket(std::size_t T) {
  if (T <= 5) return "len_0_5";
  if (T <= 10) return "len_6_10";
  return "len_11_plus";
}

struct SentenceEval {
  BracketCounts counts;
  Fluency fluency = Fluency::kFluent;
  std::size_t length = 0;
};

struct EvalReport {
  BracketCounts overall;
  std::map<std::string, BracketCounts> breakdown;
  std::vector<SentenceEval> sentences;

  double precision() const { return overall.precision(); }
  double recall() const { return overall.recall(); }
  double f1() const { return overall.f1(); }
};

struct EvalOptions {
  // EVALB's punctuation deletion, for written-text style gold trees.
  bool delete_punctuation = false;
};

namespace detail {

// Every labeled internal node is one bracket; unary chains are not collapsed
// and the (unlabeled) root wrapper is never counted.
inline void collect_brackets(const Tree& t, int& pos, std::vector<std::tuple<int, int, std::string>>& out) {
  if (t.is_leaf()) {
    ++pos;
    return;
  }
  int start = pos;
  for (const auto& c : t.children) collect_brackets(c, pos, out);
  if (!t.label.empty()) out.emplace_back(start, pos, t.label);
}

inline bool words_match(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  auto same = [](const std::string& x, const std::string& y) {
    return std::equal(x.begin(), x.end(), y.begin(), y.end(), [](unsigned char p, unsigned char q) {
      return std::tolower(p) == std::tolower(q);
    });
  };
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!same(a[i], b[i])) return false;
  return true;
}

}  // namespace detail

inline std::vector<std::tuple<int, int, std::string>> evalb_brackets(const Tree& t) {
  std::vector<std::tuple<int, int, std::string>> out;
  int pos = 0;
  detail::collect_brackets(t, pos, out);
  std::sort(out.begin(), out.end());
  return out;
}

// Bracket counts for one aligned pair. Matching is multiset intersection.
inline BracketCounts score_sentence(const Tree& gold, const Tree& pred, const std::string& id = "") {
  auto gw = gold.words(), pw = pred.words();
  if (!detail::words_match(gw, pw)) {
    fail(ErrorKind::kAlignment, "sentence " + id + ": gold and predicted words differ (" +
                                    std::to_string(gw.size()) + " vs " + std::to_string(pw.size()) + " words)");
  }
  auto g = evalb_brackets(gold), p = evalb_brackets(pred);
  BracketCounts c;
  c.gold = g.size();
  c.predicted = p.size();
  std::vector<std::tuple<int, int, std::string>> common;
  std::set_intersection(g.begin(), g.end(), p.begin(), p.end(), std::back_inserter(common));
  c.matched = common.size();
  c.sentences = 1;
  c.exact = g == p ? 1 : 0;
  return c;
}

// Micro-averaged Parseval. `ids` (optional) name sentences in errors; the
// fluency split always comes from the gold tree.
inline EvalReport parseval(const std::vector<Tree>& gold, const std::vector<Tree>& pred, const EvalOptions& opts = {},
                           const std::vector<std::string>& ids = {}) {
  if (gold.size() != pred.size()) {
    fail(ErrorKind::kData, "parseval: " + std::to_string(gold.size()) + " gold trees but " +
                               std::to_string(pred.size()) + " predicted trees");
  }
  EvalReport report;
  for (const auto& name : breakdown_names()) report.breakdown[name] = {};
  for (std::size_t i = 0; i < gold.size(); ++i) {
    std::string id = i < ids.size() ? ids[i] : std::to_string(i + 1);
    const Tree* g = &gold[i];
    const Tree* p = &pred[i];
    Tree gs, ps;
    if (opts.delete_punctuation) {
      gs = remove_punctuation(gold[i]);
      ps = remove_punctuation(pred[i]);
      g = &gs;
      p = &ps;
    }
    SentenceEval se;
    se.counts = score_sentence(*g, *p, id);
    se.fluency = classify_fluency(gold[i]);
    se.length = g->num_leaves();
    report.overall += se.counts;
    report.breakdown[to_string(se.fluency)] += se.counts;
    report.breakdown[length_bucket(se.length)] += se.counts;
    report.sentences.push_back(se);
  }
  return report;
}

struct SignificanceResult {
  double f1_a = 0;
  double f1_b = 0;
  double observed_delta = 0;
  double p_value = 1;
  std::size_t n_resamples = 0;
  std::size_t exceed = 0;
  std::size_t ties = 0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::size_t kMinResamples = 1000;

// Paired bootstrap on per-sentence bracket counts:
// p = (#{delta_b > 2 delta} + #{delta_b == 2 delta} / 2) / n, with each
// resample's F1 recomputed from pooled counts. Exact ties count half, so
// identical systems get p = 0.5. Resample b draws from
// its own generator seeded by (seed, b), so results do not depend on `jobs`.
inline SignificanceResult paired_bootstrap(const std::vector<BracketCounts>& a, const std::vector<BracketCounts>& b,
                                           std::size_t n_resamples, std::uint64_t seed, std::size_t jobs = 1) {
  if (n_resamples == 0) fail(ErrorKind::kConfig, "paired_bootstrap: n_resamples must be positive");
  if (n_resamples < kMinResamples) {
    fail(ErrorKind::kConfig, "paired_bootstrap: n_resamples must be >= " + std::to_string(kMinResamples));
  }
  if (a.size() != b.size()) {
    fail(ErrorKind::kData, "paired_bootstrap: systems scored on " + std::to_string(a.size()) + " and " +
                               std::to_string(b.size()) + " sentences");
  }
  if (a.empty()) fail(ErrorKind::kData, "paired_bootstrap: no sentences");
  BracketCounts ta, tb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].gold != b[i].gold) fail(ErrorKind::kData, "paired_bootstrap: gold bracket counts differ at sentence " + std::to_string(i + 1));
    ta += a[i];
    tb += b[i];
  }
  SignificanceResult r;
  r.f1_a = ta.f1();
  r.f1_b = tb.f1();
  r.observed_delta = r.f1_a - r.f1_b;
  r.n_resamples = n_resamples;

  const std::size_t n = a.size();
  struct Tally {
    std::size_t exceed = 0, ties = 0;
  };
  auto run = [&](std::size_t from, std::size_t to) {
    Tally t;
    for (std::size_t k = from; k < to; ++k) {
      std::mt19937_64 rng(splitmix64(seed ^ splitmix64(k)));
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      BracketCounts ra, rb;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = pick(rng);
        ra += a[j];
        rb += b[j];
      }
      double d = ra.f1() - rb.f1();
      if (d > 2 * r.observed_delta) {
        ++t.exceed;
      } else if (d == 2 * r.observed_delta) {
        ++t.ties;
      }
    }
    return t;
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, n_resamples));
  if (jobs == 1) {
    auto t = run(0, n_resamples);
    r.exceed = t.exceed;
    r.ties = t.ties;
  } else {
    std::vector<Tally> partial(jobs);
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      std::size_t from = n_resamples * w / jobs, to = n_resamples * (w + 1) / jobs;
      workers.emplace_back([&, w, from, to] { partial[w] = run(from, to); });
    }
    for (auto& t : workers) t.join();
    for (const auto& t : partial) {
      r.exceed += t.exceed;
      r.ties += t.ties;
    }
  }
  r.p_value = (static_cast<double>(r.exceed) + 0.5 * static_cast<double>(r.ties)) / static_cast<double>(n_resamples);
  return r;
}

inline SignificanceResult paired_bootstrap(const std::vector<Tree>& gold, const std::vector<Tree>& pred_a,
                                           const std::vector<Tree>& pred_b, std::size_t n_resamples,
                                           std::uint64_t seed, const EvalOptions& opts = {}, std::size_t jobs = 1) {
  if (pred_a.size() != gold.size() || pred_b.size() != gold.size()) {
    fail(ErrorKind::kData, "paired_bootstrap: misaligned inputs (" + std::to_string(gold.size()) + " gold, " +
                               std::to_string(pred_a.size()) + " A, " + std::to_string(pred_b.size()) + " B)");
  }
  auto ra = parseval(gold, pred_a, opts), rb = parseval(gold, pred_b, opts);
  std::vector<BracketCounts> ca, cb;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ca.push_back(ra.sentences[i].counts);
    cb.push_back(rb.sentences[i].counts);
  }
  return paired_bootstrap(ca, cb, n_resamples, seed, jobs);
}

// "*" for p < 0.02, "†" for p < 0.05.
inline std::string significance_marker(std::optional<double> p) {
  if (!p) return "";
  if (*p < 0.02) return "*";
  if (*p < 0.05) return "†";
  return "";
}

inline constexpr const char* kMissingCell = "—";

inline std::string format_f1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

struct ReportRow {
  std::string condition;
  EvalReport report;
  std::optional<double> p_value;  // against the table's baseline row
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

inline std::string render_tsv(const Table& t) {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "\t" : "") << cells[i];
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
  return out.str();
}

inline std::string render_aligned(const Table& t) {
  std::vector<std::size_t> width(t.header.size(), 0);
  auto measure = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size() && i < width.size(); ++i)
      width[i] = std::max(width[i], display_width(cells[i]));
  };
  measure(t.header);
  for (const auto& r : t.rows) measure(r);
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += "  ";
      std::string pad(width[i] - display_width(cells[i]), ' ');
      s += i == 0 ? cells[i] + pad : pad + cells[i];
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    out << s << '\n';
  };
  line(t.header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') << '\n';
  for (const auto& r : t.rows) line(r);
  return out.str();
}

// One row per condition: overall P/R/F1, fluent/disfluent and length buckets.
// The marker on F1 compares the row with the baseline (first) row.
inline Table summary_table(const std::vector<ReportRow>& rows) {
  Table t;
  t.header = {"condition", "P", "R", "F1", "fluent", "disfluent", "len<=5", "len6-10", "len>=11", "sents"};
  for (const auto& r : rows) {
    const auto& b = r.report.breakdown;
    auto cell = [&](const char* name) {
      auto it = b.find(name);
      return it == b.end() || it->second.sentences == 0 ? std::string(kMissingCell) : format_f1(it->second.f1());
    };
    t.rows.push_back({r.condition, format_f1(r.report.precision()), format_f1(r.report.recall()),
                      format_f1(r.report.f1()) + significance_marker(r.p_value), cell("fluent"), cell("disfluent"),
                      cell("len_0_5"), cell("len_6_10"), cell("len_11_plus"),
                      std::to_string(r.report.overall.sentences)});
  }
  return t;
}

struct GridCell {
  std::string row;
  std::string column;
  double f1 = 0;
  std::optional<double> p_value;
};

// Cross-condition grid (e.g. tuning corpus x test corpus); absent cells are
// rendered as a dash.
inline Table grid_table(const std::vector<GridCell>& cells, const std::string& corner = "") {
  std::vector<std::string> rows, cols;
  std::map<std::pair<std::string, std::string>, const GridCell*> at;
  for (const auto& c : cells) {
    if (std::find(rows.begin(), rows.end(), c.row) == rows.end()) rows.push_back(c.row);
    if (std::find(cols.begin(), cols.end(), c.column) == cols.end()) cols.push_back(c.column);
    at[{c.row, c.column}] = &c;
  }
  Table t;
  t.header.push_back(corner);
  for (const auto& c : cols) t.header.push_back(c);
  for (const auto& r : rows) {
    std::vector<std::string> line{r};
    for (const auto& c : cols) {
      auto it = at.find({r, c});
      line.push_back(it == at.end() ? std::string(kMissingCell)
                                    : format_f1(it->second->f1) + significance_marker(it->second->p_value));
    }
    t.rows.push_back(std::move(line));
  }
  return t;
}

inline Table counts_table(const EvalReport& r) {
  Table t;
  t.header = {"subset", "sents", "matched", "gold", "predicted", "P", "R", "F1", "exact"};
  auto add = [&](const std::string& name, const BracketCounts& c) {
    t.rows.push_back({name, std::to_string(c.sentences), std::to_string(c.matched), std::to_string(c.gold),
                      std::to_string(c.predicted), format_f1(c.precision()), format_f1(c.recall()), format_f1(c.f1()),
                      std::to_string(c.exact)});
  };
  add("all", r.overall);
  for (const auto& name : breakdown_names()) add(name, r.breakdown.at(name));
  return t;
}

}  // namespace prosparse
