#pragma once

// Penn-Treebank style constituency trees: reading, writing, conversion to
// and from labeled span sets, and sentence-level classification.

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prosparse/error.hpp"

namespace prosparse {

struct Leaf {
  std::string word;
  std::string tag;

  bool operator==(const Leaf&) const = default;
};

// A node is internal (label + children) or a leaf (word + POS tag in
// `label`, no children). The empty label marks an implicit root wrapper.
struct Tree {
  std::string label;
  std::string word;
  std::vector<Tree> children;

  static Tree leaf(std::string word, std::string tag) {
    Tree t;
    t.label = std::move(tag);
    t.word = std::move(word);
    return t;
  }

  static Tree node(std::string label, std::vector<Tree> children) {
    Tree t;
    t.label = std::move(label);
    t.children = std::move(children);
    return t;
  }

  bool is_leaf() const { return children.empty(); }

  std::size_t num_leaves() const {
    if (is_leaf()) return 1;
    std::size_t n = 0;
    for (const auto& c : children) n += c.num_leaves();
    return n;
  }

  std::vector<Leaf> leaves() const {
    std::vector<Leaf> out;
    collect_leaves(out);
    return out;
  }

  std::vector<std::string> words() const {
    std::vector<std::string> out;
    for (auto& l : leaves()) out.push_back(std::move(l.word));
    return out;
  }

  std::vector<std::string> tags() const {
    std::vector<std::string> out;
    for (auto& l : leaves()) out.push_back(std::move(l.tag));
    return out;
  }

  bool operator==(const Tree&) const = default;

 private:
  void collect_leaves(std::vector<Leaf>& out) const {
    if (is_leaf()) {
      out.push_back({word, label});
      return;
    }
    for (const auto& c : children) c.collect_leaves(out);
  }
};

// Fencepost span [a, b) over the leaves with a (possibly composite) label.
struct LabeledSpan {
  int a = 0;
  int b = 0;
  std::string label;

  auto operator<=>(const LabeledSpan&) const = default;
};

inline constexpr char kUnaryJoin = '+';

// Collapsed constituent labels; index 0 is always the empty label.
class LabelVocab {
 public:
  LabelVocab() { symbols_.push_back(""); index_.emplace("", 0); }

  static LabelVocab from_symbols(const std::vector<std::string>& symbols) {
    LabelVocab v;
    for (const auto& s : symbols) {
      if (!s.empty()) v.add(s);
    }
    return v;
  }

  std::size_t add(const std::string& label) {
    auto it = index_.find(label);
    if (it != index_.end()) return it->second;
    symbols_.push_back(label);
    index_.emplace(label, symbols_.size() - 1);
    return symbols_.size() - 1;
  }

  std::optional<std::size_t> find(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) {
      fail(ErrorKind::kVocabulary, "label not in vocabulary: " + label);
    }
    return it->second;
  }

  bool contains(const std::string& label) const { return index_.count(label) > 0; }
  const std::string& symbol(std::size_t i) const { return symbols_.at(i); }
  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }

  bool operator==(const LabelVocab& o) const { return symbols_ == o.symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline bool is_wrapper_label(const std::string& l) {
  return l.empty() || l == "ROOT" || l == "TOP";
}

// NP-SBJ-1 -> NP, NP=2 -> NP; labels starting with '-' (-NONE-, -LRB-) are kept.
inline std::string strip_function_tag(const std::string& label) {
  if (label.empty() || label[0] == '-') return label;
  auto cut = label.find_first_of("-=");
  return cut == std::string::npos ? label : label.substr(0, cut);
}

class BracketReader {
 public:
  explicit BracketReader(std::string_view text) : text_(text) {}

  bool at_end() {
    skip_space();
    return pos_ >= text_.size();
  }

  Tree read_tree() {
    skip_space();
    expect_open();
    return read_after_open();
  }

 private:
  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorKind::kParse,
         "bracket parse error at offset " + std::to_string(pos_) + ": " + msg);
  }

  void expect_open() {
    if (pos_ >= text_.size()) error("unexpected end of input, expected '('");
    if (text_[pos_] != '(') error(std::string("expected '(' but found '") + text_[pos_] + "'");
    ++pos_;
  }

  std::string read_atom() {
    std::size_t start = pos_;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '(' || c == ')' || std::isspace(static_cast<unsigned char>(c))) break;
      ++pos_;
    }
    return std::string(text_.substr(start, pos_ - start));
  }

  Tree read_after_open() {
    skip_space();
    if (pos_ >= text_.size()) error("unexpected end of input inside bracket");
    std::string label;
    if (text_[pos_] != '(' && text_[pos_] != ')') label = read_atom();
    skip_space();
    if (pos_ >= text_.size()) error("unexpected end of input after label '" + label + "'");
    if (text_[pos_] == ')') error("empty constituent '" + label + "'");
    if (text_[pos_] != '(') {
      std::string word = read_atom();
      skip_space();
      if (pos_ >= text_.size()) error("unexpected end of input after word '" + word + "'");
      if (text_[pos_] != ')') error("expected ')' after word '" + word + "'");
      ++pos_;
      if (label.empty()) error("leaf '" + word + "' has no tag");
      return Tree::leaf(std::move(word), std::move(label));
    }
    std::vector<Tree> kids;
    while (true) {
      skip_space();
      if (pos_ >= text_.size()) error("unexpected end of input, unbalanced brackets");
      if (text_[pos_] == ')') {
        ++pos_;
        break;
      }
      expect_open();
      kids.push_back(read_after_open());
    }
    return Tree::node(std::move(label), std::move(kids));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

// Drops -NONE- leaves and any internal node left without children; strips
// function tags from internal labels. Returns false if the node vanished.
inline bool clean_tree(Tree& t) {
  if (t.is_leaf()) return t.label != "-NONE-";
  t.label = strip_function_tag(t.label);
  std::vector<Tree> kept;
  kept.reserve(t.children.size());
  for (auto& c : t.children) {
    if (clean_tree(c)) kept.push_back(std::move(c));
  }
  t.children = std::move(kept);
  return !t.children.empty();
}

inline void serialize_into(const Tree& t, std::string& out) {
  out += '(';
  out += t.label;
  if (t.is_leaf()) {
    out += ' ';
    out += t.word;
  } else {
    for (const auto& c : t.children) {
      out += ' ';
      serialize_into(c, out);
    }
  }
  out += ')';
}

inline void collect_spans(const Tree& t, int& pos, std::vector<LabeledSpan>& out) {
  const Tree* cur = &t;
  std::string label = t.label;
  while (cur->children.size() == 1 && !cur->children[0].is_leaf()) {
    cur = &cur->children[0];
    if (cur->label.empty()) continue;
    if (!label.empty()) label += kUnaryJoin;
    label += cur->label;
  }
  std::size_t slot = out.size();
  if (!label.empty()) out.push_back({pos, pos, label});
  for (const auto& c : cur->children) {
    if (c.is_leaf()) {
      ++pos;
    } else {
      collect_spans(c, pos, out);
    }
  }
  if (!label.empty()) out[slot].b = pos;
}

inline Tree expand_chain(const std::string& label, std::vector<Tree> kids) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto at = label.find(kUnaryJoin, start);
    parts.push_back(label.substr(start, at - start));
    if (at == std::string::npos) break;
    start = at + 1;
  }
  Tree t = Tree::node(parts.back(), std::move(kids));
  for (std::size_t i = parts.size() - 1; i-- > 0;) {
    std::vector<Tree> one;
    one.push_back(std::move(t));
    t = Tree::node(parts[i], std::move(one));
  }
  return t;
}

inline bool is_punctuation_tag(const std::string& tag) {
  static const std::set<std::string> kPunct = {",", ".", ":", "``", "''"};
  return kPunct.count(tag) > 0;
}

inline bool drop_punctuation(Tree& t) {
  if (t.is_leaf()) return !is_punctuation_tag(t.label);
  std::vector<Tree> kept;
  for (auto& c : t.children) {
    if (drop_punctuation(c)) kept.push_back(std::move(c));
  }
  t.children = std::move(kept);
  return !t.children.empty();
}

inline void lowercase_words(Tree& t) {
  if (t.is_leaf()) {
    for (auto& ch : t.word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return;
  }
  for (auto& c : t.children) lowercase_words(c);
}

inline bool has_disfluency_label(const Tree& t) {
  if (t.is_leaf()) return false;
  std::size_t start = 0;
  while (true) {
    auto at = t.label.find(kUnaryJoin, start);
    auto part = t.label.substr(start, at - start);
    if (part == "EDITED" || part == "INTJ") return true;
    if (at == std::string::npos) break;
    start = at + 1;
  }
  for (const auto& c : t.children) {
    if (has_disfluency_label(c)) return true;
  }
  return false;
}

}  // namespace detail

// Reads zero or more bracketed trees. Outer ROOT/TOP/empty wrappers with a
// single child are removed; -NONE- subtrees and function tags are dropped.
inline std::vector<Tree> parse_ptb(std::string_view text) {
  detail::BracketReader reader(text);
  std::vector<Tree> trees;
  while (!reader.at_end()) {
    Tree t = reader.read_tree();
    if (!detail::clean_tree(t)) {
      fail(ErrorKind::kData, "rejected sentence " + std::to_string(trees.size()) +
                                 ": no words remain after trace removal");
    }
    while (!t.is_leaf() && detail::is_wrapper_label(t.label) && t.children.size() == 1 &&
           !t.children[0].is_leaf()) {
      Tree inner = std::move(t.children[0]);
      t = std::move(inner);
    }
    if (t.label == "ROOT" || t.label == "TOP") t.label.clear();
    trees.push_back(std::move(t));
  }
  return trees;
}

inline Tree parse_tree(std::string_view text) {
  auto trees = parse_ptb(text);
  if (trees.size() != 1) {
    fail(ErrorKind::kParse, "expected exactly one tree, found " + std::to_string(trees.size()));
  }
  return std::move(trees[0]);
}

inline std::string serialize(const Tree& t) {
  std::string out;
  detail::serialize_into(t, out);
  return out;
}

// One tree per non-blank line.
inline std::vector<Tree> read_tree_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kData, "cannot open tree file: " + path);
  std::vector<Tree> trees;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto parsed = parse_ptb(line);
      for (auto& t : parsed) trees.push_back(std::move(t));
    } catch (const Error& e) {
      throw Error(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trees;
}

inline void write_tree_file(const std::string& path, const std::vector<Tree>& trees) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::kData, "cannot write tree file: " + path);
  for (const auto& t : trees) out << serialize(t) << '\n';
}

// One span per maximal unary chain of internal nodes, in pre-order.
inline std::vector<LabeledSpan> tree_to_spans(const Tree& tree) {
  std::vector<LabeledSpan> spans;
  if (tree.is_leaf()) return spans;
  int pos = 0;
  detail::collect_spans(tree, pos, spans);
  return spans;
}

// Inverse of tree_to_spans. Spans sharing a fencepost pair are joined into a
// unary chain in input order; empty-labeled spans produce no node.
inline Tree spans_to_tree(const std::vector<LabeledSpan>& spans, const std::vector<Leaf>& leaves) {
  const int T = static_cast<int>(leaves.size());
  if (T == 0) fail(ErrorKind::kData, "spans_to_tree: empty sentence");

  std::vector<LabeledSpan> sorted;
  for (const auto& s : spans) {
    if (s.a < 0 || s.b > T || s.a >= s.b) {
      fail(ErrorKind::kData, "invalid span (" + std::to_string(s.a) + "," + std::to_string(s.b) +
                                 ") for sentence of length " + std::to_string(T));
    }
    if (!s.label.empty()) sorted.push_back(s);
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const LabeledSpan& x, const LabeledSpan& y) {
    if (x.a != y.a) return x.a < y.a;
    return x.b > y.b;
  });
  std::vector<LabeledSpan> merged;
  for (auto& s : sorted) {
    if (!merged.empty() && merged.back().a == s.a && merged.back().b == s.b) {
      merged.back().label += kUnaryJoin;
      merged.back().label += s.label;
    } else {
      merged.push_back(std::move(s));
    }
  }

  std::vector<const LabeledSpan*> stack;
  for (const auto& s : merged) {
    while (!stack.empty() && stack.back()->b <= s.a) stack.pop_back();
    if (!stack.empty() && s.b > stack.back()->b) {
      const auto& o = *stack.back();
      fail(ErrorKind::kData, "crossing spans (" + std::to_string(o.a) + "," + std::to_string(o.b) +
                                 "," + o.label + ") and (" + std::to_string(s.a) + "," +
                                 std::to_string(s.b) + "," + s.label + ")");
    }
    stack.push_back(&s);
  }

  std::size_t next = 0;
  auto build = [&](auto&& self, int a, int b, const std::string& label) -> Tree {
    std::vector<Tree> kids;
    int pos = a;
    while (pos < b) {
      if (next < merged.size() && merged[next].a == pos && merged[next].b <= b) {
        const auto& c = merged[next++];
        kids.push_back(self(self, c.a, c.b, c.label));
        pos = c.b;
      } else {
        kids.push_back(Tree::leaf(leaves[pos].word, leaves[pos].tag));
        ++pos;
      }
    }
    if (label.empty()) return Tree::node("", std::move(kids));
    return detail::expand_chain(label, std::move(kids));
  };

  if (!merged.empty() && merged[0].a == 0 && merged[0].b == T) {
    const auto& root = merged[next++];
    return build(build, 0, T, root.label);
  }
  return build(build, 0, T, "");
}

enum class Fluency { kFluent, kDisfluent };

inline const char* to_string(Fluency f) {
  return f == Fluency::kFluent ? "fluent" : "disfluent";
}

// Disfluent iff any internal node (or chain component) is EDITED or INTJ.
inline Fluency classify_fluency(const Tree& tree) {
  return detail::has_disfluency_label(tree) ? Fluency::kDisfluent : Fluency::kFluent;
}

// Removes punctuation leaves (EVALB's deletion list) and empty constituents.
inline Tree remove_punctuation(Tree tree) {
  if (!detail::drop_punctuation(tree)) {
    fail(ErrorKind::kData, "rejected sentence: only punctuation");
  }
  return tree;
}

// Written-text tree -> speech-transcript style: lowercased, no punctuation.
inline Tree speechify(Tree tree) {
  detail::lowercase_words(tree);
  return remove_punctuation(std::move(tree));
}

}  // namespace prosparse
