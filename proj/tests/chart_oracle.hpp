#pragma once

#include <algorithm>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "prosparse/chart.hpp"

namespace testutil {

using prosparse::SpanScores;

inline SpanScores random_scores(std::mt19937_64& rng, std::size_t T, std::size_t L, double sd = 1.0) {
  std::normal_distribution<double> n(0, sd);
  SpanScores s(T, L);
  for (std::size_t a = 0; a < T; ++a)
    for (std::size_t b = a + 1; b <= T; ++b)
      for (std::size_t l = 1; l < L; ++l) s.set(a, b, l, n(rng));
  return s;
}

// Every binary bracketing of [a, b), as lists of spans.
inline std::vector<std::vector<std::pair<int, int>>> bracketings(int a, int b) {
  if (b - a == 1) return {{{a, b}}};
  std::vector<std::vector<std::pair<int, int>>> out;
  for (int k = a + 1; k < b; ++k)
    for (const auto& left : bracketings(a, k))
      for (const auto& right : bracketings(k, b)) {
        std::vector<std::pair<int, int>> t{{a, b}};
        t.insert(t.end(), left.begin(), left.end());
        t.insert(t.end(), right.begin(), right.end());
        out.push_back(std::move(t));
      }
  return out;
}

// Visits every label assignment of spans i..n-1 on top of the partial sum
// `acc` of spans before i.
inline void enumerate_labels(const double* table, std::size_t L, std::size_t i, std::size_t n, double acc,
                             double& best) {
  const double* row = table + i * L;
  const std::size_t from = i == 0 ? 1 : 0;  // the root takes a real label
  if (i + 1 == n) {
    for (std::size_t l = from; l < L; ++l) best = std::max(best, acc + row[l]);
    return;
  }
  for (std::size_t l = from; l < L; ++l) enumerate_labels(table, L, i + 1, n, acc + row[l], best);
}

// Exhaustive search over binary trees and every label assignment.
inline double brute_force(const SpanScores& s) {
  const int T = static_cast<int>(s.length());
  const std::size_t L = s.num_labels();
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& tree : bracketings(0, T)) {
    std::vector<double> table(tree.size() * L);
    for (std::size_t i = 0; i < tree.size(); ++i)
      for (std::size_t l = 0; l < L; ++l) table[i * L + l] = s(tree[i].first, tree[i].second, l);
    enumerate_labels(table.data(), L, 0, tree.size(), 0.0, best);
  }
  return best;
}

// Scores on a 1/16 grid, so every sum is exact in double precision and
// optima can be compared with ==.
inline SpanScores dyadic_scores(std::mt19937_64& rng, std::size_t T, std::size_t L) {
  std::uniform_int_distribution<int> k(-64, 64);
  SpanScores s(T, L);
  for (std::size_t a = 0; a < T; ++a)
    for (std::size_t b = a + 1; b <= T; ++b)
      for (std::size_t l = 1; l < L; ++l) s.set(a, b, l, k(rng) / 16.0);
  return s;
}

}  // namespace testutil
