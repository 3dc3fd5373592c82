#pragma once

// Deliberately naive reference implementations used to check the library.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "vfm/rng.hpp"

namespace vfm::oracle {

// O(n^2) pairwise Mann-Whitney count.
inline double auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) wins += 1.0;
      else if (s[i] == s[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Enumerates each distinct threshold and rescans the full list.
inline double average_precision(const std::vector<double>& s, const std::vector<int>& y) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double positives = 0.0;
  for (int v : y) positives += v;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] ? tp : fp) += 1.0;
    }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
  }
  return ap;
}

// Random binary-labelled scores with a small value alphabet so ties are common.
struct ScoredCase {
  std::vector<double> scores;
  std::vector<int> labels;
};

inline ScoredCase random_case(Rng& rng, std::size_t n, bool heavy_ties) {
  ScoredCase c;
  const std::size_t levels = heavy_ties ? 1 + rng.below(6) : 1000;
  do {
    c.scores.clear();
    c.labels.clear();
    for (std::size_t i = 0; i < n; ++i) {
      c.scores.push_back(static_cast<double>(rng.below(levels)) / static_cast<double>(levels));
      c.labels.push_back(rng.bernoulli(0.4) ? 1 : 0);
    }
  } while (std::count(c.labels.begin(), c.labels.end(), 1) == 0 ||
           std::count(c.labels.begin(), c.labels.end(), 0) == 0);
  return c;
}

}  // namespace vfm::oracle
