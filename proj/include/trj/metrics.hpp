// SPDX-License-Identifier: Apache-2.0
#pragma once

// Average precision and its macro mean over classes.
//
// AP = sum_k (R_k - R_{k-1}) P_k over the distinct score thresholds taken in
// decreasing order. Tied scores enter together, so the value depends only on
// the ranking. Without ties this is the mean precision at each positive.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trj/error.hpp"
#include "trj/log.hpp"

namespace trj {

/// AP of binary `positive` flags ranked by `scores`. Throws when there are no positives.
inline double average_precision(std::span<const double> scores, std::span<const int> positive) {
  if (scores.size() != positive.size()) throw ConfigError("scores and labels differ in length");
  const auto n_pos = std::count_if(positive.begin(), positive.end(), [](int p) { return p != 0; });
  if (n_pos == 0) throw ConfigError("average precision needs at least one positive");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  double tp = 0.0, seen = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += positive[order[j]] != 0;
      seen += 1.0;
      ++j;
    }
    const double recall = tp / static_cast<double>(n_pos);
    ap += (recall - prev_recall) * (tp / seen);
    prev_recall = recall;
    i = j;
  }
  return ap;
}

struct MapResult {
  /// NaN for classes without positives.
  std::vector<double> per_class;
  std::vector<int> excluded;
  double map = std::numeric_limits<double>::quiet_NaN();
};

/// scores: one row per frame, one column per class. Classes without positives are
/// excluded from the mean and listed in `excluded`.
inline MapResult mean_average_precision(const Eigen::MatrixXd& scores, std::span<const int> labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) throw ConfigError("one label per score row required");
  MapResult r;
  const auto C = static_cast<int>(scores.cols());
  std::vector<double> col(scores.rows());
  std::vector<int> pos(scores.rows());
  double sum = 0.0;
  int used = 0;
  for (int c = 0; c < C; ++c) {
    bool any = false;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      col[i] = scores(i, c);
      pos[i] = labels[i] == c;
      any = any || pos[i];
    }
    if (!any) {
      r.per_class.push_back(std::numeric_limits<double>::quiet_NaN());
      r.excluded.push_back(c);
      warn("class " + std::to_string(c) + " has no positives and is excluded from MAP");
      continue;
    }
    const double ap = average_precision(col, pos);
    r.per_class.push_back(ap);
    sum += ap;
    ++used;
  }
  if (used > 0) r.map = sum / used;
  return r;
}

}  // namespace trj
