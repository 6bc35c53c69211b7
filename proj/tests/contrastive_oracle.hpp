// SPDX-License-Identifier: Apache-2.0
#pragma once

// Double-loop supervised contrastive loss, written independently of the library.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

namespace trj::testing {

/// projections: one column per batch element; classes[j][i]: class of element i under program j.
inline double naive_contrastive(const Eigen::MatrixXd& projections, const std::vector<std::vector<int>>& classes,
                                double temperature) {
  const int n = static_cast<int>(projections.cols());
  std::vector<Eigen::VectorXd> g(n);
  for (int i = 0; i < n; ++i) g[i] = projections.col(i) / projections.col(i).norm();
  double total = 0.0;
  for (const auto& cls : classes) {
    for (int i = 0; i < n; ++i) {
      double denom = 0.0;
      for (int l = 0; l < n; ++l) {
        if (l != i) denom += std::exp(g[i].dot(g[l]) / temperature);
      }
      int npos = 0;
      double acc = 0.0;
      for (int k = 0; k < n; ++k) {
        if (k == i || cls[k] != cls[i]) continue;
        ++npos;
        acc += std::log(std::exp(g[i].dot(g[k]) / temperature) / denom);
      }
      if (npos > 0) total += -acc / npos;
    }
  }
  return total;
}

}  // namespace trj::testing
