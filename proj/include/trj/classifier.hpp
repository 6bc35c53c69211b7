// SPDX-License-Identifier: Apache-2.0
#pragma once

// Shallow frame classifier: standardized features -> [affine -> ReLU] x 2 -> class logits.
// Trained with softmax cross-entropy and Adam; the epoch with the best
// validation MAP is kept, and training stops after `patience` epochs without
// improvement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trj/error.hpp"
#include "trj/log.hpp"
#include "trj/metrics.hpp"
#include "trj/parameters.hpp"
#include "trj/rng.hpp"

namespace trj {

/// Hidden layer sizes by training fraction.
inline std::vector<int> hidden_sizes_for_fraction(double fraction) {
  if (fraction >= 0.5 - 1e-12) return {256, 32};
  if (fraction >= 0.10 - 1e-12) return {128, 16};
  return {64, 16};
}

struct ClassifierConfig {
  std::vector<int> hidden{256, 32};
  int classes = -1;  ///< -1: one more than the largest training label
  int batch = 512;
  double lr = 1e-3;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t seed = 0;
  /// When false, a class absent from the training labels is an error.
  bool allow_missing_classes = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_map = 0.0;
};

struct ClassifierModel {
  ParameterStore<float> params;
  std::vector<int> hidden;
  Eigen::RowVectorXd feature_mean;
  Eigen::RowVectorXd feature_scale;
  int classes = 0;
  int best_epoch = 0;
  double best_val_map = 0.0;
  std::vector<EpochRecord> history;

  /// Class probabilities, one row per input row.
  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const {
    if (x.cols() != feature_mean.size()) throw SchemaError("feature dimension does not match the classifier");
    Eigen::MatrixXd out(x.rows(), classes);
    constexpr Eigen::Index chunk = 4096;
    for (Eigen::Index start = 0; start < x.rows(); start += chunk) {
      const Eigen::Index n = std::min(chunk, x.rows() - start);
      Tape<float> tape;
      Binding<float> bind(tape, params, false);
      const Matrix<float> logits = forward(bind, standardize(x.middleRows(start, n))).value();
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd l = logits.col(i).cast<double>();
        const Eigen::VectorXd e = (l.array() - l.maxCoeff()).exp();
        out.row(start + i) = (e / e.sum()).transpose();
      }
    }
    return out;
  }

  /// Features x rows transposed into a float batch (features x n), standardized.
  Matrix<float> standardize(const Eigen::MatrixXd& x) const {
    return ((x.rowwise() - feature_mean).array().rowwise() / feature_scale.array()).matrix().transpose().cast<float>();
  }

  Var<float> forward(Binding<float>& bind, Matrix<float> x) const {
    Var<float> h = bind.tape().constant(std::move(x));
    for (std::size_t l = 0; l < hidden.size(); ++l) h = ad::relu(apply_affine(bind, "l" + std::to_string(l) + ".", h));
    return apply_affine(bind, "out.", h);
  }
};

inline ClassifierModel train_classifier(const Eigen::MatrixXd& x, std::span<const int> y, const Eigen::MatrixXd& x_val,
                                        std::span<const int> y_val, const ClassifierConfig& cfg) {
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != y.size()) throw ConfigError("need one label per training row");
  if (static_cast<std::size_t>(x_val.rows()) != y_val.size()) throw ConfigError("need one label per validation row");
  if (x_val.rows() > 0 && x_val.cols() != x.cols()) throw SchemaError("validation features differ in dimension");
  const int max_label = *std::max_element(y.begin(), y.end());
  const int classes = cfg.classes > 0 ? cfg.classes : max_label + 1;
  std::vector<int> counts(classes, 0);
  for (int v : y) {
    if (v < 0 || v >= classes) throw ConfigError("training label " + std::to_string(v) + " is out of range");
    ++counts[v];
  }
  std::string missing;
  for (int c = 0; c < classes; ++c) {
    if (counts[c] == 0) missing += (missing.empty() ? "" : ",") + std::to_string(c);
  }
  if (!missing.empty()) {
    if (!cfg.allow_missing_classes) throw ConfigError("training labels are missing classes: " + missing);
    warn("training labels are missing classes: " + missing);
  }

  ClassifierModel m;
  m.hidden = cfg.hidden;
  m.classes = classes;
  m.feature_mean = x.colwise().mean();
  m.feature_scale = ((x.rowwise() - m.feature_mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < m.feature_scale.size(); ++j) {
    if (!(m.feature_scale(j) > 1e-12)) m.feature_scale(j) = 1.0;
  }
  Rng rng(cfg.seed);
  int in = static_cast<int>(x.cols());
  for (std::size_t l = 0; l < cfg.hidden.size(); ++l) {
    add_affine(m.params, "l" + std::to_string(l) + ".", in, cfg.hidden[l], rng);
    in = cfg.hidden[l];
  }
  add_affine(m.params, "out.", in, classes, rng);

  const Matrix<float> xs = m.standardize(x);
  const bool has_val = x_val.rows() > 0;
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  std::vector<Eigen::Index> order(x.rows());
  std::iota(order.begin(), order.end(), 0);
  ParameterStore<float> best = m.params;
  m.best_val_map = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min<std::size_t>(cfg.batch, order.size() - start);
      Matrix<float> xb(xs.rows(), static_cast<Eigen::Index>(n));
      std::vector<int> yb(n);
      for (std::size_t i = 0; i < n; ++i) {
        xb.col(static_cast<Eigen::Index>(i)) = xs.col(order[start + i]);
        yb[i] = y[order[start + i]];
      }
      Tape<float> tape;
      Binding<float> bind(tape, m.params, true);
      Var<float> loss = ad::softmax_cross_entropy(m.forward(bind, std::move(xb)), std::span<const int>(yb)) *
                        (1.0f / static_cast<float>(n));
      tape.backward(loss);
      adam_step(m.params, bind.gradients(), adam);
      loss_sum += loss.scalar() * static_cast<double>(n);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(order.size());
    const auto eval_map = [&](const Eigen::MatrixXd& xe, std::span<const int> ye) {
      const auto sink = warning_sink();
      warning_sink() = nullptr;  // per-epoch exclusions would repeat every epoch
      const double v = mean_average_precision(m.predict_proba(xe), ye).map;
      warning_sink() = sink;
      return std::isnan(v) ? 0.0 : v;
    };
    rec.val_map = has_val ? eval_map(x_val, y_val) : eval_map(x, y);
    m.history.push_back(rec);
    if (rec.val_map > m.best_val_map) {
      m.best_val_map = rec.val_map;
      m.best_epoch = epoch;
      best = m.params;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  m.params = best;
  return m;
}

}  // namespace trj
