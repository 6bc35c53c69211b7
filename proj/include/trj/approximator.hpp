// SPDX-License-Identifier: Apache-2.0
#pragma once

// Learned stand-in for an attribute program: a GRU reads the window, and an
// affine head on its last hidden state predicts the program value. Input at
// frame t is [s_t; k * (s_t - s_{t-1})] as in the TVAE encoder. The output is
// predicted in standardized units and mapped back with the training targets'
// mean and standard deviation; the head weights start at zero, so the initial
// prediction is the target mean.
//
// Relative error = mean |prediction - target| / mean |target| over held-out windows.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trj/autodiff.hpp"
#include "trj/error.hpp"
#include "trj/parameters.hpp"
#include "trj/programs.hpp"
#include "trj/rng.hpp"
#include "trj/trajectory.hpp"
#include "trj/tvae.hpp"

namespace trj {

struct ApproximatorConfig {
  int hidden = 256;
  int window_length = 21;
  double delta_input_scale = 10.0;
  int batch = 128;
  double lr = 1e-3;
  int max_steps = 5000;
  int eval_every = 250;
  double target_error = 0.02;
  double val_fraction = 0.1;
  std::size_t max_val_windows = 2000;
  std::size_t min_windows = 10000;
  std::uint64_t seed = 0;
};

class ProgramApproximator {
 public:
  ProgramApproximator() = default;

  const AttributeProgram& program() const { return program_; }
  const ApproximatorConfig& config() const { return cfg_; }
  double validation_error() const { return validation_error_; }
  int steps_trained() const { return steps_; }
  const ParameterStore<float>& params() const { return params_; }

  /// Program estimate (1 x B) from per-frame states; gradients flow into `states`.
  template <class S>
  Var<S> forward(Tape<S>& tape, const std::vector<Var<S>>& states) const {
    const ParameterStore<S>& store = store_for<S>();
    Binding<S> bind(tape, store, false);
    return forward_bound(bind, states);
  }

  double predict(const Window& w) const {
    Tape<double> tape;
    const auto m = stack_windows<double>(std::span<const Window>(&w, 1));
    std::vector<Var<double>> states;
    for (const auto& s : m) states.push_back(tape.constant(s));
    return forward(tape, states).scalar();
  }

 private:
  friend ProgramApproximator train_program_approximator(const AttributeProgram&, const Dataset&,
                                                        const ApproximatorConfig&);

  template <class S>
  Var<S> forward_bound(Binding<S>& bind, const std::vector<Var<S>>& states) const {
    const int B = static_cast<int>(states.front().cols());
    const S k = static_cast<S>(cfg_.delta_input_scale);
    Var<S> wx = bind("approx.Wx"), bx = bind("approx.bx"), wh = bind("approx.Wh"), bh = bind("approx.bh");
    Var<S> h = bind.tape().constant(Matrix<S>::Zero(cfg_.hidden, B));
    for (std::size_t t = 0; t < states.size(); ++t) {
      Var<S> delta = t == 0 ? states[0] * S(0) : (states[t] - states[t - 1]) * k;
      Var<S> x = ad::concat_rows<S>({states[t], delta});
      h = ad::gru_cell(ad::affine(wx, x, bx), h, wh, bh);
    }
    Var<S> y = apply_affine(bind, "approx.out.", h);
    return y * static_cast<S>(scale_) + static_cast<S>(mean_);
  }

  template <class S>
  const ParameterStore<S>& store_for() const {
    if constexpr (std::is_same_v<S, float>) {
      return params_;
    } else {
      return params_double_;
    }
  }

  AttributeProgram program_;
  ApproximatorConfig cfg_;
  ParameterStore<float> params_;
  ParameterStore<double> params_double_;
  double mean_ = 0.0;
  double scale_ = 1.0;
  double validation_error_ = 0.0;
  int steps_ = 0;
};

namespace detail {

inline double approximator_error(const ProgramApproximator& a, std::span<const Window> windows,
                                 std::span<const double> targets) {
  double num = 0.0, den = 0.0;
  constexpr std::size_t chunk = 512;
  for (std::size_t start = 0; start < windows.size(); start += chunk) {
    const std::size_t n = std::min(chunk, windows.size() - start);
    Tape<float> tape;
    std::vector<Var<float>> states;
    for (const auto& s : stack_windows<float>(windows.subspan(start, n))) states.push_back(tape.constant(s));
    const auto pred = a.forward(tape, states).value();
    for (std::size_t i = 0; i < n; ++i) {
      num += std::abs(static_cast<double>(pred(0, static_cast<Eigen::Index>(i))) - targets[start + i]);
      den += std::abs(targets[start + i]);
    }
  }
  return den > 0.0 ? num / den : (num > 0.0 ? num : 0.0);
}

}  // namespace detail

/// Fits an approximator by Adam on MSE in standardized units, stopping once the
/// held-out relative error reaches the target. Throws TrainingFailure otherwise.
inline ProgramApproximator train_program_approximator(const AttributeProgram& p, const Dataset& data,
                                                      const ApproximatorConfig& cfg = {}) {
  check_program_layout(p, data.layout());
  auto refs = all_frames(data);
  if (refs.size() < cfg.min_windows) {
    throw ConfigError("approximator training needs at least " + std::to_string(cfg.min_windows) + " windows, got " +
                      std::to_string(refs.size()));
  }
  Rng rng(derive_seed(cfg.seed, {seed_tag(p.id)}));
  std::shuffle(refs.begin(), refs.end(), rng);
  const auto n_val = std::min<std::size_t>(cfg.max_val_windows,
                                           std::max<std::size_t>(1, static_cast<std::size_t>(cfg.val_fraction * refs.size())));
  std::vector<Window> val_windows;
  std::vector<double> val_targets;
  for (std::size_t i = 0; i < n_val; ++i) {
    val_windows.push_back(window_at(data.trajectories[refs[i].trajectory], refs[i].frame, cfg.window_length));
    val_targets.push_back(evaluate_program(p, val_windows.back()).value);
  }
  const std::vector<FrameRef> train(refs.begin() + static_cast<std::ptrdiff_t>(n_val), refs.end());
  std::vector<double> train_targets(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    train_targets[i] =
        evaluate_program(p, window_at(data.trajectories[train[i].trajectory], train[i].frame, cfg.window_length)).value;
  }

  ProgramApproximator a;
  a.program_ = p;
  a.cfg_ = cfg;
  const double mean = std::accumulate(train_targets.begin(), train_targets.end(), 0.0) / static_cast<double>(train.size());
  double var = 0.0;
  for (double v : train_targets) var += (v - mean) * (v - mean);
  var /= static_cast<double>(train.size());
  a.mean_ = mean;
  a.scale_ = var > 0.0 ? std::sqrt(var) : 1.0;

  const int D = data.layout().state_dim(), H = cfg.hidden;
  a.params_.add("approx.Wx", uniform_init<float>(3 * H, 2 * D, 2 * D, rng));
  a.params_.add("approx.bx", Matrix<float>::Zero(3 * H, 1));
  a.params_.add("approx.Wh", uniform_init<float>(3 * H, H, H, rng));
  a.params_.add("approx.bh", Matrix<float>::Zero(3 * H, 1));
  a.params_.add("approx.out.W", Matrix<float>::Zero(1, H));
  a.params_.add("approx.out.b", Matrix<float>::Zero(1, 1));

  ParameterStore<float> best = a.params_;
  double best_error = detail::approximator_error(a, val_windows, val_targets);
  a.validation_error_ = best_error;
  if (best_error <= cfg.target_error) {
    a.params_double_ = a.params_.cast<double>();
    return a;
  }
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  std::vector<Window> batch(cfg.batch);
  Matrix<float> target(1, cfg.batch);
  for (int step = 1; step <= cfg.max_steps; ++step) {
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t i = pick(rng);
      batch[b] = window_at(data.trajectories[train[i].trajectory], train[i].frame, cfg.window_length);
      target(0, b) = static_cast<float>((train_targets[i] - a.mean_) / a.scale_);
    }
    Tape<float> tape;
    Binding<float> bind(tape, a.params_, true);
    std::vector<Var<float>> states;
    for (const auto& s : stack_windows<float>(batch)) states.push_back(tape.constant(s));
    Var<float> pred = (a.forward_bound(bind, states) - static_cast<float>(a.mean_)) * static_cast<float>(1.0 / a.scale_);
    Var<float> loss = ad::mean(ad::square(pred - tape.constant(target)));
    tape.backward(loss);
    adam_step(a.params_, bind.gradients(), adam);
    a.steps_ = step;
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      const double err = detail::approximator_error(a, val_windows, val_targets);
      if (err < best_error) {
        best_error = err;
        best = a.params_;
      }
      if (best_error <= cfg.target_error) break;
    }
  }
  a.params_ = best;
  a.validation_error_ = best_error;
  a.params_double_ = a.params_.cast<double>();
  if (best_error > cfg.target_error) {
    throw TrainingFailure("approximator for '" + p.id + "' reached relative error " + std::to_string(best_error) +
                              ", target " + std::to_string(cfg.target_error),
                          best_error);
  }
  return a;
}

}  // namespace trj
