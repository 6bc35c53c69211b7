// SPDX-License-Identifier: Apache-2.0
#pragma once

// Forward/backward evaluation of a loss fragment and a central finite-difference check.
//
// A fragment is any callable Binding<S>& -> Var<S> (1x1) that reads its
// parameters through the binding. It must be a pure function of the parameter
// values: any randomness has to be re-seeded inside the call.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "trj/autodiff.hpp"
#include "trj/parameters.hpp"

namespace trj {

template <class S>
using Fragment = std::function<Var<S>(Binding<S>&)>;

template <class S>
struct Evaluation {
  S value{};
  Gradients<S> gradients;
};

/// Runs the fragment once with every parameter trainable and returns its value and adjoints.
template <class S>
Evaluation<S> evaluate_with_gradients(const Fragment<S>& f, const ParameterStore<S>& params) {
  Tape<S> tape;
  Binding<S> bind(tape, params, true);
  for (const auto& n : params.names()) bind(n);
  Var<S> out = f(bind);
  if (out.rows() != 1 || out.cols() != 1) throw ConfigError("fragment must return a scalar");
  tape.backward(out);
  return {out.scalar(), bind.gradients()};
}

/// Plain forward evaluation; nothing is recorded for backward.
template <class S>
S evaluate_forward(const Fragment<S>& f, const ParameterStore<S>& params) {
  Tape<S> tape;
  Binding<S> bind(tape, params, false);
  return f(bind).scalar();
}

struct ParameterCheck {
  std::string name;
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t entries_checked = 0;
};

struct GradientReport {
  std::vector<ParameterCheck> parameters;
  double tolerance = 1e-4;
  bool passed = true;

  double max_relative_error() const {
    double m = 0.0;
    for (const auto& p : parameters) m = std::max(m, p.max_relative_error);
    return m;
  }
  const ParameterCheck* worst() const {
    const ParameterCheck* w = nullptr;
    for (const auto& p : parameters) {
      if (!w || p.max_relative_error > w->max_relative_error) w = &p;
    }
    return w;
  }
};

struct GradientCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Per parameter: relative error = max_i |a_i - n_i| / max(max_i |a_i|, max_i |n_i|, floor).
  double floor = 1e-6;
};

/// Compares analytic adjoints with central differences for every parameter entry.
inline GradientReport gradient_check(const Fragment<double>& f, const ParameterStore<double>& params,
                                     const GradientCheckOptions& opt = {}) {
  const auto analytic = evaluate_with_gradients(f, params);
  GradientReport report;
  report.tolerance = opt.tolerance;
  ParameterStore<double> probe = params;
  for (const auto& name : params.names()) {
    ParameterCheck pc;
    pc.name = name;
    const Matrix<double> base = params.get(name);
    const Matrix<double>& g = analytic.gradients.at(name);
    Matrix<double> work = base;
    double scale = opt.floor;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
      work(i) = base(i) + opt.step;
      probe.set(name, work);
      const double up = evaluate_forward(f, probe);
      work(i) = base(i) - opt.step;
      probe.set(name, work);
      const double down = evaluate_forward(f, probe);
      work(i) = base(i);
      const double numeric = (up - down) / (2.0 * opt.step);
      pc.max_absolute_error = std::max(pc.max_absolute_error, std::abs(g(i) - numeric));
      scale = std::max({scale, std::abs(g(i)), std::abs(numeric)});
      ++pc.entries_checked;
    }
    pc.max_relative_error = pc.max_absolute_error / scale;
    probe.set(name, base);
    report.passed = report.passed && pc.max_relative_error <= opt.tolerance;
    report.parameters.push_back(pc);
  }
  return report;
}

}  // namespace trj
