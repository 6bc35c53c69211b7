// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation in creation order, which is already a
// topological order, so backward() is a single reverse sweep. Values are
// column-major Eigen matrices; batches live in columns. Each primitive has a
// hand-written adjoint. Nodes that do not depend on a trainable leaf keep no
// adjoint closure, so a tape without variables is a plain forward evaluation.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "trj/error.hpp"

namespace trj::ad {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class S>
class Var {
 public:
  Var() = default;
  Var(Tape<S>* tape, int id) : tape_(tape), id_(id) {}

  Tape<S>* tape() const { return tape_; }
  int id() const { return id_; }
  const Matrix<S>& value() const { return tape_->value(id_); }
  const Matrix<S>& grad() const { return tape_->grad(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }

 private:
  Tape<S>* tape_ = nullptr;
  int id_ = -1;
};

template <class S>
class Tape {
 public:
  using Mat = Matrix<S>;
  using Adjoint = std::function<void(Tape&)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> constant(Mat value) { return push("constant", std::move(value), false, {}); }
  Var<S> variable(Mat value) { return push("variable", std::move(value), true, {}); }

  /// Records a primitive. `adjoint` is dropped when no input needs a gradient.
  Var<S> record(const char* op, Mat value, std::initializer_list<Var<S>> inputs, Adjoint adjoint) {
    return record(op, std::move(value), std::span<const Var<S>>(inputs.begin(), inputs.size()), std::move(adjoint));
  }

  Var<S> record(const char* op, Mat value, std::span<const Var<S>> inputs, Adjoint adjoint) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    if (!value.allFinite()) throw NumericError(op);
    Var<S> out = push(op, std::move(value), needs, {});
    if (needs) nodes_[out.id()].adjoint = std::move(adjoint);
    return out;
  }

  const Mat& value(int id) const { return nodes_[id].value; }
  const Mat& grad(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }
  const char* op(int id) const { return nodes_[id].op; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the adjoint of node `id` (no-op for constants).
  template <class Expr>
  void accumulate(int id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Adds `g` into the sub-block of node `id` starting at (row, col).
  template <class Expr>
  void accumulate_block(int id, Eigen::Index row, Eigen::Index col, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  /// Seeds `root` with `seed` (ones for a 1x1 root) and sweeps the tape in reverse.
  void backward(Var<S> root, const Mat* seed = nullptr) {
    Node& r = nodes_[root.id()];
    if (seed) {
      if (seed->rows() != r.value.rows() || seed->cols() != r.value.cols()) {
        throw ConfigError("backward seed shape does not match the root");
      }
      r.grad = *seed;
    } else {
      if (r.value.size() != 1) throw ConfigError("backward without a seed needs a scalar root");
      r.grad = Mat::Ones(1, 1);
    }
    for (int i = root.id(); i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.adjoint && n.grad.size() != 0) {
        current_ = i;
        n.adjoint(*this);
      }
    }
  }

  /// Adjoint of the node whose closure is currently running.
  const Mat& upstream() const { return nodes_[current_].grad; }

 private:
  struct Node {
    const char* op;
    Mat value;
    Mat grad;
    Adjoint adjoint;
    bool needs_grad;
  };

  Var<S> push(const char* op, Mat value, bool needs_grad, Adjoint adjoint) {
    nodes_.push_back(Node{op, std::move(value), Mat(), std::move(adjoint), needs_grad});
    return Var<S>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  int current_ = -1;
};

namespace detail {

template <class S>
void require_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimensions differ");
  Tape<S>& t = *a.tape();
  Matrix<S> v;
  v.noalias() = a.value() * b.value();
  return t.record("matmul", std::move(v), {a, b}, [a, b](Tape<S>& t) {
    const auto& g = t.upstream();
    if (t.needs_grad(a.id())) t.accumulate(a.id(), g * b.value().transpose());
    if (t.needs_grad(b.id())) t.accumulate(b.id(), a.value().transpose() * g);
  });
}

/// a^T b
template <class S>
Var<S> matmul_tn(Var<S> a, Var<S> b) {
  if (a.rows() != b.rows()) throw ConfigError("matmul_tn: row counts differ");
  Tape<S>& t = *a.tape();
  Matrix<S> v;
  v.noalias() = a.value().transpose() * b.value();
  return t.record("matmul_tn", std::move(v), {a, b}, [a, b](Tape<S>& t) {
    const auto& g = t.upstream();
    if (t.needs_grad(a.id())) t.accumulate(a.id(), b.value() * g.transpose());
    if (t.needs_grad(b.id())) t.accumulate(b.id(), a.value() * g);
  });
}

/// Elementwise sum; `b` may also be a column vector broadcast across the columns of `a`.
template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape();
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return t.record("add", a.value() + b.value(), {a, b}, [a, b](Tape<S>& t) {
      t.accumulate(a.id(), t.upstream());
      t.accumulate(b.id(), t.upstream());
    });
  }
  if (b.cols() == 1 && b.rows() == a.rows()) {
    Matrix<S> v = a.value().colwise() + b.value().col(0);
    return t.record("add_bias", std::move(v), {a, b}, [a, b](Tape<S>& t) {
      t.accumulate(a.id(), t.upstream());
      if (t.needs_grad(b.id())) t.accumulate(b.id(), t.upstream().rowwise().sum());
    });
  }
  detail::require_same_shape("add", a, b);
  return {};
}

/// W x + b with b broadcast over columns.
template <class S>
Var<S> affine(Var<S> w, Var<S> x, Var<S> b) {
  return add(matmul(w, x), b);
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same_shape("sub", a, b);
  return a.tape()->record("sub", a.value() - b.value(), {a, b}, [a, b](Tape<S>& t) {
    t.accumulate(a.id(), t.upstream());
    if (t.needs_grad(b.id())) t.accumulate(b.id(), -t.upstream());
  });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same_shape("mul", a, b);
  return a.tape()->record("mul", a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape<S>& t) {
    const auto& g = t.upstream();
    if (t.needs_grad(a.id())) t.accumulate(a.id(), g.cwiseProduct(b.value()));
    if (t.needs_grad(b.id())) t.accumulate(b.id(), g.cwiseProduct(a.value()));
  });
}

template <class S>
Var<S> div(Var<S> a, Var<S> b) {
  detail::require_same_shape("div", a, b);
  return a.tape()->record("div", a.value().cwiseQuotient(b.value()), {a, b}, [a, b](Tape<S>& t) {
    const auto& g = t.upstream();
    if (t.needs_grad(a.id())) t.accumulate(a.id(), g.cwiseQuotient(b.value()));
    if (t.needs_grad(b.id())) {
      t.accumulate(b.id(), -(g.cwiseProduct(a.value()).cwiseQuotient(b.value().cwiseAbs2())));
    }
  });
}

template <class S>
Var<S> scale(Var<S> a, S s) {
  return a.tape()->record("scale", a.value() * s, {a}, [a, s](Tape<S>& t) { t.accumulate(a.id(), t.upstream() * s); });
}

template <class S>
Var<S> add_scalar(Var<S> a, S s) {
  return a.tape()->record("add_scalar", (a.value().array() + s).matrix(), {a},
                          [a](Tape<S>& t) { t.accumulate(a.id(), t.upstream()); });
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

template <class S>
Var<S> sigmoid(Var<S> a) {
  Matrix<S> y = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  return a.tape()->record("sigmoid", y, {a}, [a, y](Tape<S>& t) {
    t.accumulate(a.id(), (t.upstream().array() * y.array() * (S(1) - y.array())).matrix());
  });
}

template <class S>
Var<S> tanh(Var<S> a) {
  Matrix<S> y = a.value().array().tanh().matrix();
  return a.tape()->record("tanh", y, {a}, [a, y](Tape<S>& t) {
    t.accumulate(a.id(), (t.upstream().array() * (S(1) - y.array().square())).matrix());
  });
}

template <class S>
Var<S> relu(Var<S> a) {
  return a.tape()->record("relu", a.value().cwiseMax(S(0)), {a}, [a](Tape<S>& t) {
    t.accumulate(a.id(), (t.upstream().array() * (a.value().array() > S(0)).template cast<S>()).matrix());
  });
}

template <class S>
Var<S> softplus(Var<S> a) {
  const auto& x = a.value().array();
  Matrix<S> y = (x.max(S(0)) + (-x.abs()).exp().log1p()).matrix();
  return a.tape()->record("softplus", std::move(y), {a}, [a](Tape<S>& t) {
    const auto s = S(1) / (S(1) + (-a.value().array()).exp());
    t.accumulate(a.id(), (t.upstream().array() * s).matrix());
  });
}

template <class S>
Var<S> exp(Var<S> a) {
  Matrix<S> y = a.value().array().exp().matrix();
  return a.tape()->record("exp", y, {a}, [a, y](Tape<S>& t) {
    t.accumulate(a.id(), t.upstream().cwiseProduct(y));
  });
}

template <class S>
Var<S> log(Var<S> a) {
  return a.tape()->record("log", a.value().array().log().matrix(), {a}, [a](Tape<S>& t) {
    t.accumulate(a.id(), t.upstream().cwiseQuotient(a.value()));
  });
}

/// Square root with a zero subgradient at 0.
template <class S>
Var<S> sqrt(Var<S> a) {
  Matrix<S> y = a.value().cwiseMax(S(0)).cwiseSqrt();
  return a.tape()->record("sqrt", y, {a}, [a, y](Tape<S>& t) {
    Matrix<S> d = (y.array() > S(0)).select(S(0.5) / y.array(), S(0)).matrix();
    t.accumulate(a.id(), t.upstream().cwiseProduct(d));
  });
}

template <class S>
Var<S> square(Var<S> a) {
  return a.tape()->record("square", a.value().cwiseAbs2(), {a}, [a](Tape<S>& t) {
    t.accumulate(a.id(), S(2) * t.upstream().cwiseProduct(a.value()));
  });
}

template <class S>
Var<S> abs(Var<S> a) {
  return a.tape()->record("abs", a.value().cwiseAbs(), {a}, [a](Tape<S>& t) {
    t.accumulate(a.id(), t.upstream().cwiseProduct(a.value().cwiseSign()));
  });
}

/// Elementwise atan2(y, x); the gradient is zero where x = y = 0.
template <class S>
Var<S> atan2(Var<S> y, Var<S> x) {
  detail::require_same_shape("atan2", y, x);
  Matrix<S> v(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::atan2(y.value()(i), x.value()(i));
  return y.tape()->record("atan2", std::move(v), {y, x}, [y, x](Tape<S>& t) {
    const auto& g = t.upstream();
    const auto& yv = y.value();
    const auto& xv = x.value();
    Matrix<S> dy(yv.rows(), yv.cols()), dx(yv.rows(), yv.cols());
    for (Eigen::Index i = 0; i < yv.size(); ++i) {
      const S r2 = xv(i) * xv(i) + yv(i) * yv(i);
      dy(i) = r2 > S(0) ? g(i) * xv(i) / r2 : S(0);
      dx(i) = r2 > S(0) ? -g(i) * yv(i) / r2 : S(0);
    }
    t.accumulate(y.id(), dy);
    t.accumulate(x.id(), dx);
  });
}

/// Elementwise minimum; ties route the gradient to `a`.
template <class S>
Var<S> minimum(Var<S> a, Var<S> b) {
  detail::require_same_shape("minimum", a, b);
  return a.tape()->record("minimum", a.value().cwiseMin(b.value()), {a, b}, [a, b](Tape<S>& t) {
    const auto pick_a = (a.value().array() <= b.value().array()).template cast<S>();
    t.accumulate(a.id(), (t.upstream().array() * pick_a).matrix());
    t.accumulate(b.id(), (t.upstream().array() * (S(1) - pick_a)).matrix());
  });
}

/// Elementwise maximum; ties route the gradient to `a`.
template <class S>
Var<S> maximum(Var<S> a, Var<S> b) {
  detail::require_same_shape("maximum", a, b);
  return a.tape()->record("maximum", a.value().cwiseMax(b.value()), {a, b}, [a, b](Tape<S>& t) {
    const auto pick_a = (a.value().array() >= b.value().array()).template cast<S>();
    t.accumulate(a.id(), (t.upstream().array() * pick_a).matrix());
    t.accumulate(b.id(), (t.upstream().array() * (S(1) - pick_a)).matrix());
  });
}

template <class S>
Var<S> clamp(Var<S> a, S lo, S hi) {
  return a.tape()->record("clamp", a.value().cwiseMax(lo).cwiseMin(hi), {a}, [a, lo, hi](Tape<S>& t) {
    const auto inside = ((a.value().array() >= lo) && (a.value().array() <= hi)).template cast<S>();
    t.accumulate(a.id(), (t.upstream().array() * inside).matrix());
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class S>
Var<S> sum(Var<S> a) {
  Matrix<S> v(1, 1);
  v(0, 0) = a.value().sum();
  return a.tape()->record("sum", std::move(v), {a}, [a](Tape<S>& t) {
    t.accumulate(a.id(), Matrix<S>::Constant(a.rows(), a.cols(), t.upstream()(0, 0)));
  });
}

template <class S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

/// Column sums as a 1 x cols row.
template <class S>
Var<S> col_sums(Var<S> a) {
  return a.tape()->record("col_sums", a.value().colwise().sum(), {a}, [a](Tape<S>& t) {
    t.accumulate(a.id(), t.upstream().replicate(a.rows(), 1));
  });
}

/// Sum of elementwise products, 1x1.
template <class S>
Var<S> dot(Var<S> a, Var<S> b) {
  return sum(mul(a, b));
}

template <class S>
Var<S> rows(Var<S> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ConfigError("rows: slice out of range");
  return a.tape()->record("rows", a.value().middleRows(start, count), {a}, [a, start](Tape<S>& t) {
    t.accumulate_block(a.id(), start, 0, t.upstream());
  });
}

template <class S>
Var<S> cols(Var<S> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("cols: slice out of range");
  return a.tape()->record("cols", a.value().middleCols(start, count), {a}, [a, start](Tape<S>& t) {
    t.accumulate_block(a.id(), 0, start, t.upstream());
  });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: nothing to concatenate");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw ConfigError("concat_rows: column counts differ");
    total += p.rows();
  }
  Matrix<S> v(total, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape()->record("concat_rows", std::move(v), std::span<const Var<S>>(parts), [parts](Tape<S>& t) {
    Eigen::Index r = 0;
    for (const auto& p : parts) {
      t.accumulate(p.id(), t.upstream().middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw ConfigError("concat_cols: nothing to concatenate");
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw ConfigError("concat_cols: row counts differ");
    total += p.cols();
  }
  Matrix<S> v(parts.front().rows(), total);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    v.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape()->record("concat_cols", std::move(v), std::span<const Var<S>>(parts), [parts](Tape<S>& t) {
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      t.accumulate(p.id(), t.upstream().middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

// ---------------------------------------------------------------------------
// Composite primitives

/// One gated recurrent unit step for a batch (columns).
///
/// `gx` is the precomputed input projection W_x x + b_x, stacked as
/// [reset; update; candidate] (3H x B). With gh = W_h h + b_h:
///   r = sigmoid(gx_r + gh_r), u = sigmoid(gx_u + gh_u),
///   n = tanh(gx_n + r * gh_n), h' = (1 - u) * n + u * h.
template <class S>
Var<S> gru_cell(Var<S> gx, Var<S> h, Var<S> wh, Var<S> bh) {
  const Eigen::Index H = h.rows();
  if (gx.rows() != 3 * H || wh.rows() != 3 * H || wh.cols() != H || bh.rows() != 3 * H || bh.cols() != 1 ||
      gx.cols() != h.cols()) {
    throw ConfigError("gru_cell: inconsistent shapes");
  }
  Matrix<S> gh;
  gh.noalias() = wh.value() * h.value();
  gh.colwise() += bh.value().col(0);
  const auto& x = gx.value();
  Matrix<S> r = (S(1) / (S(1) + (-(x.topRows(H) + gh.topRows(H))).array().exp())).matrix();
  Matrix<S> u = (S(1) / (S(1) + (-(x.middleRows(H, H) + gh.middleRows(H, H))).array().exp())).matrix();
  Matrix<S> n = (x.bottomRows(H).array() + r.array() * gh.bottomRows(H).array()).tanh().matrix();
  Matrix<S> out = ((S(1) - u.array()) * n.array() + u.array() * h.value().array()).matrix();
  Matrix<S> ghn = gh.bottomRows(H);
  return gx.tape()->record("gru_cell", std::move(out), {gx, h, wh, bh},
                           [gx, h, wh, bh, r, u, n, ghn, H](Tape<S>& t) {
    const auto& dout = t.upstream();
    const auto hv = h.value().array();
    Matrix<S> dn_pre = (dout.array() * (S(1) - u.array()) * (S(1) - n.array().square())).matrix();
    Matrix<S> dr_pre = (dn_pre.array() * ghn.array() * r.array() * (S(1) - r.array())).matrix();
    Matrix<S> du_pre = (dout.array() * (hv - n.array()) * u.array() * (S(1) - u.array())).matrix();
    const Eigen::Index B = dout.cols();
    Matrix<S> dgx(3 * H, B);
    dgx.topRows(H) = dr_pre;
    dgx.middleRows(H, H) = du_pre;
    dgx.bottomRows(H) = dn_pre;
    t.accumulate(gx.id(), dgx);
    Matrix<S> dgh = dgx;
    dgh.bottomRows(H) = dn_pre.cwiseProduct(r);
    if (t.needs_grad(wh.id())) t.accumulate(wh.id(), dgh * h.value().transpose());
    if (t.needs_grad(bh.id())) t.accumulate(bh.id(), dgh.rowwise().sum());
    if (t.needs_grad(h.id())) {
      Matrix<S> dh = (dout.array() * u.array()).matrix();
      dh.noalias() += wh.value().transpose() * dgh;
      t.accumulate(h.id(), dh);
    }
  });
}

/// Sum over columns of -log softmax(logits)[label]. Labels index rows.
template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, std::span<const int> labels) {
  const Eigen::Index C = logits.rows(), B = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != B) throw ConfigError("softmax_cross_entropy: label count mismatch");
  Matrix<S> p(C, B);
  S total = 0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= C) throw ConfigError("softmax_cross_entropy: label out of range");
    const S m = logits.value().col(b).maxCoeff();
    p.col(b) = (logits.value().col(b).array() - m).exp().matrix();
    const S z = p.col(b).sum();
    p.col(b) /= z;
    total += -(logits.value()(y, b) - m - std::log(z));
  }
  Matrix<S> v(1, 1);
  v(0, 0) = total;
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape()->record("softmax_cross_entropy", std::move(v), {logits}, [logits, p, y](Tape<S>& t) {
    Matrix<S> g = p;
    for (std::size_t b = 0; b < y.size(); ++b) g(y[b], static_cast<Eigen::Index>(b)) -= S(1);
    t.accumulate(logits.id(), g * t.upstream()(0, 0));
  });
}

/// Negative log-density of `target` under N(mean, sigma^2 I), summed over all entries.
template <class S>
Var<S> gaussian_nll(Var<S> mean, const Matrix<S>& target, S sigma) {
  if (mean.rows() != target.rows() || mean.cols() != target.cols()) throw ConfigError("gaussian_nll: shape mismatch");
  const S c = std::log(sigma) + S(0.5) * std::log(S(2) * std::numbers::pi_v<S>);
  Matrix<S> v(1, 1);
  v(0, 0) = S(0.5) * (target - mean.value()).squaredNorm() / (sigma * sigma) + c * static_cast<S>(target.size());
  return mean.tape()->record("gaussian_nll", std::move(v), {mean}, [mean, target, sigma](Tape<S>& t) {
    t.accumulate(mean.id(), (mean.value() - target) * (t.upstream()(0, 0) / (sigma * sigma)));
  });
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over all entries.
template <class S>
Var<S> kl_unit_gaussian(Var<S> mu, Var<S> logvar) {
  detail::require_same_shape("kl_unit_gaussian", mu, logvar);
  Matrix<S> v(1, 1);
  v(0, 0) = S(0.5) * (logvar.value().array().exp() + mu.value().array().square() - S(1) - logvar.value().array()).sum();
  return mu.tape()->record("kl_unit_gaussian", std::move(v), {mu, logvar}, [mu, logvar](Tape<S>& t) {
    const S g = t.upstream()(0, 0);
    t.accumulate(mu.id(), mu.value() * g);
    t.accumulate(logvar.id(), ((logvar.value().array().exp() - S(1)) * (S(0.5) * g)).matrix());
  });
}

/// log(sum(exp(a))) over all entries, 1x1.
template <class S>
Var<S> logsumexp(Var<S> a) {
  const S m = a.value().maxCoeff();
  Matrix<S> e = (a.value().array() - m).exp().matrix();
  const S z = e.sum();
  Matrix<S> v(1, 1);
  v(0, 0) = m + std::log(z);
  Matrix<S> soft = e / z;
  return a.tape()->record("logsumexp", std::move(v), {a}, [a, soft](Tape<S>& t) {
    t.accumulate(a.id(), soft * t.upstream()(0, 0));
  });
}

/// Row-wise log(sum_l mask(i,l) * exp(a(i,l))) as a column. Every row needs a nonzero mask entry.
template <class S>
Var<S> masked_logsumexp_rows(Var<S> a, const Matrix<S>& mask) {
  if (a.rows() != mask.rows() || a.cols() != mask.cols()) throw ConfigError("masked_logsumexp_rows: shape mismatch");
  const Eigen::Index R = a.rows();
  Matrix<S> v(R, 1);
  Matrix<S> soft = Matrix<S>::Zero(R, a.cols());
  for (Eigen::Index i = 0; i < R; ++i) {
    S m = -std::numeric_limits<S>::infinity();
    for (Eigen::Index l = 0; l < a.cols(); ++l) {
      if (mask(i, l) != S(0)) m = std::max(m, a.value()(i, l));
    }
    if (!std::isfinite(m)) throw ConfigError("masked_logsumexp_rows: a row has an empty mask");
    S z = 0;
    for (Eigen::Index l = 0; l < a.cols(); ++l) {
      if (mask(i, l) != S(0)) {
        soft(i, l) = std::exp(a.value()(i, l) - m);
        z += soft(i, l);
      }
    }
    soft.row(i) /= z;
    v(i, 0) = m + std::log(z);
  }
  return a.tape()->record("masked_logsumexp_rows", std::move(v), {a}, [a, soft](Tape<S>& t) {
    t.accumulate(a.id(), (soft.array().colwise() * t.upstream().col(0).array()).matrix());
  });
}

/// Scales every column to unit Euclidean norm.
template <class S>
Var<S> l2_normalize_cols(Var<S> a, S eps = S(1e-12)) {
  Matrix<S> norms = a.value().colwise().norm().cwiseMax(eps);
  Matrix<S> y = a.value().array().rowwise() / norms.row(0).array();
  return a.tape()->record("l2_normalize_cols", y, {a}, [a, y, norms](Tape<S>& t) {
    const auto& g = t.upstream();
    Matrix<S> proj = y.cwiseProduct(g).colwise().sum();
    Matrix<S> d = g - (y.array().rowwise() * proj.row(0).array()).matrix();
    t.accumulate(a.id(), (d.array().rowwise() / norms.row(0).array()).matrix());
  });
}

// ---------------------------------------------------------------------------
// Operators, so geometry code can be written once for double and Var.

template <class S> Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <class S> Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <class S> Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <class S> Var<S> operator/(Var<S> a, Var<S> b) { return div(a, b); }
template <class S> Var<S> operator-(Var<S> a) { return scale(a, S(-1)); }
template <class S> Var<S> operator*(Var<S> a, std::type_identity_t<S> s) { return scale(a, s); }
template <class S> Var<S> operator*(std::type_identity_t<S> s, Var<S> a) { return scale(a, s); }
template <class S> Var<S> operator+(Var<S> a, std::type_identity_t<S> s) { return add_scalar(a, s); }
template <class S> Var<S> operator-(Var<S> a, std::type_identity_t<S> s) { return add_scalar(a, -s); }

}  // namespace trj::ad
