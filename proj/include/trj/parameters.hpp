// SPDX-License-Identifier: Apache-2.0
#pragma once

// Named parameter storage, tape binding, Adam, and the checkpoint container.
//
// Checkpoint layout (little-endian):
//   "TRB-CKPT-1"
//   u32 meta_len, meta bytes ("key=value" lines)
//   u32 array_count, then per array:
//     u32 name_len, name bytes, u32 rows, u32 cols, rows*cols f64 (row-major)

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "trj/autodiff.hpp"
#include "trj/binary_io.hpp"
#include "trj/error.hpp"
#include "trj/rng.hpp"

namespace trj {

using ad::Matrix;
using ad::Tape;
using ad::Var;

template <class S>
using Gradients = std::map<std::string, Matrix<S>>;

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class ParameterStore;

template <class S>
void adam_step(ParameterStore<S>& params, const Gradients<S>& grads, const AdamConfig& cfg);

/// Ordered set of named parameter arrays plus their Adam moments.
template <class S>
class ParameterStore {
 public:
  void add(const std::string& name, Matrix<S> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    Entry e;
    e.name = name;
    e.m = Matrix<S>::Zero(value.rows(), value.cols());
    e.v = Matrix<S>::Zero(value.rows(), value.cols());
    e.value = std::move(value);
    entries_.push_back(std::move(e));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Matrix<S>& get(const std::string& name) const { return entries_[find(name)].value; }

  /// Replaces a value; the shape must not change.
  void set(const std::string& name, const Matrix<S>& value) {
    Entry& e = entries_[find(name)];
    if (value.rows() != e.value.rows() || value.cols() != e.value.cols()) {
      throw ConfigError("parameter '" + name + "' cannot change shape");
    }
    e.value = value;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

  long long step() const { return step_; }

  template <class T>
  ParameterStore<T> cast() const {
    ParameterStore<T> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<T>());
    return out;
  }

  bool all_finite() const {
    for (const auto& e : entries_) {
      if (!e.value.allFinite()) return false;
    }
    return true;
  }

  bool operator==(const ParameterStore& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != o.entries_[i].name || entries_[i].value != o.entries_[i].value) return false;
    }
    return true;
  }

 private:
  template <class T>
  friend void adam_step(ParameterStore<T>&, const Gradients<T>&, const AdamConfig&);
  template <class T>
  friend struct AdamProbe;

  struct Entry {
    std::string name;
    Matrix<S> value;
    Matrix<S> m;
    Matrix<S> v;
  };

  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  long long step_ = 0;
};

/// Exposes optimizer moments to tests.
template <class S>
struct AdamProbe {
  static const Matrix<S>& first(const ParameterStore<S>& p, const std::string& n) { return p.entries_[p.find(n)].m; }
  static const Matrix<S>& second(const ParameterStore<S>& p, const std::string& n) { return p.entries_[p.find(n)].v; }
};

/// Binds parameters of a store onto a tape, one leaf per name.
template <class S>
class Binding {
 public:
  Binding(Tape<S>& tape, const ParameterStore<S>& store, bool trainable = true)
      : tape_(&tape), store_(&store), trainable_(trainable) {}

  Var<S> operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Matrix<S>& v = store_->get(name);
    Var<S> leaf = trainable_ ? tape_->variable(v) : tape_->constant(v);
    bound_.emplace(name, leaf);
    return leaf;
  }

  Tape<S>& tape() { return *tape_; }
  const ParameterStore<S>& store() const { return *store_; }

  /// Adjoints of every bound parameter after Tape::backward; untouched ones are zero.
  Gradients<S> gradients() const {
    Gradients<S> g;
    for (const auto& [name, var] : bound_) {
      if (tape_->has_grad(var.id())) {
        g.emplace(name, var.grad());
      } else {
        g.emplace(name, Matrix<S>::Zero(var.rows(), var.cols()));
      }
    }
    return g;
  }

 private:
  Tape<S>* tape_;
  const ParameterStore<S>* store_;
  bool trainable_;
  std::map<std::string, Var<S>> bound_;
};

/// Bias-corrected Adam update. Parameters absent from `grads` are left alone.
template <class S>
void adam_step(ParameterStore<S>& params, const Gradients<S>& grads, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    auto& e = params.entries_[params.find(name)];
    if (g.rows() != e.value.rows() || g.cols() != e.value.cols()) {
      throw ConfigError("gradient for '" + name + "' has the wrong shape");
    }
    if (!g.allFinite()) throw NumericError("adam_step:" + name);
  }
  ++params.step_;
  const double t = static_cast<double>(params.step_);
  const S c1 = static_cast<S>(1.0 - std::pow(cfg.beta1, t));
  const S c2 = static_cast<S>(1.0 - std::pow(cfg.beta2, t));
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S lr = static_cast<S>(cfg.lr), eps = static_cast<S>(cfg.eps);
  for (const auto& [name, g] : grads) {
    auto& e = params.entries_[params.find(name)];
    e.m = b1 * e.m + (S(1) - b1) * g;
    e.v = b2 * e.v + (S(1) - b2) * g.cwiseAbs2();
    e.value.array() -= lr * (e.m.array() / c1) / ((e.v.array() / c2).sqrt() + eps);
    if (!e.value.allFinite()) throw NumericError("adam_step:" + name);
  }
}

/// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <class S>
Matrix<S> uniform_init(int rows, int cols, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix<S> m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = static_cast<S>(dist(rng));
  }
  return m;
}

/// Adds weight `<prefix>W` (out x in) and zero bias `<prefix>b` (out x 1).
template <class S>
void add_affine(ParameterStore<S>& p, const std::string& prefix, int in, int out, Rng& rng) {
  p.add(prefix + "W", uniform_init<S>(out, in, in, rng));
  p.add(prefix + "b", Matrix<S>::Zero(out, 1));
}

template <class S>
Var<S> apply_affine(Binding<S>& bind, const std::string& prefix, Var<S> x) {
  return ad::affine(bind(prefix + "W"), x, bind(prefix + "b"));
}

/// Named arrays plus free-form metadata.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Matrix<double>>> arrays;

  template <class S>
  void add_store(const std::string& prefix, const ParameterStore<S>& store) {
    for (const auto& n : store.names()) arrays.emplace_back(prefix + n, store.get(n).template cast<double>());
  }

  /// Builds a store from every array whose name starts with `prefix`.
  template <class S>
  ParameterStore<S> store(const std::string& prefix) const {
    ParameterStore<S> out;
    for (const auto& [name, m] : arrays) {
      if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), m.template cast<S>());
    }
    return out;
  }

  const std::string& require(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw ParseError("checkpoint is missing metadata key '" + key + "'");
    return it->second;
  }
};

inline constexpr const char* kCheckpointMagic = "TRB-CKPT-1";

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  using namespace binary;
  out.write(kCheckpointMagic, 10);
  std::string meta;
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint metadata may not contain '=' in keys or newlines");
    }
    meta += k + "=" + v + "\n";
  }
  write_string(out, meta);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ck.arrays.size()));
  for (const auto& [name, m] : ck.arrays) {
    write_string(out, name);
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) write_le<double>(out, m(r, c));
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  using namespace binary;
  expect_magic(in, kCheckpointMagic);
  Checkpoint ck;
  std::istringstream meta(read_string(in));
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("checkpoint metadata line without '='");
    ck.meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto n = read_le<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = read_string(in);
    const auto rows = read_le<std::uint32_t>(in);
    const auto cols = read_le<std::uint32_t>(in);
    if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) throw ParseError("checkpoint array is implausibly large");
    Matrix<double> m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = read_le<double>(in);
    }
    ck.arrays.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  write_checkpoint(out, ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace trj
