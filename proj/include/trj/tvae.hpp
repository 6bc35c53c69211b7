// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trajectory variational autoencoder.
//
// Encoder: bidirectional GRU over x_t = [s_t; k * (s_t - s_{t-1})] (the delta is
// zero at t = 0, k = delta_input_scale). Hidden states of both directions are
// averaged over time, concatenated, and mapped to z_mu and z_logvar by affine
// heads; z_logvar is clamped to [-logvar_clamp, logvar_clamp].
//
// Decoder: GRU whose input at step t is [s_t; z] and whose affine head predicts
// s_{t+1} - s_t. The hidden state starts at zero.
//
// Parameters:
//   enc.fwd.{Wx,bx,Wh,bh}, enc.bwd.{Wx,bx,Wh,bh}, enc.mu.{W,b}, enc.logvar.{W,b}
//   dec.{Wxs,Wxz,bx,Wh,bh}, dec.out.{W,b}
// GRU blocks are stacked [reset; update; candidate].

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trj/autodiff.hpp"
#include "trj/error.hpp"
#include "trj/parameters.hpp"
#include "trj/rng.hpp"
#include "trj/trajectory.hpp"

namespace trj {

struct TvaeConfig {
  int state_dim = 28;
  int latent_dim = 32;
  int hidden = 256;
  int window_length = 21;
  double delta_input_scale = 10.0;
  /// Fixed standard deviation of the Gaussian over next-state deltas.
  double recon_sigma = 1.0;
  double logvar_clamp = 10.0;

  void validate() const {
    if (state_dim < 1 || latent_dim < 1 || hidden < 1) throw ConfigError("TVAE dimensions must be positive");
    if (window_length < 2) throw ConfigError("TVAE windows need at least 2 frames");
    if (!(recon_sigma > 0.0)) throw ConfigError("reconstruction sigma must be positive");
  }
};

/// Stacks frame t of every window into column b of states[t] (state_dim x B).
template <class S>
std::vector<Matrix<S>> stack_windows(std::span<const Window> windows) {
  if (windows.empty()) throw ConfigError("cannot stack an empty batch");
  const int T = windows.front().length();
  const int D = windows.front().layout().state_dim();
  const auto B = static_cast<Eigen::Index>(windows.size());
  std::vector<Matrix<S>> states(T, Matrix<S>(D, B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const Window& w = windows[b];
    if (w.length() != T || w.layout().state_dim() != D) throw SchemaError("batch mixes window shapes");
    for (int t = 0; t < T; ++t) {
      const auto s = w.frames[t].stacked();
      for (int d = 0; d < D; ++d) states[t](d, b) = static_cast<S>(s[d]);
    }
  }
  return states;
}

namespace detail {

template <class S>
void add_gru(ParameterStore<S>& p, const std::string& prefix, int in, int hidden, Rng& rng) {
  p.add(prefix + "Wx", uniform_init<S>(3 * hidden, in, in, rng));
  p.add(prefix + "bx", Matrix<S>::Zero(3 * hidden, 1));
  p.add(prefix + "Wh", uniform_init<S>(3 * hidden, hidden, hidden, rng));
  p.add(prefix + "bh", Matrix<S>::Zero(3 * hidden, 1));
}

/// Runs a GRU over precomputed input projections gx_all (3H x T*B, time-major blocks).
template <class S>
std::vector<Var<S>> run_gru(Binding<S>& bind, const std::string& prefix, Var<S> gx_all, int T, int B, int H,
                            bool reverse) {
  Var<S> h = bind.tape().constant(Matrix<S>::Zero(H, B));
  Var<S> wh = bind(prefix + "Wh");
  Var<S> bh = bind(prefix + "bh");
  std::vector<Var<S>> hs(T);
  for (int i = 0; i < T; ++i) {
    const int t = reverse ? T - 1 - i : i;
    h = ad::gru_cell(ad::cols(gx_all, static_cast<Eigen::Index>(t) * B, B), h, wh, bh);
    hs[t] = h;
  }
  return hs;
}

template <class S>
Var<S> sum_all(const std::vector<Var<S>>& xs) {
  Var<S> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = acc + xs[i];
  return acc;
}

}  // namespace detail

template <class S>
ParameterStore<S> init_tvae_params(const TvaeConfig& cfg, Rng& rng) {
  cfg.validate();
  const int D = cfg.state_dim, H = cfg.hidden, L = cfg.latent_dim;
  ParameterStore<S> p;
  detail::add_gru(p, "enc.fwd.", 2 * D, H, rng);
  detail::add_gru(p, "enc.bwd.", 2 * D, H, rng);
  add_affine(p, "enc.mu.", 2 * H, L, rng);
  add_affine(p, "enc.logvar.", 2 * H, L, rng);
  p.add("dec.Wxs", uniform_init<S>(3 * H, D, D + L, rng));
  p.add("dec.Wxz", uniform_init<S>(3 * H, L, D + L, rng));
  p.add("dec.bx", Matrix<S>::Zero(3 * H, 1));
  p.add("dec.Wh", uniform_init<S>(3 * H, H, H, rng));
  p.add("dec.bh", Matrix<S>::Zero(3 * H, 1));
  add_affine(p, "dec.out.", H, D, rng);
  return p;
}

template <class S>
struct EncoderOutput {
  Var<S> mu;
  Var<S> logvar;
};

/// Encodes a batch given as per-frame state matrices (state_dim x B each).
template <class S>
EncoderOutput<S> encode(Binding<S>& bind, const TvaeConfig& cfg, const std::vector<Matrix<S>>& states) {
  const int T = static_cast<int>(states.size());
  if (T != cfg.window_length) {
    throw ConfigError("window length " + std::to_string(T) + " does not match the model's " +
                      std::to_string(cfg.window_length));
  }
  const int D = cfg.state_dim;
  if (states.front().rows() != D) throw SchemaError("state dimension does not match the model");
  const int B = static_cast<int>(states.front().cols());
  const S k = static_cast<S>(cfg.delta_input_scale);
  Matrix<S> x(2 * D, static_cast<Eigen::Index>(T) * B);
  for (int t = 0; t < T; ++t) {
    auto block = x.middleCols(static_cast<Eigen::Index>(t) * B, B);
    block.topRows(D) = states[t];
    if (t == 0) {
      block.bottomRows(D).setZero();
    } else {
      block.bottomRows(D) = (states[t] - states[t - 1]) * k;
    }
  }
  Var<S> xv = bind.tape().constant(std::move(x));
  const int H = cfg.hidden;
  auto fwd = detail::run_gru(bind, "enc.fwd.", ad::affine(bind("enc.fwd.Wx"), xv, bind("enc.fwd.bx")), T, B, H, false);
  auto bwd = detail::run_gru(bind, "enc.bwd.", ad::affine(bind("enc.bwd.Wx"), xv, bind("enc.bwd.bx")), T, B, H, true);
  const S inv_t = S(1) / static_cast<S>(T);
  Var<S> pooled = ad::concat_rows<S>({detail::sum_all(fwd) * inv_t, detail::sum_all(bwd) * inv_t});
  const S c = static_cast<S>(cfg.logvar_clamp);
  return {apply_affine(bind, "enc.mu.", pooled), ad::clamp(apply_affine(bind, "enc.logvar.", pooled), -c, c)};
}

/// z = mu + exp(logvar / 2) * eps with eps ~ N(0, I); differentiable in mu and logvar.
template <class S>
Var<S> sample_latent(const EncoderOutput<S>& e, Rng& rng) {
  Matrix<S> eps(e.mu.rows(), e.mu.cols());
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index c = 0; c < eps.cols(); ++c) {
    for (Eigen::Index r = 0; r < eps.rows(); ++r) eps(r, c) = static_cast<S>(n(rng));
  }
  Var<S> ev = e.mu.tape()->constant(std::move(eps));
  return e.mu + ad::exp(e.logvar * S(0.5)) * ev;
}

/// Free-running generation: s_{t+1} = s_t + delta(s_t, z). Returns steps + 1 states, starting with s0.
template <class S>
std::vector<Var<S>> decode_rollout(Binding<S>& bind, const TvaeConfig& cfg, Var<S> z, Var<S> s0, int steps) {
  if (steps < 0) throw ConfigError("rollout steps must be non-negative");
  if (s0.rows() != cfg.state_dim || z.rows() != cfg.latent_dim || z.cols() != s0.cols()) {
    throw ConfigError("rollout inputs do not match the model");
  }
  std::vector<Var<S>> out{s0};
  if (steps == 0) return out;
  Var<S> gz = ad::affine(bind("dec.Wxz"), z, bind("dec.bx"));
  Var<S> wxs = bind("dec.Wxs"), wh = bind("dec.Wh"), bh = bind("dec.bh");
  Var<S> h = bind.tape().constant(Matrix<S>::Zero(cfg.hidden, s0.cols()));
  Var<S> s = s0;
  for (int t = 0; t < steps; ++t) {
    h = ad::gru_cell(ad::matmul(wxs, s) + gz, h, wh, bh);
    s = s + apply_affine(bind, "dec.out.", h);
    out.push_back(s);
  }
  return out;
}

template <class S>
struct TvaeTerms {
  Var<S> reconstruction;  ///< Gaussian NLL of teacher-forced deltas, summed over the batch
  Var<S> kl;              ///< summed over the batch
  Var<S> total;
};

/// Negative ELBO with teacher forcing over t = 0..T-2.
template <class S>
TvaeTerms<S> tvae_terms(Binding<S>& bind, const TvaeConfig& cfg, const std::vector<Matrix<S>>& states,
                        const EncoderOutput<S>& enc, Var<S> z) {
  const int T = static_cast<int>(states.size());
  const int D = cfg.state_dim;
  const int B = static_cast<int>(states.front().cols());
  const int steps = T - 1;
  Matrix<S> inputs(D, static_cast<Eigen::Index>(steps) * B);
  Matrix<S> targets(D, static_cast<Eigen::Index>(steps) * B);
  for (int t = 0; t < steps; ++t) {
    inputs.middleCols(static_cast<Eigen::Index>(t) * B, B) = states[t];
    targets.middleCols(static_cast<Eigen::Index>(t) * B, B) = states[t + 1] - states[t];
  }
  Tape<S>& tape = bind.tape();
  Var<S> gxs = ad::matmul(bind("dec.Wxs"), tape.constant(std::move(inputs)));
  Var<S> gz = ad::affine(bind("dec.Wxz"), z, bind("dec.bx"));
  Var<S> wh = bind("dec.Wh"), bh = bind("dec.bh");
  Var<S> h = tape.constant(Matrix<S>::Zero(cfg.hidden, B));
  std::vector<Var<S>> hs;
  hs.reserve(steps);
  for (int t = 0; t < steps; ++t) {
    h = ad::gru_cell(ad::cols(gxs, static_cast<Eigen::Index>(t) * B, B) + gz, h, wh, bh);
    hs.push_back(h);
  }
  Var<S> pred = apply_affine(bind, "dec.out.", ad::concat_cols(hs));
  Var<S> recon = ad::gaussian_nll(pred, targets, static_cast<S>(cfg.recon_sigma));
  Var<S> kl = ad::kl_unit_gaussian(enc.mu, enc.logvar);
  return {recon, kl, recon + kl};
}

struct Embedding {
  std::vector<double> z_mu;
  std::vector<double> z_logvar;
};

struct TvaeLossValue {
  double total = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

/// Owns the TVAE configuration and its single-precision parameters.
class TvaeModel {
 public:
  TvaeModel() = default;
  TvaeModel(const TvaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    params_ = init_tvae_params<float>(cfg_, rng);
  }
  TvaeModel(const TvaeConfig& cfg, ParameterStore<float> params) : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
  }

  const TvaeConfig& config() const { return cfg_; }
  const ParameterStore<float>& params() const { return params_; }
  ParameterStore<float>& params() { return params_; }

  /// z_mu for every window, latent_dim x N, computed in chunks without recording gradients.
  Matrix<double> encode_mean(std::span<const Window> windows, std::size_t chunk = 512) const {
    Matrix<double> out(cfg_.latent_dim, static_cast<Eigen::Index>(windows.size()));
    for (std::size_t start = 0; start < windows.size(); start += chunk) {
      const std::size_t n = std::min(chunk, windows.size() - start);
      Tape<float> tape;
      Binding<float> bind(tape, params_, false);
      const auto e = trj::encode(bind, cfg_, stack_windows<float>(windows.subspan(start, n)));
      out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) =
          e.mu.value().cast<double>();
    }
    return out;
  }

  Embedding encode(const Window& w) const {
    Tape<float> tape;
    Binding<float> bind(tape, params_, false);
    const auto e = trj::encode(bind, cfg_, stack_windows<float>(std::span<const Window>(&w, 1)));
    Embedding out;
    for (int i = 0; i < cfg_.latent_dim; ++i) {
      out.z_mu.push_back(e.mu.value()(i, 0));
      out.z_logvar.push_back(e.logvar.value()(i, 0));
    }
    return out;
  }

  Window decode_rollout(std::span<const double> z, const FrameState& s0, int steps) const {
    if (static_cast<int>(z.size()) != cfg_.latent_dim) throw ConfigError("latent has the wrong dimension");
    if (s0.layout().state_dim() != cfg_.state_dim) throw SchemaError("initial state does not match the model");
    Tape<float> tape;
    Binding<float> bind(tape, params_, false);
    Matrix<float> zm(cfg_.latent_dim, 1), sm(cfg_.state_dim, 1);
    for (int i = 0; i < cfg_.latent_dim; ++i) zm(i, 0) = static_cast<float>(z[i]);
    const auto s = s0.stacked();
    for (int i = 0; i < cfg_.state_dim; ++i) sm(i, 0) = static_cast<float>(s[i]);
    const auto states = trj::decode_rollout(bind, cfg_, tape.constant(zm), tape.constant(sm), steps);
    Window w;
    w.center_index = 0;
    w.frames.push_back(s0);
    for (std::size_t t = 1; t < states.size(); ++t) {
      const auto& v = states[t].value();
      w.frames.emplace_back(s0.layout(), std::vector<double>(v.data(), v.data() + v.size()));
    }
    return w;
  }

  TvaeLossValue tvae_loss(const Window& w, Rng& rng) const {
    Tape<float> tape;
    Binding<float> bind(tape, params_, false);
    const auto states = stack_windows<float>(std::span<const Window>(&w, 1));
    const auto e = trj::encode(bind, cfg_, states);
    const auto terms = tvae_terms(bind, cfg_, states, e, sample_latent(e, rng));
    return {terms.total.scalar(), terms.reconstruction.scalar(), terms.kl.scalar()};
  }

 private:
  TvaeConfig cfg_;
  ParameterStore<float> params_;
};

/// Draws z for a single embedding.
inline std::vector<double> sample_latent(const Embedding& e, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> z(e.z_mu.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = e.z_mu[i] + std::exp(0.5 * e.z_logvar[i]) * n(rng);
  return z;
}

}  // namespace trj
