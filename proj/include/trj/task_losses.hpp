// SPDX-License-Identifier: Apache-2.0
#pragma once

// Program-supervised decoder tasks and the weighted training objective.
//
// Task heads (own parameter store):
//   f.h.{W,b}, f.o.{W,b}  z_mu -> hidden (ReLU) -> one prediction per program
//   g.h.{W,b}, g.o.{W,b}  z_mu -> hidden (ReLU) -> projection
//
// Consistency and decoding compare attributes in units of each program's
// fitted scale (ProgramSet::scales); with default scales this is the raw value.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "trj/approximator.hpp"
#include "trj/augmentation.hpp"
#include "trj/autodiff.hpp"
#include "trj/error.hpp"
#include "trj/parameters.hpp"
#include "trj/programs.hpp"
#include "trj/tvae.hpp"

namespace trj {

struct HeadsConfig {
  int latent_dim = 32;
  int hidden = 32;
  int programs = 1;
  int projection = 32;
};

template <class S>
ParameterStore<S> init_task_heads(const HeadsConfig& cfg, Rng& rng) {
  ParameterStore<S> p;
  add_affine(p, "f.h.", cfg.latent_dim, cfg.hidden, rng);
  add_affine(p, "f.o.", cfg.hidden, cfg.programs, rng);
  add_affine(p, "g.h.", cfg.latent_dim, cfg.hidden, rng);
  add_affine(p, "g.o.", cfg.hidden, cfg.projection, rng);
  return p;
}

/// f(z_mu): programs x B.
template <class S>
Var<S> decode_head(Binding<S>& bind, Var<S> z_mu) {
  return apply_affine(bind, "f.o.", ad::relu(apply_affine(bind, "f.h.", z_mu)));
}

/// g(z_mu): projection x B, not yet normalized.
template <class S>
Var<S> contrastive_head(Binding<S>& bind, Var<S> z_mu) {
  return apply_affine(bind, "g.o.", ad::relu(apply_affine(bind, "g.h.", z_mu)));
}

/// Row j divided by the scale of program j.
template <class S>
Matrix<S> scale_rows(const ProgramSet& ps, Matrix<S> m) {
  for (int j = 0; j < ps.size(); ++j) m.row(j) /= static_cast<S>(ps.scales()[j].scale);
  return m;
}

/// Mean squared error between f(z_mu) and the attribute vectors, averaged over programs and batch.
template <class S>
Var<S> decoding_loss(const ProgramSet& ps, Var<S> predictions, const Matrix<S>& attributes) {
  if (predictions.rows() != ps.size() || attributes.rows() != ps.size()) {
    throw ConfigError("decoding head predicts " + std::to_string(predictions.rows()) + " attributes for " +
                      std::to_string(ps.size()) + " programs");
  }
  Matrix<S> target = attributes;
  for (int j = 0; j < ps.size(); ++j) target.row(j).array() -= static_cast<S>(ps.scales()[j].mean);
  target = scale_rows(ps, std::move(target));
  return ad::mean(ad::square(predictions - predictions.tape()->constant(std::move(target))));
}

/// Program values on per-frame state batches, programs x B.
template <class S>
Var<S> rollout_attributes(const ProgramSet& ps, const std::vector<Var<S>>& states, PoseLayout layout, int center) {
  for (const auto& p : ps.programs()) check_program_layout(p, layout);
  StateView<S> view(states, layout, center, ps.domain());
  std::vector<Var<S>> rows;
  rows.reserve(ps.size());
  for (const auto& p : ps.programs()) rows.push_back(evaluate_attribute(p, view));
  return ad::concat_rows(rows);
}

/// Mean over programs and batch of ((generated - target) / scale)^2.
template <class S>
Var<S> consistency_from_attributes(const ProgramSet& ps, Var<S> generated, const Matrix<S>& target) {
  if (generated.rows() != ps.size() || target.rows() != ps.size()) throw ConfigError("attribute count mismatch");
  Matrix<S> inv(ps.size(), generated.cols());
  for (int j = 0; j < ps.size(); ++j) inv.row(j).setConstant(static_cast<S>(1.0 / ps.scales()[j].scale));
  Tape<S>& t = *generated.tape();
  return ad::mean(ad::square((generated - t.constant(target)) * t.constant(std::move(inv))));
}

enum class ConsistencyMode { direct, approximator };

/// Rolls out from s0 under z and compares program values against the input window's.
/// Direct mode differentiates the programs; approximator mode reads them through
/// the trained approximators (one per program, in program-set order).
template <class S>
Var<S> consistency_loss(Binding<S>& tvae, const TvaeConfig& cfg, const ProgramSet& ps, PoseLayout layout, Var<S> z,
                        Var<S> s0, const Matrix<S>& target, int center, ConsistencyMode mode,
                        const std::vector<ProgramApproximator>* approximators = nullptr) {
  if (mode == ConsistencyMode::direct) {
    // Programs read only the center frame and the one before it.
    const auto states = decode_rollout(tvae, cfg, z, s0, center);
    return consistency_from_attributes(ps, rollout_attributes(ps, states, layout, center), target);
  }
  if (!approximators || static_cast<int>(approximators->size()) != ps.size()) {
    throw ConfigError("approximator consistency needs one trained approximator per program");
  }
  const auto states = decode_rollout(tvae, cfg, z, s0, cfg.window_length - 1);
  std::vector<Var<S>> rows;
  for (int j = 0; j < ps.size(); ++j) {
    if ((*approximators)[j].program().id != ps[j].id) throw ConfigError("approximators are not in program order");
    rows.push_back((*approximators)[j].forward(tvae.tape(), states));
  }
  return consistency_from_attributes(ps, ad::concat_rows(rows), target);
}

/// Supervised contrastive loss over the columns of `projections`.
///
/// classes[j][i] is the class of element i under program j. For every anchor i
/// and program j with N_pos(i,j) > 0 positives k != i, adds
///   -1/N_pos * sum_k log( exp(s_ik) / sum_{l != i} exp(s_il) ),  s = g_i . g_k / t
/// with g L2-normalized. Returns the sum over anchors and programs.
///
/// Computed as sum_i c_i lse_i - sum_ik W_ik s_ik, where c_i counts the programs
/// giving anchor i a positive and W_ik = sum_j [k positive for (i,j)] / N_pos(i,j).
template <class S>
Var<S> contrastive_loss(Var<S> projections, const std::vector<std::vector<int>>& classes, S temperature) {
  const Eigen::Index n = projections.cols();
  if (n < 2) throw ConfigError("contrastive loss needs a batch of at least 2");
  if (!(temperature > S(0))) throw ConfigError("temperature must be positive");
  Matrix<S> w = Matrix<S>::Zero(n, n);
  Matrix<S> c = Matrix<S>::Zero(n, 1);
  for (const auto& cls : classes) {
    if (static_cast<Eigen::Index>(cls.size()) != n) throw ConfigError("class list length does not match the batch");
    for (Eigen::Index i = 0; i < n; ++i) {
      int npos = 0;
      for (Eigen::Index k = 0; k < n; ++k) npos += (k != i && cls[k] == cls[i]);
      if (npos == 0) continue;
      c(i, 0) += S(1);
      const S inv = S(1) / static_cast<S>(npos);
      for (Eigen::Index k = 0; k < n; ++k) {
        if (k != i && cls[k] == cls[i]) w(i, k) += inv;
      }
    }
  }
  Tape<S>& t = *projections.tape();
  Var<S> g = ad::l2_normalize_cols(projections);
  Var<S> sim = ad::matmul_tn(g, g) * (S(1) / temperature);
  const Matrix<S> off_diagonal = Matrix<S>::Ones(n, n) - Matrix<S>::Identity(n, n);
  Var<S> lse = ad::masked_logsumexp_rows(sim, off_diagonal);
  return ad::sum(lse * t.constant(std::move(c))) - ad::sum(sim * t.constant(std::move(w)));
}

// ---------------------------------------------------------------------------
// Weighted objective

struct LossConfig {
  bool tvae = true;
  bool consistency = false;
  bool decoding = false;
  bool contrastive = false;
  /// Augmented twin as the only positive.
  bool unsup_contrastive = false;
  double tvae_weight = 1.0;
  double consistency_weight = 1.0;
  double decoding_weight = 1.0;
  double contrastive_weight = 10.0;
  double unsup_contrastive_weight = 10.0;
  double temperature = 0.07;
  bool augment = false;
  AugmentationPolicy augmentation;
  ConsistencyMode consistency_mode = ConsistencyMode::direct;

  bool any_program_task() const { return consistency || decoding || contrastive; }

  void validate() const {
    if (!(tvae || consistency || decoding || contrastive || unsup_contrastive)) {
      throw ConfigError("no loss term is enabled");
    }
    for (double w : {tvae_weight, consistency_weight, decoding_weight, contrastive_weight, unsup_contrastive_weight}) {
      if (!(w >= 0.0)) throw ConfigError("loss weights must be non-negative");
    }
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
    if (unsup_contrastive && !augment) throw ConfigError("unsupervised contrastive loss needs augmentation on");
    if (augment) augmentation.validate();
  }

  /// Row label in the ablation grid, e.g. "TVAE+Contrast+Consist".
  std::string label() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
      if (on) s += (s.empty() ? "" : "+") + std::string(name);
    };
    add(tvae, "TVAE");
    add(unsup_contrastive, "Unsup. Contrast");
    add(contrastive, "Contrast");
    add(decoding, "Decode");
    add(consistency, "Consist");
    return s;
  }

  /// `losses` is a comma list of tvae, consistency, decoding, contrastive, unsup_contrastive.
  /// `weights`, when non-empty, gives one weight per listed loss in the same order.
  static LossConfig parse(const std::string& losses, const std::string& weights = "") {
    LossConfig cfg;
    cfg.tvae = false;
    std::vector<std::string> names;
    std::stringstream ss(losses);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) names.push_back(item);
    }
    std::vector<double> ws;
    std::stringstream ws_in(weights);
    while (std::getline(ws_in, item, ',')) {
      if (item.empty()) continue;
      try {
        ws.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("bad loss weight '" + item + "'");
      }
    }
    if (!ws.empty() && ws.size() != names.size()) throw ConfigError("need one weight per listed loss");
    for (std::size_t i = 0; i < names.size(); ++i) {
      const std::string& n = names[i];
      double* weight = nullptr;
      if (n == "tvae") {
        cfg.tvae = true;
        weight = &cfg.tvae_weight;
      } else if (n == "consistency" || n == "consist") {
        cfg.consistency = true;
        weight = &cfg.consistency_weight;
      } else if (n == "decoding" || n == "decode") {
        cfg.decoding = true;
        weight = &cfg.decoding_weight;
      } else if (n == "contrastive" || n == "contrast") {
        cfg.contrastive = true;
        weight = &cfg.contrastive_weight;
      } else if (n == "unsup_contrastive" || n == "unsup") {
        cfg.unsup_contrastive = true;
        weight = &cfg.unsup_contrastive_weight;
      } else {
        throw ConfigError("unknown loss '" + n + "'");
      }
      if (!ws.empty()) *weight = ws[i];
    }
    return cfg;
  }
};

/// Network inputs for one objective evaluation. Columns [0, B) are the original
/// windows; with augmentation, columns [B, 2B) are their augmented copies.
template <class S>
struct LossBatch {
  std::vector<Matrix<S>> states;  ///< window_length entries, state_dim x N
  Matrix<S> attributes;           ///< programs x N, raw values
  std::vector<std::vector<int>> classes;  ///< programs lists of N classes (empty without fitted discretizers)
  int original = 0;               ///< B
  PoseLayout layout;
};

/// Builds a batch from windows; `augmented`, when non-empty, must match `windows` one to one.
template <class S>
LossBatch<S> make_loss_batch(const ProgramSet& ps, const std::vector<Window>& windows,
                             const std::vector<Window>& augmented = {}) {
  if (!augmented.empty() && augmented.size() != windows.size()) throw ConfigError("augmented batch size mismatch");
  std::vector<Window> all = windows;
  all.insert(all.end(), augmented.begin(), augmented.end());
  LossBatch<S> b;
  b.states = stack_windows<S>(all);
  b.original = static_cast<int>(windows.size());
  b.layout = all.front().layout();
  const auto n = static_cast<Eigen::Index>(all.size());
  b.attributes.resize(ps.size(), n);
  if (ps.fitted()) b.classes.assign(ps.size(), std::vector<int>(all.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ev = evaluate_program_set(ps, all[i]);
    for (int j = 0; j < ps.size(); ++j) {
      b.attributes(j, i) = static_cast<S>(ev.values[j]);
      if (ps.fitted()) b.classes[j][i] = ev.classes[j];
    }
  }
  return b;
}

struct LossBreakdown {
  double total = 0.0;
  double tvae = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
  double consistency = 0.0;
  double decoding = 0.0;
  double contrastive = 0.0;
  double unsup_contrastive = 0.0;
  /// Decoder-loss evaluations: each enabled term counts once per batch copy.
  int decoder_terms = 0;
};

template <class S>
struct TotalLoss {
  Var<S> total;
  LossBreakdown parts;
};

/// Weighted sum of the enabled terms, every term summed over all batch copies
/// and divided by the original batch size B. Contrastive terms use all N columns
/// as one batch; the unsupervised variant makes column i and i + B the only pair.
template <class S>
TotalLoss<S> total_loss(Binding<S>& tvae_bind, Binding<S>& heads_bind, const TvaeConfig& tcfg, const ProgramSet& ps,
                        const LossConfig& cfg, const LossBatch<S>& batch, Rng& rng,
                        const std::vector<ProgramApproximator>* approximators = nullptr) {
  cfg.validate();
  const int N = static_cast<int>(batch.states.front().cols());
  const int B = batch.original;
  const int copies = N / B;
  if (cfg.augment != (copies == 2) || N % B != 0) throw ConfigError("batch copies do not match the augmentation setting");
  Tape<S>& tape = tvae_bind.tape();
  const auto enc = encode(tvae_bind, tcfg, batch.states);
  const S inv_b = S(1) / static_cast<S>(B);
  const S copies_s = static_cast<S>(copies);

  TotalLoss<S> out;
  std::vector<Var<S>> terms;
  auto add_term = [&](Var<S> v, double weight, double& slot) {
    slot = static_cast<double>(v.scalar());
    terms.push_back(v * static_cast<S>(weight));
    out.parts.decoder_terms += copies;
  };

  if (cfg.tvae) {
    const auto t = tvae_terms(tvae_bind, tcfg, batch.states, enc, sample_latent(enc, rng));
    add_term(t.total * inv_b, cfg.tvae_weight, out.parts.tvae);
    out.parts.reconstruction = static_cast<double>(t.reconstruction.scalar() * inv_b);
    out.parts.kl = static_cast<double>(t.kl.scalar() * inv_b);
  }
  if (cfg.consistency) {
    const int center = tcfg.window_length / 2;
    Var<S> s0 = tape.constant(batch.states.front());
    Var<S> c = consistency_loss(tvae_bind, tcfg, ps, batch.layout, enc.mu, s0, batch.attributes, center,
                                cfg.consistency_mode, approximators);
    add_term(c * copies_s, cfg.consistency_weight, out.parts.consistency);
  }
  if (cfg.decoding) {
    Var<S> d = decoding_loss(ps, decode_head(heads_bind, enc.mu), batch.attributes);
    add_term(d * copies_s, cfg.decoding_weight, out.parts.decoding);
  }
  if (cfg.contrastive || cfg.unsup_contrastive) {
    Var<S> g = contrastive_head(heads_bind, enc.mu);
    const S temp = static_cast<S>(cfg.temperature);
    if (cfg.contrastive) {
      if (batch.classes.empty()) throw ConfigError("contrastive loss needs fitted discretizers");
      add_term(contrastive_loss(g, batch.classes, temp) * inv_b, cfg.contrastive_weight, out.parts.contrastive);
    }
    if (cfg.unsup_contrastive) {
      std::vector<int> twin(N);
      for (int i = 0; i < N; ++i) twin[i] = i % B;
      add_term(contrastive_loss(g, {twin}, temp) * inv_b, cfg.unsup_contrastive_weight, out.parts.unsup_contrastive);
    }
  }
  Var<S> total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = total + terms[i];
  out.total = total;
  out.parts.total = static_cast<double>(total.scalar());
  return out;
}

}  // namespace trj
