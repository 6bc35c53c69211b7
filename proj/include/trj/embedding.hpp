// SPDX-License-Identifier: Apache-2.0
#pragma once

// Trainable embedding model (TVAE plus task heads) and its training loop.
//
// Checkpoints store TVAE parameters under "tvae/", head parameters under
// "heads/", and the configuration, program ids, discretizer thresholds and
// program scales as metadata.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "trj/approximator.hpp"
#include "trj/augmentation.hpp"
#include "trj/parameters.hpp"
#include "trj/pose_io.hpp"
#include "trj/programs.hpp"
#include "trj/task_losses.hpp"
#include "trj/tvae.hpp"

namespace trj {

struct EmbeddingModel {
  TvaeModel tvae;
  ParameterStore<float> heads;
  HeadsConfig heads_config;
  ProgramSet programs;

  static EmbeddingModel create(const TvaeConfig& tcfg, const ProgramSet& ps, std::uint64_t seed, int head_hidden = 32,
                               int projection = 32) {
    EmbeddingModel m;
    m.tvae = TvaeModel(tcfg, derive_seed(seed, {seed_tag("tvae")}));
    m.programs = ps;
    m.heads_config = {tcfg.latent_dim, head_hidden, ps.size(), projection};
    Rng rng(derive_seed(seed, {seed_tag("heads")}));
    m.heads = init_task_heads<float>(m.heads_config, rng);
    return m;
  }

  Checkpoint to_checkpoint() const {
    using detail::format_double;
    Checkpoint ck;
    const auto& c = tvae.config();
    ck.meta["tvae.state_dim"] = std::to_string(c.state_dim);
    ck.meta["tvae.latent_dim"] = std::to_string(c.latent_dim);
    ck.meta["tvae.hidden"] = std::to_string(c.hidden);
    ck.meta["tvae.window_length"] = std::to_string(c.window_length);
    ck.meta["tvae.delta_input_scale"] = format_double(c.delta_input_scale);
    ck.meta["tvae.recon_sigma"] = format_double(c.recon_sigma);
    ck.meta["tvae.logvar_clamp"] = format_double(c.logvar_clamp);
    ck.meta["heads.hidden"] = std::to_string(heads_config.hidden);
    ck.meta["heads.projection"] = std::to_string(heads_config.projection);
    ck.meta["programs"] = programs.ids();
    for (int j = 0; j < programs.size(); ++j) {
      const std::string k = "program." + std::to_string(j) + ".";
      ck.meta[k + "mean"] = format_double(programs.scales()[j].mean);
      ck.meta[k + "scale"] = format_double(programs.scales()[j].scale);
      if (programs.fitted()) {
        ck.meta[k + "low"] = format_double(programs.discretizers()[j].low);
        ck.meta[k + "high"] = format_double(programs.discretizers()[j].high);
      }
    }
    ck.add_store("tvae/", tvae.params());
    ck.add_store("heads/", heads);
    return ck;
  }

  static EmbeddingModel from_checkpoint(const Checkpoint& ck) {
    auto num = [&](const std::string& key) {
      const auto v = detail::parse_number<double>(ck.require(key));
      if (!v) throw ParseError("checkpoint metadata '" + key + "' is not a number");
      return *v;
    };
    TvaeConfig c;
    c.state_dim = static_cast<int>(num("tvae.state_dim"));
    c.latent_dim = static_cast<int>(num("tvae.latent_dim"));
    c.hidden = static_cast<int>(num("tvae.hidden"));
    c.window_length = static_cast<int>(num("tvae.window_length"));
    c.delta_input_scale = num("tvae.delta_input_scale");
    c.recon_sigma = num("tvae.recon_sigma");
    c.logvar_clamp = num("tvae.logvar_clamp");
    EmbeddingModel m;
    m.tvae = TvaeModel(c, ck.store<float>("tvae/"));
    m.programs = ProgramSet::parse(ck.require("programs"));
    std::vector<AttributeScale> scales;
    std::vector<Discretizer> disc;
    for (int j = 0; j < m.programs.size(); ++j) {
      const std::string k = "program." + std::to_string(j) + ".";
      scales.push_back({num(k + "mean"), num(k + "scale")});
      if (ck.meta.count(k + "low")) {
        Discretizer d;
        d.low = num(k + "low");
        d.high = num(k + "high");
        disc.push_back(d);
      }
    }
    m.programs.set_scales(scales);
    if (!disc.empty()) m.programs.set_discretizers(disc);
    m.heads_config = {c.latent_dim, static_cast<int>(num("heads.hidden")), m.programs.size(),
                      static_cast<int>(num("heads.projection"))};
    m.heads = ck.store<float>("heads/");
    return m;
  }

  void save(const std::filesystem::path& path) const { save_checkpoint(path, to_checkpoint()); }
  static EmbeddingModel load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }
};

struct TrainConfig {
  int steps = 2000;
  int batch = 128;
  double lr = 2e-4;
  std::uint64_t seed = 0;
  /// Called after every optimizer step.
  std::function<void(int, const LossBreakdown&)> on_step;
};

struct TrainingHistory {
  std::vector<LossBreakdown> steps;
  double seconds = 0.0;
};

/// Windows centered on uniformly drawn frames of `d`.
inline std::vector<Window> sample_windows(const Dataset& d, const std::vector<FrameRef>& refs, int count,
                                          int window_length, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, refs.size() - 1);
  std::vector<Window> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const FrameRef r = refs[pick(rng)];
    out.push_back(window_at(d.trajectories[r.trajectory], r.frame, window_length));
  }
  return out;
}

/// Adam on the combined objective; TVAE and head parameters share one schedule.
inline TrainingHistory train_embedding(EmbeddingModel& m, const Dataset& train, const LossConfig& loss,
                                       const TrainConfig& cfg,
                                       const std::vector<ProgramApproximator>* approximators = nullptr) {
  loss.validate();
  train.validate();
  if ((loss.contrastive) && !m.programs.fitted()) throw ConfigError("contrastive loss needs fitted discretizers");
  const auto start = std::chrono::steady_clock::now();
  const auto refs = all_frames(train);
  const TvaeConfig& tcfg = m.tvae.config();
  const Domain domain = m.programs.domain();
  Rng rng(derive_seed(cfg.seed, {seed_tag("train-embedding")}));
  const AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  TrainingHistory history;
  history.steps.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    const auto windows = sample_windows(train, refs, cfg.batch, tcfg.window_length, rng);
    std::vector<Window> augmented;
    if (loss.augment) {
      augmented.reserve(windows.size());
      for (const auto& w : windows) augmented.push_back(apply_augmentation(sample_augmentation(rng, domain, loss.augmentation), w));
    }
    const auto batch = make_loss_batch<float>(m.programs, windows, augmented);
    Tape<float> tape;
    Binding<float> tb(tape, m.tvae.params(), true);
    Binding<float> hb(tape, m.heads, true);
    const auto result = total_loss(tb, hb, tcfg, m.programs, loss, batch, rng, approximators);
    tape.backward(result.total);
    adam_step(m.tvae.params(), tb.gradients(), adam);
    adam_step(m.heads, hb.gradients(), adam);
    history.steps.push_back(result.parts);
    if (cfg.on_step) cfg.on_step(step, result.parts);
  }
  history.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return history;
}

/// Trailing moving average; entry i averages values [i - window + 1, i].
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window) {
  std::vector<double> out;
  if (window == 0 || v.size() < window) return out;
  double acc = std::accumulate(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(window), 0.0);
  out.push_back(acc / static_cast<double>(window));
  for (std::size_t i = window; i < v.size(); ++i) {
    acc += v[i] - v[i - window];
    out.push_back(acc / static_cast<double>(window));
  }
  return out;
}

}  // namespace trj
