// SPDX-License-Identifier: Apache-2.0
#pragma once

// Window and dataset builders shared by the test binaries.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "trj/trj.hpp"

namespace trj::testing {

inline constexpr PoseLayout kMouseLayout{2, 7};

/// Seven mouse keypoints with the given centroid and nose-neck heading.
inline std::vector<Keypoint> mouse_body(double cx, double cy, double heading, double size = 0.02) {
  // Offsets along (forward, left); the forward offsets are re-centered below.
  static const double fwd[7] = {3.0, 2.0, 2.0, 1.5, -1.0, -1.0, -2.5};
  static const double lat[7] = {0.0, -0.6, 0.6, 0.0, -0.8, 0.8, 0.0};
  double mean = 0.0;
  for (double f : fwd) mean += f / 7.0;
  const double c = std::cos(heading), s = std::sin(heading);
  std::vector<Keypoint> out;
  for (int k = 0; k < 7; ++k) {
    const double u = (fwd[k] - mean) * size, v = lat[k] * size;
    out.push_back({cx + u * c - v * s, cy + u * s + v * c});
  }
  return out;
}

inline FrameState two_mice(double x1, double y1, double h1, double x2, double y2, double h2, double size = 0.02) {
  return FrameState::from_agents({mouse_body(x1, y1, h1, size), mouse_body(x2, y2, h2, size)});
}

inline Window window_of(std::vector<FrameState> frames) {
  Window w;
  w.center_index = static_cast<int>(frames.size()) / 2;
  w.frames = std::move(frames);
  return w;
}

/// Two mice drifting about the image centre with per-keypoint jitter, normalized units.
inline Window random_window(Rng& rng, int length = 21) {
  std::uniform_real_distribution<double> pos(0.3, 0.7), ang(-std::numbers::pi, std::numbers::pi);
  std::normal_distribution<double> step(0.0, 0.004), turn(0.0, 0.15), jitter(0.0, 0.002);
  double x[2] = {pos(rng), pos(rng)}, y[2] = {pos(rng), pos(rng)}, h[2] = {ang(rng), ang(rng)};
  std::vector<FrameState> frames;
  for (int t = 0; t < length; ++t) {
    std::vector<std::vector<Keypoint>> agents;
    for (int a = 0; a < 2; ++a) {
      x[a] += step(rng);
      y[a] += step(rng);
      h[a] += turn(rng);
      auto body = mouse_body(x[a], y[a], h[a]);
      for (auto& k : body) {
        k.x += jitter(rng);
        k.y += jitter(rng);
      }
      agents.push_back(body);
    }
    frames.push_back(FrameState::from_agents(agents));
  }
  return window_of(std::move(frames));
}

/// Small normalized synthetic dataset.
inline Dataset small_synthetic(int sequences = 4, int frames = 300, std::uint64_t seed = 7) {
  SyntheticSpec spec;
  spec.sequences = sequences;
  spec.frames = frames;
  spec.seed = seed;
  return normalize_dataset(generate_synthetic_dataset(spec));
}

inline bool same_dataset(const Dataset& a, const Dataset& b) {
  if (a.trajectories.size() != b.trajectories.size()) return false;
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    const auto& s = a.trajectories[i];
    const auto& t = b.trajectories[i];
    if (s.source_id != t.source_id || s.labels != t.labels || s.frames.size() != t.frames.size() ||
        s.normalized != t.normalized) {
      return false;
    }
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
      const auto u = s.frames[f].stacked(), v = t.frames[f].stacked();
      if (!std::equal(u.begin(), u.end(), v.begin(), v.end())) return false;
    }
  }
  return true;
}

}  // namespace trj::testing
