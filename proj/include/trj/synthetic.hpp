// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic two-mouse interaction data with frame labels.
//
// Each mouse has a body center, velocity, heading and head bend. Velocity
// follows a damped second-order pull toward a behavior-specific target
// velocity; heading turns toward the direction of motion; keypoints are placed
// rigidly around the body axis and jittered by Gaussian pixel noise. Labels
// describe mouse 1's behavior toward mouse 2:
//   0 idle      both mice wander slowly
//   1 approach  mouse 1 walks toward mouse 2, which stays slow
//   2 chase     mouse 2 runs, mouse 1 follows close behind its tail
//   3 circle    mouse 1 orbits mouse 2 at a fixed radius

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "trj/error.hpp"
#include "trj/programs.hpp"
#include "trj/rng.hpp"
#include "trj/trajectory.hpp"

namespace trj {

enum class Behavior { idle = 0, approach = 1, chase = 2, circle = 3 };
inline constexpr int kBehaviorCount = 4;

inline const char* to_string(Behavior b) {
  switch (b) {
    case Behavior::idle: return "idle";
    case Behavior::approach: return "approach";
    case Behavior::chase: return "chase";
    case Behavior::circle: return "circle";
  }
  return "?";
}

struct SyntheticSpec {
  int sequences = 20;
  int frames = 1000;
  int agents = 2;
  int keypoints = 7;
  double width = 1024.0;
  double height = 570.0;
  double frame_rate = 30.0;
  int min_segment = 40;
  int max_segment = 160;
  double body_length = 80.0;   ///< pixels, tail base to nose
  double keypoint_noise = 1.0; ///< pixels
  double idle_speed = 0.6;
  double approach_speed = 3.0;
  double chase_speed = 6.5;
  double circle_speed = 3.5;
  double circle_radius = 100.0;
  double label_noise = 0.0;    ///< probability of replacing a frame label by a uniform draw
  std::uint64_t seed = 7;

  void validate() const {
    if (agents != 2 || keypoints != mouse_kp::count) throw ConfigError("the generator produces 2 mice with 7 keypoints");
    if (sequences < 1 || frames < 1) throw ConfigError("need at least one sequence and one frame");
    if (min_segment < 1 || max_segment < min_segment) throw ConfigError("bad segment length range");
    if (!(width > 0 && height > 0)) throw ConfigError("image dimensions must be positive");
    if (label_noise < 0.0 || label_noise > 1.0) throw ConfigError("label noise must lie in [0, 1]");
  }
};

namespace detail {

struct MouseState {
  double x = 0, y = 0;
  double vx = 0, vy = 0;
  double heading = 0;
  double bend = 0;
  double wander = 0;  ///< preferred wander direction
};

inline double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

class Simulator {
 public:
  Simulator(const SyntheticSpec& spec, Rng& rng) : s_(spec), rng_(rng) {
    std::uniform_real_distribution<double> ux(0.2 * s_.width, 0.8 * s_.width), uy(0.2 * s_.height, 0.8 * s_.height);
    std::uniform_real_distribution<double> ua(-std::numbers::pi, std::numbers::pi);
    for (auto& m : mice_) {
      m.x = ux(rng_);
      m.y = uy(rng_);
      m.heading = ua(rng_);
      m.wander = ua(rng_);
    }
    orbit_ = ua(rng_);
  }

  void step(Behavior b) {
    MouseState& m1 = mice_[0];
    MouseState& m2 = mice_[1];
    wander_update(m1);
    wander_update(m2);
    double t1x, t1y, t2x, t2y;
    wander_velocity(m2, s_.idle_speed, t2x, t2y);
    switch (b) {
      case Behavior::idle:
        wander_velocity(m1, s_.idle_speed, t1x, t1y);
        break;
      case Behavior::approach: {
        const double dx = m2.x - m1.x, dy = m2.y - m1.y, d = std::hypot(dx, dy);
        const double speed = d > 0.9 * s_.body_length ? s_.approach_speed : 0.5 * s_.idle_speed;
        t1x = speed * dx / std::max(d, 1e-9);
        t1y = speed * dy / std::max(d, 1e-9);
        break;
      }
      case Behavior::chase: {
        wander_velocity(m2, s_.chase_speed, t2x, t2y);
        const double tail_x = m2.x - 0.6 * s_.body_length * std::cos(m2.heading);
        const double tail_y = m2.y - 0.6 * s_.body_length * std::sin(m2.heading);
        const double dx = tail_x - m1.x, dy = tail_y - m1.y, d = std::hypot(dx, dy);
        const double speed = std::min(1.3 * s_.chase_speed, 0.25 * d + 0.8 * s_.chase_speed);
        t1x = speed * dx / std::max(d, 1e-9);
        t1y = speed * dy / std::max(d, 1e-9);
        break;
      }
      case Behavior::circle: {
        orbit_ += s_.circle_speed / s_.circle_radius;
        const double gx = m2.x + s_.circle_radius * std::cos(orbit_);
        const double gy = m2.y + s_.circle_radius * std::sin(orbit_);
        double dx = gx - m1.x, dy = gy - m1.y;
        const double d = std::hypot(dx, dy);
        const double speed = std::min(1.5 * s_.circle_speed, 0.2 * d + s_.circle_speed);
        t1x = speed * dx / std::max(d, 1e-9);
        t1y = speed * dy / std::max(d, 1e-9);
        break;
      }
    }
    if (b != Behavior::circle) {
      orbit_ = std::atan2(m1.y - m2.y, m1.x - m2.x);
    }
    advance(m1, t1x, t1y);
    advance(m2, t2x, t2y);
  }

  FrameState frame() {
    std::vector<std::vector<Keypoint>> agents;
    for (const auto& m : mice_) agents.push_back(keypoints(m));
    return FrameState::from_agents(agents);
  }

 private:
  void wander_update(MouseState& m) {
    std::normal_distribution<double> n(0.0, 0.08);
    m.wander = wrap_angle(m.wander + n(rng_));
    // Steer the wander direction away from nearby walls.
    const double margin = 1.5 * s_.body_length;
    const double cx = s_.width / 2 - m.x, cy = s_.height / 2 - m.y;
    if (m.x < margin || m.x > s_.width - margin || m.y < margin || m.y > s_.height - margin) {
      const double inward = std::atan2(cy, cx);
      m.wander = wrap_angle(m.wander + 0.2 * wrap_angle(inward - m.wander));
    }
  }

  void wander_velocity(const MouseState& m, double speed, double& vx, double& vy) const {
    vx = speed * std::cos(m.wander);
    vy = speed * std::sin(m.wander);
  }

  void advance(MouseState& m, double tx, double ty) {
    std::normal_distribution<double> n(0.0, 0.15);
    m.vx += 0.2 * (tx - m.vx) + n(rng_);
    m.vy += 0.2 * (ty - m.vy) + n(rng_);
    m.x += m.vx;
    m.y += m.vy;
    const double pad = 0.3 * s_.body_length;
    if (m.x < pad || m.x > s_.width - pad) {
      m.x = std::clamp(m.x, pad, s_.width - pad);
      m.vx = -0.5 * m.vx;
    }
    if (m.y < pad || m.y > s_.height - pad) {
      m.y = std::clamp(m.y, pad, s_.height - pad);
      m.vy = -0.5 * m.vy;
    }
    const double speed = std::hypot(m.vx, m.vy);
    const double turn = speed > 0.5 ? 0.25 * wrap_angle(std::atan2(m.vy, m.vx) - m.heading) : 0.0;
    m.heading = wrap_angle(m.heading + turn);
    std::normal_distribution<double> nb(0.0, 0.04);
    m.bend = std::clamp(0.85 * m.bend + 1.2 * turn + nb(rng_), -0.8, 0.8);
  }

  std::vector<Keypoint> keypoints(const MouseState& m) {
    const double L = s_.body_length;
    const double ux = std::cos(m.heading), uy = std::sin(m.heading);
    const double hx = std::cos(m.heading + m.bend), hy = std::sin(m.heading + m.bend);
    const Keypoint neck{m.x + 0.2 * L * ux, m.y + 0.2 * L * uy};
    std::vector<Keypoint> k(mouse_kp::count);
    k[mouse_kp::neck] = neck;
    k[mouse_kp::nose] = {neck.x + 0.3 * L * hx, neck.y + 0.3 * L * hy};
    k[mouse_kp::right_ear] = {neck.x + 0.08 * L * hx + 0.08 * L * hy, neck.y + 0.08 * L * hy - 0.08 * L * hx};
    k[mouse_kp::left_ear] = {neck.x + 0.08 * L * hx - 0.08 * L * hy, neck.y + 0.08 * L * hy + 0.08 * L * hx};
    k[mouse_kp::right_hip] = {m.x - 0.2 * L * ux + 0.12 * L * uy, m.y - 0.2 * L * uy - 0.12 * L * ux};
    k[mouse_kp::left_hip] = {m.x - 0.2 * L * ux - 0.12 * L * uy, m.y - 0.2 * L * uy + 0.12 * L * ux};
    k[mouse_kp::tail] = {m.x - 0.5 * L * ux, m.y - 0.5 * L * uy};
    std::normal_distribution<double> n(0.0, s_.keypoint_noise);
    for (auto& p : k) {
      p.x = std::clamp(p.x + n(rng_), 0.0, s_.width);
      p.y = std::clamp(p.y + n(rng_), 0.0, s_.height);
    }
    return k;
  }

  const SyntheticSpec& s_;
  Rng& rng_;
  MouseState mice_[2];
  double orbit_ = 0.0;
};

}  // namespace detail

/// Raw pixel coordinates with labels; deterministic under spec.seed.
inline Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  spec.validate();
  Dataset d;
  d.image = {spec.width, spec.height};
  for (int s = 0; s < spec.sequences; ++s) {
    Rng rng(derive_seed(spec.seed, {seed_tag("synthetic"), static_cast<std::uint64_t>(s)}));
    detail::Simulator sim(spec, rng);
    Trajectory t;
    t.source_id = "synth" + std::to_string(s);
    t.frame_rate = spec.frame_rate;
    std::uniform_int_distribution<int> pick_behavior(0, kBehaviorCount - 1);
    std::uniform_int_distribution<int> pick_length(spec.min_segment, spec.max_segment);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // Burn in so initial velocities settle.
    for (int i = 0; i < 30; ++i) sim.step(Behavior::idle);
    int remaining = 0;
    auto behavior = Behavior::idle;
    for (int f = 0; f < spec.frames; ++f) {
      if (remaining == 0) {
        behavior = static_cast<Behavior>(pick_behavior(rng));
        remaining = pick_length(rng);
      }
      --remaining;
      sim.step(behavior);
      t.frames.push_back(sim.frame());
      int label = static_cast<int>(behavior);
      if (spec.label_noise > 0.0 && unit(rng) < spec.label_noise) label = pick_behavior(rng);
      t.labels.push_back(label);
    }
    d.trajectories.push_back(std::move(t));
  }
  return d;
}

}  // namespace trj
