// SPDX-License-Identifier: Apache-2.0
#pragma once

// Attribute-preserving window augmentations and a preservation checker.
//
// Rotation and reflection act about the window's global centroid (mean of all
// keypoints over all frames and agents). Reflection mirrors across the line
// through that centroid at angle `axis`. Keypoint noise draws from a stream
// seeded by Augmentation::seed, so applying the same augmentation twice gives
// the same window.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "trj/autodiff.hpp"
#include "trj/error.hpp"
#include "trj/programs.hpp"
#include "trj/rng.hpp"
#include "trj/trajectory.hpp"

namespace trj {

enum class AugmentationKind { rotation, reflection, translation, keypoint_noise };

inline const char* to_string(AugmentationKind k) {
  switch (k) {
    case AugmentationKind::rotation: return "rotation";
    case AugmentationKind::reflection: return "reflection";
    case AugmentationKind::translation: return "translation";
    case AugmentationKind::keypoint_noise: return "keypoint_noise";
  }
  return "?";
}

inline AugmentationKind parse_augmentation_kind(const std::string& s) {
  for (auto k : {AugmentationKind::rotation, AugmentationKind::reflection, AugmentationKind::translation,
                 AugmentationKind::keypoint_noise}) {
    if (s == to_string(k)) return k;
  }
  if (s == "noise") return AugmentationKind::keypoint_noise;
  throw ConfigError("unknown augmentation kind '" + s + "'");
}

inline constexpr double kMaxNoiseSigma = 0.005;

struct Augmentation {
  AugmentationKind kind = AugmentationKind::rotation;
  double angle = 0.0;  ///< rotation, radians in [0, 2pi)
  double axis = 0.0;   ///< reflection line direction, radians
  double dx = 0.0;     ///< translation
  double dy = 0.0;
  double max_offset = 0.0;  ///< translation resampling range per axis
  double sigma = 0.0;  ///< keypoint noise standard deviation
  /// Drives noise draws and translation resampling.
  std::uint64_t seed = 0;
};

struct AugmentationPolicy {
  std::vector<AugmentationKind> kinds{AugmentationKind::rotation, AugmentationKind::reflection,
                                      AugmentationKind::translation, AugmentationKind::keypoint_noise};
  double noise_sigma = 0.002;
  /// Translation offsets are uniform in [-max_translation, max_translation] per axis.
  double max_translation = 0.1;

  void validate() const {
    if (kinds.empty()) throw ConfigError("augmentation policy enables no kinds");
    if (!(noise_sigma >= 0.0) || noise_sigma > kMaxNoiseSigma) {
      throw ConfigError("noise sigma must lie in [0, 0.005], got " + std::to_string(noise_sigma));
    }
    if (!(max_translation >= 0.0)) throw ConfigError("max translation must be non-negative");
  }

  /// Comma-separated kind names.
  static std::vector<AugmentationKind> parse_kinds(const std::string& list) {
    std::vector<AugmentationKind> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(parse_augmentation_kind(item));
    }
    return out;
  }
};

/// Uniform over the enabled kinds; keypoint noise is never drawn for flies.
inline Augmentation sample_augmentation(Rng& rng, Domain domain, const AugmentationPolicy& policy = {}) {
  policy.validate();
  std::vector<AugmentationKind> kinds;
  for (auto k : policy.kinds) {
    if (k == AugmentationKind::keypoint_noise && domain == Domain::fly) continue;
    kinds.push_back(k);
  }
  if (kinds.empty()) throw ConfigError("no augmentation kind is available for the " + std::string(to_string(domain)) + " domain");
  Augmentation a;
  a.kind = kinds[std::uniform_int_distribution<std::size_t>(0, kinds.size() - 1)(rng)];
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  switch (a.kind) {
    case AugmentationKind::rotation:
      a.angle = 2.0 * std::numbers::pi * unit(rng);
      break;
    case AugmentationKind::reflection:
      a.axis = std::numbers::pi * unit(rng);
      break;
    case AugmentationKind::translation:
      a.dx = policy.max_translation * (2.0 * unit(rng) - 1.0);
      a.dy = policy.max_translation * (2.0 * unit(rng) - 1.0);
      a.max_offset = policy.max_translation;
      break;
    case AugmentationKind::keypoint_noise:
      a.sigma = policy.noise_sigma;
      break;
  }
  a.seed = rng();
  return a;
}

inline Keypoint window_centroid(const Window& w) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (const auto& f : w.frames) {
    const auto c = f.stacked();
    for (std::size_t i = 0; i < c.size(); i += 2) {
      sx += c[i];
      sy += c[i + 1];
      ++n;
    }
  }
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

namespace detail {

/// Applies p' = c + M (p - c) to every keypoint.
inline Window linear_about_centroid(const Window& w, double m00, double m01, double m10, double m11) {
  const Keypoint c = window_centroid(w);
  Window out = w;
  for (auto& f : out.frames) {
    auto s = f.stacked_mut();
    for (std::size_t i = 0; i < s.size(); i += 2) {
      const double x = s[i] - c.x, y = s[i + 1] - c.y;
      s[i] = c.x + m00 * x + m01 * y;
      s[i + 1] = c.y + m10 * x + m11 * y;
    }
  }
  return out;
}

inline bool translation_in_bounds(const Window& w, double dx, double dy) {
  for (const auto& f : w.frames) {
    const auto s = f.stacked();
    for (std::size_t i = 0; i < s.size(); i += 2) {
      const double x = s[i] + dx, y = s[i + 1] + dy;
      if (x < kNormalizedMin || x > kNormalizedMax || y < kNormalizedMin || y > kNormalizedMax) return false;
    }
  }
  return true;
}

}  // namespace detail

inline Window apply_augmentation(const Augmentation& a, const Window& w) {
  switch (a.kind) {
    case AugmentationKind::rotation: {
      const double c = std::cos(a.angle), s = std::sin(a.angle);
      return detail::linear_about_centroid(w, c, -s, s, c);
    }
    case AugmentationKind::reflection: {
      const double c = std::cos(2.0 * a.axis), s = std::sin(2.0 * a.axis);
      return detail::linear_about_centroid(w, c, s, s, -c);
    }
    case AugmentationKind::translation: {
      double dx = a.dx, dy = a.dy;
      if (!detail::translation_in_bounds(w, dx, dy)) {
        Rng rng(a.seed);
        const double range = std::max(a.max_offset, std::max(std::abs(a.dx), std::abs(a.dy)));
        std::uniform_real_distribution<double> off(-range, range);
        bool ok = false;
        for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
          dx = off(rng);
          dy = off(rng);
          ok = detail::translation_in_bounds(w, dx, dy);
        }
        if (!ok) throw AugmentationError("translation keeps leaving [-0.5, 1.5] after 10 resamples");
      }
      Window out = w;
      for (auto& f : out.frames) {
        auto s = f.stacked_mut();
        for (std::size_t i = 0; i < s.size(); i += 2) {
          s[i] += dx;
          s[i + 1] += dy;
        }
      }
      return out;
    }
    case AugmentationKind::keypoint_noise: {
      if (a.sigma < 0.0 || a.sigma > kMaxNoiseSigma) throw ConfigError("noise sigma must lie in [0, 0.005]");
      Window out = w;
      if (a.sigma == 0.0) return out;
      Rng rng(a.seed);
      std::normal_distribution<double> noise(0.0, a.sigma);
      for (auto& f : out.frames) {
        for (double& v : f.stacked_mut()) v += noise(rng);
      }
      return out;
    }
  }
  throw ConfigError("unhandled augmentation kind");
}

/// Euclidean norm of the gradient of a program with respect to every window coordinate.
inline double program_gradient_norm(const AttributeProgram& p, const Window& w) {
  check_program_layout(p, w.layout());
  ad::Tape<double> tape;
  std::vector<ad::Var<double>> states;
  states.reserve(w.frames.size());
  for (const auto& f : w.frames) {
    const auto s = f.stacked();
    states.push_back(tape.variable(Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()))));
  }
  StateView<double> view(states, w.layout(), w.center_index, p.domain);
  const auto value = evaluate_attribute(p, view);
  tape.backward(value);
  double sq = 0.0;
  for (const auto& s : states) {
    if (tape.has_grad(s.id())) sq += s.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

struct ProgramDeviation {
  std::string id;
  double deviation = 0.0;
  double bound = 0.0;
  bool passed = true;
};

struct PreservationReport {
  std::vector<ProgramDeviation> programs;
  bool passed = true;

  double max_deviation() const {
    double m = 0.0;
    for (const auto& p : programs) m = std::max(m, p.deviation);
    return m;
  }
};

inline constexpr double kGeometricTolerance = 1e-9;

/// Geometric kinds must leave every program within 1e-9. Noise is accepted
/// within 5 sigma of its linearized spread: 5 * sigma * |grad lambda|, where the
/// gradient norm is the larger of its values at the clean and the noisy window
/// (the larger endpoint covers kinks such as |v| at v = 0).
inline PreservationReport check_attribute_preserving(const ProgramSet& ps, const Window& w, const Augmentation& a) {
  const Window aug = apply_augmentation(a, w);
  PreservationReport report;
  for (const auto& p : ps.programs()) {
    ProgramDeviation d;
    d.id = p.id;
    d.deviation = std::abs(evaluate_program(p, w).value - evaluate_program(p, aug).value);
    if (a.kind == AugmentationKind::keypoint_noise) {
      const double g = std::max(program_gradient_norm(p, w), program_gradient_norm(p, aug));
      d.bound = 5.0 * a.sigma * g;
    } else {
      d.bound = kGeometricTolerance;
    }
    d.passed = d.deviation <= d.bound;
    report.passed = report.passed && d.passed;
    report.programs.push_back(d);
  }
  return report;
}

}  // namespace trj
