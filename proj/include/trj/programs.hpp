// SPDX-License-Identifier: Apache-2.0
#pragma once

// Expert-programmed behavior attributes.
//
// Every program is a relative geometric quantity (distances, speeds, unsigned
// angles), so values are unchanged by rotating, reflecting or translating all
// keypoints together. Angles are unsigned magnitudes in [0, pi], computed as
// atan2(|u x v|, u . v).
//
// The geometry is written once against a "view" that yields keypoints as
// Vec2<T>. WindowView gives T = double for plain evaluation; StateView gives
// T = ad::Var<S> so the same code is differentiable on generated trajectories.
//
// Keypoint slots
//   mouse (7 per agent): nose, right ear, left ear, neck, right hip, left hip, tail base
//   fly (5 per agent):   body centroid, front end of the major axis, end of the minor
//                        axis, left wingtip, right wingtip
// Fly heading is centroid -> front; the major/minor axis lengths are twice the
// distances from the centroid to slots 1 and 2.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "trj/autodiff.hpp"
#include "trj/error.hpp"
#include "trj/trajectory.hpp"

namespace trj {

enum class Domain { mouse, fly };

inline const char* to_string(Domain d) { return d == Domain::mouse ? "mouse" : "fly"; }

namespace mouse_kp {
inline constexpr int nose = 0, right_ear = 1, left_ear = 2, neck = 3, right_hip = 4, left_hip = 5, tail = 6;
inline constexpr int count = 7;
}  // namespace mouse_kp

namespace fly_kp {
inline constexpr int centroid = 0, front = 1, side = 2, left_wing = 3, right_wing = 4;
inline constexpr int count = 5;
}  // namespace fly_kp

inline int keypoints_for(Domain d) { return d == Domain::mouse ? mouse_kp::count : fly_kp::count; }

enum class Attribute {
  facing_angle,
  speed,
  nose_nose_distance,
  nose_tail_distance,
  head_body_angle,
  nose_movement,
  centroid_distance,
  angular_speed,
  min_wing_angle,
  max_wing_angle,
  axis_ratio,
};

/// Frame-scoped programs read the center frame; window-scoped ones also read the frame before it.
enum class ProgramScope { frame, window };
enum class ProgramOutput { angle, length, speed, ratio };

struct AttributeProgram {
  std::string id;
  Domain domain = Domain::mouse;
  Attribute attribute = Attribute::speed;
  int agent = 0;
  ProgramScope scope = ProgramScope::frame;
  ProgramOutput output = ProgramOutput::length;
  bool operator==(const AttributeProgram&) const = default;
};

inline std::vector<AttributeProgram> mouse_programs() {
  using A = Attribute;
  using S = ProgramScope;
  using O = ProgramOutput;
  const auto m = Domain::mouse;
  return {
      {"facing_angle_m1", m, A::facing_angle, 0, S::frame, O::angle},
      {"facing_angle_m2", m, A::facing_angle, 1, S::frame, O::angle},
      {"speed_m1", m, A::speed, 0, S::window, O::speed},
      {"speed_m2", m, A::speed, 1, S::window, O::speed},
      {"nose_nose_distance", m, A::nose_nose_distance, 0, S::frame, O::length},
      {"nose_tail_distance", m, A::nose_tail_distance, 0, S::frame, O::length},
      {"head_body_angle_m1", m, A::head_body_angle, 0, S::frame, O::angle},
      {"head_body_angle_m2", m, A::head_body_angle, 1, S::frame, O::angle},
      {"nose_movement_m1", m, A::nose_movement, 0, S::window, O::speed},
      {"nose_movement_m2", m, A::nose_movement, 1, S::window, O::speed},
  };
}

inline std::vector<AttributeProgram> fly_programs() {
  using A = Attribute;
  using S = ProgramScope;
  using O = ProgramOutput;
  const auto f = Domain::fly;
  return {
      {"speed_f1", f, A::speed, 0, S::window, O::speed},
      {"speed_f2", f, A::speed, 1, S::window, O::speed},
      {"fly_distance", f, A::centroid_distance, 0, S::frame, O::length},
      {"angular_speed_f1", f, A::angular_speed, 0, S::window, O::speed},
      {"angular_speed_f2", f, A::angular_speed, 1, S::window, O::speed},
      {"facing_angle_f1", f, A::facing_angle, 0, S::frame, O::angle},
      {"facing_angle_f2", f, A::facing_angle, 1, S::frame, O::angle},
      {"min_wing_angle_f1", f, A::min_wing_angle, 0, S::frame, O::angle},
      {"max_wing_angle_f1", f, A::max_wing_angle, 0, S::frame, O::angle},
      {"min_wing_angle_f2", f, A::min_wing_angle, 1, S::frame, O::angle},
      {"max_wing_angle_f2", f, A::max_wing_angle, 1, S::frame, O::angle},
      {"axis_ratio_f1", f, A::axis_ratio, 0, S::frame, O::ratio},
      {"axis_ratio_f2", f, A::axis_ratio, 1, S::frame, O::ratio},
  };
}

inline AttributeProgram find_program(const std::string& id) {
  for (const auto& list : {mouse_programs(), fly_programs()}) {
    for (const auto& p : list) {
      if (p.id == id) return p;
    }
  }
  throw RegistryError("unknown attribute program '" + id + "'");
}

// ---------------------------------------------------------------------------
// Generic geometry

template <class T>
struct Vec2 {
  T x;
  T y;
};

template <class T> Vec2<T> operator+(const Vec2<T>& a, const Vec2<T>& b) { return {a.x + b.x, a.y + b.y}; }
template <class T> Vec2<T> operator-(const Vec2<T>& a, const Vec2<T>& b) { return {a.x - b.x, a.y - b.y}; }

namespace geometry {

// Var overloads come from trj::ad through argument-dependent lookup.
inline double minimum(double a, double b) { return std::min(a, b); }
inline double maximum(double a, double b) { return std::max(a, b); }

template <class T>
T cross(const Vec2<T>& a, const Vec2<T>& b) { return a.x * b.y - a.y * b.x; }

template <class T>
T dot(const Vec2<T>& a, const Vec2<T>& b) { return a.x * b.x + a.y * b.y; }

template <class T>
T norm(const Vec2<T>& a) {
  using std::sqrt;
  return sqrt(a.x * a.x + a.y * a.y);
}

template <class T>
Vec2<T> scaled(const Vec2<T>& a, double s) {
  if constexpr (std::is_arithmetic_v<T>) {
    return {a.x * s, a.y * s};
  } else {
    using S = typename std::remove_cvref_t<decltype(a.x.value())>::Scalar;
    return {a.x * static_cast<S>(s), a.y * static_cast<S>(s)};
  }
}

/// Unsigned angle in [0, pi] between u and v.
template <class View, class T>
T angle_between(const View& view, const Vec2<T>& u, const Vec2<T>& v) {
  using std::abs;
  using std::atan2;
  if constexpr (std::is_arithmetic_v<T>) {
    if (norm(u) < 1e-12 || norm(v) < 1e-12) {
      view.note_degenerate();
      return T(0);
    }
  }
  return atan2(abs(cross(u, v)), dot(u, v));
}

template <class View>
auto body_centroid(const View& v, int t, int agent) {
  if (v.domain() == Domain::fly) return v.point(t, agent, fly_kp::centroid);
  auto c = v.point(t, agent, 0);
  for (int k = 1; k < mouse_kp::count; ++k) c = c + v.point(t, agent, k);
  return scaled(c, 1.0 / mouse_kp::count);
}

template <class View>
auto heading(const View& v, int t, int agent) {
  if (v.domain() == Domain::fly) return v.point(t, agent, fly_kp::front) - v.point(t, agent, fly_kp::centroid);
  return v.point(t, agent, mouse_kp::nose) - v.point(t, agent, mouse_kp::neck);
}

}  // namespace geometry

/// Evaluates one program against any view. The view provides
///   point(t, agent, kp) -> Vec2<T>, center(), domain(), agents(), note_degenerate().
template <class View>
auto evaluate_attribute(const AttributeProgram& p, const View& v) {
  using namespace geometry;
  const int c = v.center();
  const int prev = std::max(c - 1, 0);
  const int a = p.agent;
  const int other = 1 - a;
  switch (p.attribute) {
    case Attribute::facing_angle:
      return angle_between(v, heading(v, c, a), body_centroid(v, c, other) - body_centroid(v, c, a));
    case Attribute::speed:
      return norm(body_centroid(v, c, a) - body_centroid(v, prev, a));
    case Attribute::nose_nose_distance:
      return norm(v.point(c, 0, mouse_kp::nose) - v.point(c, 1, mouse_kp::nose));
    case Attribute::nose_tail_distance:
      return norm(v.point(c, 0, mouse_kp::nose) - v.point(c, 1, mouse_kp::tail));
    case Attribute::head_body_angle: {
      const auto neck = v.point(c, a, mouse_kp::neck);
      return angle_between(v, v.point(c, a, mouse_kp::nose) - neck, v.point(c, a, mouse_kp::tail) - neck);
    }
    case Attribute::nose_movement: {
      const auto nose_step = v.point(c, a, mouse_kp::nose) - v.point(prev, a, mouse_kp::nose);
      const auto body_step = body_centroid(v, c, a) - body_centroid(v, prev, a);
      return norm(nose_step - body_step);
    }
    case Attribute::centroid_distance:
      return norm(body_centroid(v, c, 0) - body_centroid(v, c, 1));
    case Attribute::angular_speed:
      return angle_between(v, heading(v, prev, a), heading(v, c, a));
    case Attribute::min_wing_angle:
    case Attribute::max_wing_angle: {
      const auto centroid = v.point(c, a, fly_kp::centroid);
      const auto back = centroid - v.point(c, a, fly_kp::front);
      const auto left = angle_between(v, v.point(c, a, fly_kp::left_wing) - centroid, back);
      const auto right = angle_between(v, v.point(c, a, fly_kp::right_wing) - centroid, back);
      return p.attribute == Attribute::min_wing_angle ? minimum(left, right) : maximum(left, right);
    }
    case Attribute::axis_ratio: {
      const auto centroid = v.point(c, a, fly_kp::centroid);
      return norm(v.point(c, a, fly_kp::front) - centroid) / norm(v.point(c, a, fly_kp::side) - centroid);
    }
  }
  throw RegistryError("unhandled attribute in program '" + p.id + "'");
}

/// Plain evaluation over a materialized window.
class WindowView {
 public:
  WindowView(const Window& w, Domain d) : w_(&w), domain_(d) {}
  Vec2<double> point(int t, int agent, int kp) const {
    const Keypoint k = w_->frames[t].keypoint(agent, kp);
    return {k.x, k.y};
  }
  int center() const { return w_->center_index; }
  Domain domain() const { return domain_; }
  int agents() const { return w_->layout().agents; }
  void note_degenerate() const { degenerate_ = true; }
  bool degenerate() const { return degenerate_; }

 private:
  const Window* w_;
  Domain domain_;
  mutable bool degenerate_ = false;
};

/// Differentiable view over per-frame state batches (state_dim x B each).
/// Every program value comes out as a 1 x B row.
template <class S>
class StateView {
 public:
  StateView(const std::vector<ad::Var<S>>& states, PoseLayout layout, int center, Domain d)
      : states_(&states), layout_(layout), center_(center), domain_(d) {}
  Vec2<ad::Var<S>> point(int t, int agent, int kp) const {
    const int o = layout_.offset(agent, kp);
    return {ad::rows((*states_)[t], o, 1), ad::rows((*states_)[t], o + 1, 1)};
  }
  int center() const { return center_; }
  Domain domain() const { return domain_; }
  int agents() const { return layout_.agents; }
  void note_degenerate() const {}

 private:
  const std::vector<ad::Var<S>>* states_;
  PoseLayout layout_;
  int center_;
  Domain domain_;
};

inline void check_program_layout(const AttributeProgram& p, const PoseLayout& layout) {
  if (layout.keypoints != keypoints_for(p.domain)) {
    throw SchemaError("program '" + p.id + "' needs " + std::to_string(keypoints_for(p.domain)) +
                      " keypoints per agent, window has " + std::to_string(layout.keypoints));
  }
  if (layout.agents < 2) throw SchemaError("program '" + p.id + "' needs two agents");
}

struct ProgramValue {
  double value = 0.0;
  /// Set when an angle was requested between coincident keypoints; the value is then 0.
  bool degenerate = false;
};

inline ProgramValue evaluate_program(const AttributeProgram& p, const Window& w) {
  check_program_layout(p, w.layout());
  WindowView view(w, p.domain);
  const double v = evaluate_attribute(p, view);
  return {v, view.degenerate()};
}

// ---------------------------------------------------------------------------
// Discretization

/// Two ascending cut points splitting a program's range into three classes.
struct Discretizer {
  double low = 0.0;
  double high = 0.0;
  /// Share of the fit sample in each class.
  std::array<double, 3> class_fractions{};
};

/// v <= low -> 0, low < v <= high -> 1, v > high -> 2.
inline int discretize(double v, const Discretizer& d) {
  if (v <= d.low) return 0;
  if (v <= d.high) return 1;
  return 2;
}

/// Linear-interpolated percentile of sorted data, q in [0, 1].
inline double percentile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Thresholds at the 1/3 and 2/3 empirical percentiles.
inline Discretizer fit_discretizer(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  std::size_t n_distinct = sorted.empty() ? 0 : 1;
  for (std::size_t i = 1; i < sorted.size(); ++i) n_distinct += sorted[i] != sorted[i - 1];
  if (n_distinct < 3) {
    throw DegenerateDistributionError("need at least 3 distinct values to fit a discretizer, got " +
                                      std::to_string(n_distinct));
  }
  Discretizer d;
  d.low = percentile_sorted(sorted, 1.0 / 3.0);
  d.high = percentile_sorted(sorted, 2.0 / 3.0);
  if (!(d.low < d.high)) throw DegenerateDistributionError("discretizer thresholds coincide");
  for (double v : sorted) d.class_fractions[discretize(v, d)] += 1.0;
  for (auto& f : d.class_fractions) f /= static_cast<double>(sorted.size());
  return d;
}

/// Per-program affine standardization used by the regression-style losses.
struct AttributeScale {
  double mean = 0.0;
  double scale = 1.0;
};

/// Ordered programs with their fitted discretizers and scales.
class ProgramSet {
 public:
  ProgramSet() = default;

  explicit ProgramSet(std::vector<AttributeProgram> programs) : programs_(std::move(programs)) {
    if (programs_.empty()) throw ConfigError("a program set needs at least one program");
    for (std::size_t i = 0; i < programs_.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (programs_[i].id == programs_[j].id) throw ConfigError("duplicate program '" + programs_[i].id + "'");
      }
      if (programs_[i].domain != programs_.front().domain) throw ConfigError("program set mixes mouse and fly");
    }
    scales_.assign(programs_.size(), AttributeScale{});
  }

  /// Comma-separated ids; `all_mouse` and `all_fly` expand to the full domain lists.
  static ProgramSet parse(const std::string& spec) {
    std::vector<AttributeProgram> out;
    std::stringstream ss(spec);
    std::string id;
    while (std::getline(ss, id, ',')) {
      if (id.empty()) continue;
      if (id == "all_mouse") {
        for (auto& p : mouse_programs()) out.push_back(p);
      } else if (id == "all_fly") {
        for (auto& p : fly_programs()) out.push_back(p);
      } else {
        out.push_back(find_program(id));
      }
    }
    return ProgramSet(std::move(out));
  }

  int size() const { return static_cast<int>(programs_.size()); }
  Domain domain() const { return programs_.front().domain; }
  const std::vector<AttributeProgram>& programs() const { return programs_; }
  const AttributeProgram& operator[](int j) const { return programs_[j]; }

  bool fitted() const { return discretizers_.size() == programs_.size(); }
  const std::vector<Discretizer>& discretizers() const { return discretizers_; }
  const std::vector<AttributeScale>& scales() const { return scales_; }

  void set_discretizers(std::vector<Discretizer> d) {
    if (d.size() != programs_.size()) throw ConfigError("one discretizer per program required");
    discretizers_ = std::move(d);
  }
  void set_scales(std::vector<AttributeScale> s) {
    if (s.size() != programs_.size()) throw ConfigError("one scale per program required");
    scales_ = std::move(s);
  }

  std::string ids() const {
    std::string s;
    for (const auto& p : programs_) s += (s.empty() ? "" : ",") + p.id;
    return s;
  }

 private:
  std::vector<AttributeProgram> programs_;
  std::vector<Discretizer> discretizers_;
  std::vector<AttributeScale> scales_;
};

struct AttributeEvaluation {
  std::vector<double> values;
  /// Empty when the program set has no fitted discretizers.
  std::vector<int> classes;
  bool degenerate = false;
};

inline AttributeEvaluation evaluate_program_set(const ProgramSet& ps, const Window& w) {
  AttributeEvaluation out;
  out.values.reserve(ps.size());
  for (int j = 0; j < ps.size(); ++j) {
    const auto r = evaluate_program(ps[j], w);
    out.values.push_back(r.value);
    out.degenerate = out.degenerate || r.degenerate;
  }
  if (ps.fitted()) {
    for (int j = 0; j < ps.size(); ++j) out.classes.push_back(discretize(out.values[j], ps.discretizers()[j]));
  }
  return out;
}

/// Program values over every frame-centered window of a dataset (at most `max_windows`, evenly strided).
inline std::vector<std::vector<double>> sample_attribute_values(const ProgramSet& ps, const Dataset& d,
                                                                int window_length, std::size_t max_windows) {
  const auto refs = all_frames(d);
  const std::size_t stride = std::max<std::size_t>(1, (refs.size() + max_windows - 1) / std::max<std::size_t>(1, max_windows));
  std::vector<std::vector<double>> values(ps.size());
  for (std::size_t i = 0; i < refs.size(); i += stride) {
    const Window w = window_at(d.trajectories[refs[i].trajectory], refs[i].frame, window_length);
    for (int j = 0; j < ps.size(); ++j) values[j].push_back(evaluate_program(ps[j], w).value);
  }
  return values;
}

inline Discretizer fit_discretizer(const AttributeProgram& p, const Dataset& sample, int window_length = 21) {
  ProgramSet single({p});
  const auto values = sample_attribute_values(single, sample, window_length, sample.frame_count());
  if (values[0].size() < 100) {
    throw ConfigError("fitting a discretizer needs at least 100 windows, got " + std::to_string(values[0].size()));
  }
  return fit_discretizer(values[0]);
}

/// Fits discretizers and standardization scales for every program on `sample`.
inline void fit_program_set(ProgramSet& ps, const Dataset& sample, int window_length = 21,
                            std::size_t max_windows = 50000) {
  const auto values = sample_attribute_values(ps, sample, window_length, max_windows);
  if (values.front().size() < 100) {
    throw ConfigError("fitting a program set needs at least 100 windows, got " + std::to_string(values.front().size()));
  }
  std::vector<Discretizer> disc;
  std::vector<AttributeScale> scales;
  for (int j = 0; j < ps.size(); ++j) {
    try {
      disc.push_back(fit_discretizer(values[j]));
    } catch (const DegenerateDistributionError& e) {
      throw DegenerateDistributionError("program '" + ps[j].id + "': " + e.what());
    }
    double mean = 0.0;
    for (double v : values[j]) mean += v;
    mean /= static_cast<double>(values[j].size());
    double var = 0.0;
    for (double v : values[j]) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values[j].size());
    scales.push_back({mean, var > 0.0 ? std::sqrt(var) : 1.0});
  }
  ps.set_discretizers(std::move(disc));
  ps.set_scales(std::move(scales));
}

// ---------------------------------------------------------------------------
// Fly pose encoding

struct FlyPose {
  Keypoint centroid;
  double orientation = 0.0;  ///< radians, direction of the head
  double major_axis = 1.0;   ///< full length
  double minor_axis = 0.5;   ///< full width
  Keypoint left_wing;
  Keypoint right_wing;
};

/// Packs a fly's ellipse and wingtips into the five keypoint slots.
inline std::vector<Keypoint> encode_fly_pose(const FlyPose& f) {
  const double c = std::cos(f.orientation), s = std::sin(f.orientation);
  return {
      f.centroid,
      {f.centroid.x + 0.5 * f.major_axis * c, f.centroid.y + 0.5 * f.major_axis * s},
      {f.centroid.x - 0.5 * f.minor_axis * s, f.centroid.y + 0.5 * f.minor_axis * c},
      f.left_wing,
      f.right_wing,
  };
}

}  // namespace trj
