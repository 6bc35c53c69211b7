// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "trj/error.hpp"

namespace trj {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Keypoint&) const = default;
};

/// Agent and keypoint counts shared by every frame of a dataset.
struct PoseLayout {
  int agents = 0;
  int keypoints = 0;

  int state_dim() const { return 2 * agents * keypoints; }
  /// Offset of the x coordinate of (agent, keypoint) in the stacked state.
  int offset(int agent, int keypoint) const { return 2 * (agent * keypoints + keypoint); }
  bool operator==(const PoseLayout&) const = default;
};

/// One frame: every agent's keypoints stacked as (agent, keypoint, x-then-y).
class FrameState {
 public:
  FrameState() = default;

  explicit FrameState(PoseLayout layout) : layout_(layout), coords_(layout.state_dim(), 0.0) {
    check_layout(layout);
  }

  FrameState(PoseLayout layout, std::vector<double> stacked) : layout_(layout), coords_(std::move(stacked)) {
    check_layout(layout);
    if (static_cast<int>(coords_.size()) != layout.state_dim()) {
      throw SchemaError("frame has " + std::to_string(coords_.size()) + " coordinates, layout expects " +
                        std::to_string(layout.state_dim()));
    }
    for (double v : coords_) {
      if (!std::isfinite(v)) throw SchemaError("frame contains a non-finite coordinate");
    }
  }

  static FrameState from_agents(const std::vector<std::vector<Keypoint>>& agents) {
    if (agents.empty()) throw SchemaError("frame needs at least one agent");
    PoseLayout layout{static_cast<int>(agents.size()), static_cast<int>(agents.front().size())};
    std::vector<double> stacked;
    stacked.reserve(layout.state_dim());
    for (const auto& agent : agents) {
      if (static_cast<int>(agent.size()) != layout.keypoints) {
        throw SchemaError("agents disagree on keypoint count");
      }
      for (const auto& kp : agent) {
        stacked.push_back(kp.x);
        stacked.push_back(kp.y);
      }
    }
    return FrameState(layout, std::move(stacked));
  }

  const PoseLayout& layout() const { return layout_; }
  int agents() const { return layout_.agents; }
  int keypoints() const { return layout_.keypoints; }

  Keypoint keypoint(int agent, int kp) const {
    const int o = layout_.offset(agent, kp);
    return {coords_[o], coords_[o + 1]};
  }
  void set_keypoint(int agent, int kp, Keypoint value) {
    const int o = layout_.offset(agent, kp);
    coords_[o] = value.x;
    coords_[o + 1] = value.y;
  }

  std::span<const double> stacked() const { return coords_; }
  std::span<double> stacked_mut() { return coords_; }

  bool operator==(const FrameState&) const = default;

 private:
  static void check_layout(PoseLayout layout) {
    if (layout.agents < 1 || layout.keypoints < 1) throw SchemaError("layout needs >= 1 agent and keypoint");
  }

  PoseLayout layout_{};
  std::vector<double> coords_;
};

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline constexpr int kUnlabeled = -1;

struct Trajectory {
  std::string source_id;
  double frame_rate = 30.0;
  std::vector<FrameState> frames;
  /// Empty when the recording carries no annotation; otherwise one entry per frame.
  std::vector<int> labels;
  bool normalized = false;

  int size() const { return static_cast<int>(frames.size()); }
  bool has_labels() const { return !labels.empty(); }

  void validate() const {
    if (frames.empty()) throw SchemaError("trajectory '" + source_id + "' has no frames");
    if (has_labels() && labels.size() != frames.size()) {
      throw SchemaError("trajectory '" + source_id + "' has " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(frames.size()) + " frames");
    }
    const PoseLayout& layout = frames.front().layout();
    for (const auto& f : frames) {
      if (f.layout() != layout) throw SchemaError("trajectory '" + source_id + "' mixes pose layouts");
    }
  }

  bool operator==(const Trajectory&) const = default;
};

/// Fixed-length slice of a trajectory that represents its center frame.
struct Window {
  std::vector<FrameState> frames;
  int center_index = 0;

  int length() const { return static_cast<int>(frames.size()); }
  const FrameState& center() const { return frames[center_index]; }
  const PoseLayout& layout() const { return frames.front().layout(); }
  bool operator==(const Window&) const = default;
};

struct ImageDims {
  double width = 1.0;
  double height = 1.0;
  bool operator==(const ImageDims&) const = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  Split split = Split::train;
  ImageDims image;

  PoseLayout layout() const {
    return trajectories.empty() ? PoseLayout{} : trajectories.front().frames.front().layout();
  }

  std::size_t frame_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.frames.size();
    return n;
  }

  bool labeled() const {
    return !trajectories.empty() &&
           std::all_of(trajectories.begin(), trajectories.end(), [](const Trajectory& t) { return t.has_labels(); });
  }

  void validate() const {
    if (trajectories.empty()) throw SchemaError("dataset has no trajectories");
    const PoseLayout l = layout();
    for (const auto& t : trajectories) {
      t.validate();
      if (t.frames.front().layout() != l) throw SchemaError("dataset mixes pose layouts");
    }
  }

  bool operator==(const Dataset&) const = default;
};

inline constexpr double kNormalizedMin = -0.5;
inline constexpr double kNormalizedMax = 1.5;

/// Divides x by the image width and y by the image height.
inline Trajectory normalize_trajectory(const Trajectory& t, ImageDims dims) {
  if (!(dims.width > 0.0) || !(dims.height > 0.0)) throw ConfigError("image dimensions must be positive");
  if (t.normalized) throw ConfigError("trajectory '" + t.source_id + "' is already normalized");
  Trajectory out = t;
  for (auto& f : out.frames) {
    auto c = f.stacked_mut();
    for (std::size_t i = 0; i < c.size(); i += 2) {
      c[i] /= dims.width;
      c[i + 1] /= dims.height;
      if (c[i] < kNormalizedMin || c[i] > kNormalizedMax || c[i + 1] < kNormalizedMin || c[i + 1] > kNormalizedMax) {
        throw SchemaError("trajectory '" + t.source_id + "' has a keypoint far outside the image after normalization");
      }
    }
  }
  out.normalized = true;
  return out;
}

inline Trajectory denormalize_trajectory(const Trajectory& t, ImageDims dims) {
  if (!t.normalized) throw ConfigError("trajectory '" + t.source_id + "' is not normalized");
  Trajectory out = t;
  for (auto& f : out.frames) {
    auto c = f.stacked_mut();
    for (std::size_t i = 0; i < c.size(); i += 2) {
      c[i] *= dims.width;
      c[i + 1] *= dims.height;
    }
  }
  out.normalized = false;
  return out;
}

inline Dataset normalize_dataset(const Dataset& d) {
  Dataset out = d;
  for (auto& t : out.trajectories) t = normalize_trajectory(t, d.image);
  return out;
}

inline void check_window_length(int length) {
  if (length < 1 || length % 2 == 0) {
    throw ConfigError("window length must be odd and positive, got " + std::to_string(length));
  }
}

/// Window of `length` frames centered on `frame`; out-of-range indices repeat the boundary frame.
inline Window window_at(const Trajectory& t, int frame, int length) {
  check_window_length(length);
  const int half = length / 2;
  const int last = t.size() - 1;
  Window w;
  w.center_index = half;
  w.frames.reserve(length);
  for (int i = frame - half; i <= frame + half; ++i) w.frames.push_back(t.frames[std::clamp(i, 0, last)]);
  return w;
}

/// One window per frame, so the output count always equals the trajectory length.
inline std::vector<Window> extract_windows(const Trajectory& t, int length = 21) {
  check_window_length(length);
  if (t.frames.empty()) throw SchemaError("cannot extract windows from an empty trajectory");
  std::vector<Window> out;
  out.reserve(t.frames.size());
  for (int f = 0; f < t.size(); ++f) out.push_back(window_at(t, f, length));
  return out;
}

/// Addresses one frame of one trajectory inside a dataset.
struct FrameRef {
  int trajectory = 0;
  int frame = 0;
  bool operator==(const FrameRef&) const = default;
};

inline std::vector<FrameRef> all_frames(const Dataset& d) {
  std::vector<FrameRef> refs;
  refs.reserve(d.frame_count());
  for (int t = 0; t < static_cast<int>(d.trajectories.size()); ++t) {
    for (int f = 0; f < d.trajectories[t].size(); ++f) refs.push_back({t, f});
  }
  return refs;
}

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Assigns whole trajectories to splits in order, so no source_id appears in two splits.
inline DatasetSplits split_by_source(const Dataset& d, double train_fraction, double val_fraction) {
  const int n = static_cast<int>(d.trajectories.size());
  if (n < 3) throw ConfigError("need at least 3 trajectories to form train/val/test splits");
  int n_train = std::max(1, static_cast<int>(std::lround(train_fraction * n)));
  int n_val = std::max(1, static_cast<int>(std::lround(val_fraction * n)));
  if (n_train + n_val >= n) n_train = n - n_val - 1;
  DatasetSplits s;
  for (Dataset* part : {&s.train, &s.val, &s.test}) part->image = d.image;
  s.train.split = Split::train;
  s.val.split = Split::val;
  s.test.split = Split::test;
  for (int i = 0; i < n; ++i) {
    Dataset& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    dst.trajectories.push_back(d.trajectories[i]);
  }
  return s;
}

}  // namespace trj
