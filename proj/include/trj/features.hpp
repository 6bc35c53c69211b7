// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-frame feature tables for the downstream classifier.
//
// A row holds the selected base features of one frame followed, when an
// embedding model is given, by z_mu of the window centered on that frame.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trj/error.hpp"
#include "trj/pose_io.hpp"
#include "trj/programs.hpp"
#include "trj/trajectory.hpp"
#include "trj/tvae.hpp"

namespace trj {

enum class BaseFeatures { none, keypoints, handcrafted, both };

inline const char* to_string(BaseFeatures b) {
  switch (b) {
    case BaseFeatures::none: return "none";
    case BaseFeatures::keypoints: return "keypoints";
    case BaseFeatures::handcrafted: return "handcrafted";
    case BaseFeatures::both: return "both";
  }
  return "?";
}

inline BaseFeatures parse_base_features(const std::string& s) {
  if (s == "none") return BaseFeatures::none;
  if (s == "keypoints") return BaseFeatures::keypoints;
  if (s == "handcrafted") return BaseFeatures::handcrafted;
  if (s == "both") return BaseFeatures::both;
  throw ConfigError("unknown feature set '" + s + "' (expected keypoints, handcrafted, both or none)");
}

struct FeatureTable {
  Eigen::MatrixXd values;  ///< one row per frame
  std::vector<int> labels;
  std::vector<FrameRef> frames;
  std::vector<std::string> names;

  Eigen::Index dim() const { return values.cols(); }
  Eigen::Index rows() const { return values.rows(); }

  /// Rows addressed by `index`, in that order.
  FeatureTable select(const std::vector<Eigen::Index>& index) const {
    FeatureTable out;
    out.names = names;
    out.values.resize(static_cast<Eigen::Index>(index.size()), values.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
      out.values.row(static_cast<Eigen::Index>(i)) = values.row(index[i]);
      out.labels.push_back(labels[index[i]]);
      out.frames.push_back(frames[index[i]]);
    }
    return out;
  }
};

/// Domain implied by the keypoint count of a layout.
inline Domain domain_for_layout(PoseLayout layout) {
  if (layout.keypoints == mouse_kp::count) return Domain::mouse;
  if (layout.keypoints == fly_kp::count) return Domain::fly;
  throw SchemaError("no built-in program domain has " + std::to_string(layout.keypoints) + " keypoints per agent");
}

/// Handcrafted features are every built-in program of the layout's domain.
inline ProgramSet handcrafted_programs(PoseLayout layout) {
  return ProgramSet(domain_for_layout(layout) == Domain::mouse ? mouse_programs() : fly_programs());
}

/// `model` may be null for base features only. The dataset must be normalized.
inline FeatureTable extract_features(const TvaeModel* model, const Dataset& d, BaseFeatures base,
                                     int window_length = 21) {
  d.validate();
  check_window_length(window_length);
  for (const auto& t : d.trajectories) {
    if (!t.normalized) throw ConfigError("features must be extracted from normalized trajectories");
  }
  const PoseLayout layout = d.layout();
  const bool use_kp = base == BaseFeatures::keypoints || base == BaseFeatures::both;
  const bool use_hc = base == BaseFeatures::handcrafted || base == BaseFeatures::both;
  if (!use_kp && !use_hc && !model) throw ConfigError("empty feature set: no base features and no embedding");
  if (model) {
    if (model->config().state_dim != layout.state_dim()) {
      throw SchemaError("embedding expects state dimension " + std::to_string(model->config().state_dim) +
                        ", dataset has " + std::to_string(layout.state_dim()));
    }
    if (model->config().window_length != window_length) {
      throw SchemaError("embedding was trained on windows of " + std::to_string(model->config().window_length) +
                        " frames");
    }
  }
  std::optional<ProgramSet> hc;
  if (use_hc) hc = handcrafted_programs(layout);

  FeatureTable table;
  if (use_kp) {
    for (int a = 0; a < layout.agents; ++a) {
      for (int k = 0; k < layout.keypoints; ++k) {
        const std::string base = "agent" + std::to_string(a) + "_kp" + std::to_string(k);
        table.names.push_back(base + "_x");
        table.names.push_back(base + "_y");
      }
    }
  }
  if (hc) {
    for (const auto& p : hc->programs()) table.names.push_back(p.id);
  }
  const int latent = model ? model->config().latent_dim : 0;
  for (int j = 0; j < latent; ++j) table.names.push_back("z" + std::to_string(j));

  table.frames = all_frames(d);
  const auto n = static_cast<Eigen::Index>(table.frames.size());
  table.values.resize(n, static_cast<Eigen::Index>(table.names.size()));
  table.labels.reserve(table.frames.size());

  constexpr std::size_t chunk = 2048;
  for (std::size_t start = 0; start < table.frames.size(); start += chunk) {
    const std::size_t count = std::min(chunk, table.frames.size() - start);
    std::vector<Window> windows;
    if (hc || model) windows.reserve(count);
    for (std::size_t i = start; i < start + count; ++i) {
      const FrameRef r = table.frames[i];
      const Trajectory& t = d.trajectories[r.trajectory];
      table.labels.push_back(t.has_labels() ? t.labels[r.frame] : kUnlabeled);
      if (hc || model) windows.push_back(window_at(t, r.frame, window_length));
    }
    Matrix<double> z;
    if (model) z = model->encode_mean(windows);
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = static_cast<Eigen::Index>(start + i);
      Eigen::Index col = 0;
      if (use_kp) {
        const FrameRef r = table.frames[start + i];
        for (double v : d.trajectories[r.trajectory].frames[r.frame].stacked()) table.values(row, col++) = v;
      }
      if (hc) {
        for (double v : evaluate_program_set(*hc, windows[i]).values) table.values(row, col++) = v;
      }
      for (int j = 0; j < latent; ++j) table.values(row, col++) = z(j, static_cast<Eigen::Index>(i));
    }
  }
  return table;
}

/// CSV with columns trajectory,frame,label,<names...>; an optional leading `#` line is kept verbatim.
inline void write_feature_table(std::ostream& out, const FeatureTable& t, const std::string& comment = "") {
  if (!comment.empty()) out << "# " << comment << "\n";
  out << "trajectory,frame,label";
  for (const auto& n : t.names) out << ',' << n;
  out << "\n";
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    out << t.frames[i].trajectory << ',' << t.frames[i].frame << ',' << t.labels[i];
    for (Eigen::Index j = 0; j < t.dim(); ++j) out << ',' << detail::format_double(t.values(i, j));
    out << "\n";
  }
}

inline FeatureTable read_feature_table(std::istream& in) {
  FeatureTable t;
  std::string line;
  int row = 0;
  bool header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line.starts_with("#")) continue;
    const auto cols = detail::split_csv(line);
    if (!header) {
      if (cols.size() < 3 || cols[0] != "trajectory") throw ParseError("feature table row " + std::to_string(row) + ": bad header");
      for (std::size_t j = 3; j < cols.size(); ++j) t.names.emplace_back(cols[j]);
      header = true;
      continue;
    }
    if (cols.size() != t.names.size() + 3) {
      throw ParseError("feature table row " + std::to_string(row) + ": expected " + std::to_string(t.names.size() + 3) +
                       " columns, got " + std::to_string(cols.size()));
    }
    const auto tr = detail::parse_number<int>(cols[0]);
    const auto fr = detail::parse_number<int>(cols[1]);
    const auto lb = detail::parse_number<int>(cols[2]);
    if (!tr || !fr || !lb) throw ParseError("feature table row " + std::to_string(row) + ": bad index column");
    t.frames.push_back({*tr, *fr});
    t.labels.push_back(*lb);
    std::vector<double> v;
    for (std::size_t j = 3; j < cols.size(); ++j) {
      const auto x = detail::parse_number<double>(cols[j]);
      if (!x) throw ParseError("feature table row " + std::to_string(row) + ": bad value");
      v.push_back(*x);
    }
    rows.push_back(std::move(v));
  }
  if (!header) throw ParseError("feature table is empty");
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(t.names.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return t;
}

inline void save_feature_table(const std::filesystem::path& path, const FeatureTable& t, const std::string& comment = "") {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  write_feature_table(out, t, comment);
}

inline FeatureTable load_feature_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_feature_table(in);
}

}  // namespace trj
