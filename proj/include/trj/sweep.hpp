// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training-fraction subsampling and the classifier sweep.
//
// A subsample is a set of 100-frame segments drawn from a labeled split until
// the requested share of frames is reached, with per-class frame frequencies
// kept close to those of the full split. The sweep trains several classifiers
// on several subsamples per (fraction, feature set) cell and reports MAP on
// the test split. Every run derives its seeds from the base seed and its own
// coordinates, so cells do not depend on execution order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "trj/classifier.hpp"
#include "trj/error.hpp"
#include "trj/features.hpp"
#include "trj/log.hpp"
#include "trj/metrics.hpp"
#include "trj/pose_io.hpp"
#include "trj/rng.hpp"
#include "trj/trajectory.hpp"

namespace trj {

inline const std::vector<double>& default_fractions() {
  static const std::vector<double> f{0.01, 0.02, 0.05, 0.10, 0.25, 0.50, 0.75, 1.00};
  return f;
}

struct SubsampleConfig {
  int segment_length = 100;
  double class_tolerance = 0.2;  ///< allowed relative deviation of each class frequency
  int attempts = 64;
  int candidates_per_pick = 8;
};

struct Subsample {
  Dataset data;
  /// Frames of the source split, segment by segment.
  std::vector<FrameRef> frames;
  /// Largest relative deviation of a class frequency from the full split.
  double max_class_deviation = 0.0;
  bool within_tolerance = true;
};

namespace detail {

struct Segment {
  int trajectory = 0;
  int start = 0;
  int length = 0;
};

inline double max_relative_deviation(const std::vector<double>& counts, double total, const std::vector<double>& target) {
  double worst = 0.0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (target[c] <= 0.0) continue;
    const double freq = total > 0.0 ? counts[c] / total : 0.0;
    worst = std::max(worst, std::abs(freq - target[c]) / target[c]);
  }
  return worst;
}

}  // namespace detail

/// Class-matched subsample holding about `fraction` of the labeled frames of `d`.
inline Subsample subsample_training_set(const Dataset& d, double fraction, Rng& rng, const SubsampleConfig& cfg = {}) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("training fraction must lie in (0, 1]");
  if (!d.labeled()) throw ConfigError("subsampling needs a labeled split");
  if (cfg.segment_length < 1) throw ConfigError("segment length must be positive");
  Subsample out;
  out.data.split = d.split;
  out.data.image = d.image;
  if (fraction >= 1.0) {
    out.data = d;
    out.frames = all_frames(d);
    return out;
  }

  int classes = 0;
  for (const auto& t : d.trajectories) {
    for (int l : t.labels) classes = std::max(classes, l + 1);
  }
  std::vector<double> target(classes, 0.0);
  double labeled = 0.0;
  for (const auto& t : d.trajectories) {
    for (int l : t.labels) {
      if (l >= 0) {
        target[l] += 1.0;
        labeled += 1.0;
      }
    }
  }
  if (labeled == 0.0) throw ConfigError("subsampling needs labeled frames");
  for (auto& v : target) v /= labeled;

  std::vector<detail::Segment> segments;
  std::vector<std::vector<double>> seg_counts;
  for (int ti = 0; ti < static_cast<int>(d.trajectories.size()); ++ti) {
    const auto& t = d.trajectories[ti];
    for (int s = 0; s < t.size(); s += cfg.segment_length) {
      const int len = std::min(cfg.segment_length, t.size() - s);
      segments.push_back({ti, s, len});
      std::vector<double> c(classes, 0.0);
      for (int f = s; f < s + len; ++f) {
        if (t.labels[f] >= 0) c[t.labels[f]] += 1.0;
      }
      seg_counts.push_back(std::move(c));
    }
  }
  const double wanted = std::round(fraction * static_cast<double>(d.frame_count()));

  // Greedy fill from a shuffled candidate stream; each pick takes the candidate that keeps the
  // class histogram closest to the full split. Several attempts, keep the best.
  std::vector<std::size_t> best_pick;
  double best_dev = std::numeric_limits<double>::infinity();
  for (int attempt = 0; attempt < cfg.attempts && best_dev > cfg.class_tolerance; ++attempt) {
    std::vector<std::size_t> order(segments.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> picked;
    std::vector<double> counts(classes, 0.0);
    double frames = 0.0, total = 0.0;
    std::size_t next = 0;
    while (frames < wanted && next < order.size()) {
      const std::size_t pool_end = std::min(order.size(), next + static_cast<std::size_t>(cfg.candidates_per_pick));
      std::size_t choice = next;
      double choice_dev = std::numeric_limits<double>::infinity();
      for (std::size_t k = next; k < pool_end; ++k) {
        const auto& sc = seg_counts[order[k]];
        std::vector<double> trial = counts;
        double trial_total = total;
        for (int c = 0; c < classes; ++c) {
          trial[c] += sc[c];
          trial_total += sc[c];
        }
        const double dev = detail::max_relative_deviation(trial, trial_total, target);
        if (dev < choice_dev) {
          choice_dev = dev;
          choice = k;
        }
      }
      std::swap(order[next], order[choice]);
      const std::size_t seg = order[next++];
      picked.push_back(seg);
      frames += segments[seg].length;
      for (int c = 0; c < classes; ++c) {
        counts[c] += seg_counts[seg][c];
        total += seg_counts[seg][c];
      }
    }
    const double dev = detail::max_relative_deviation(counts, total, target);
    if (dev < best_dev) {
      best_dev = dev;
      best_pick = picked;
    }
  }

  std::sort(best_pick.begin(), best_pick.end());
  for (std::size_t seg : best_pick) {
    const auto& s = segments[seg];
    const auto& src = d.trajectories[s.trajectory];
    Trajectory t;
    t.source_id = src.source_id + "@" + std::to_string(s.start);
    t.frame_rate = src.frame_rate;
    t.normalized = src.normalized;
    t.frames.assign(src.frames.begin() + s.start, src.frames.begin() + s.start + s.length);
    t.labels.assign(src.labels.begin() + s.start, src.labels.begin() + s.start + s.length);
    out.data.trajectories.push_back(std::move(t));
    for (int f = s.start; f < s.start + s.length; ++f) out.frames.push_back({s.trajectory, f});
  }
  out.max_class_deviation = best_dev;
  out.within_tolerance = best_dev <= cfg.class_tolerance;
  if (!out.within_tolerance) {
    warn("training fraction " + detail::format_double(fraction) + " cannot match the class distribution within " +
         detail::format_double(cfg.class_tolerance) + " (best deviation " + detail::format_double(best_dev) +
         "); using the closest subsample");
  }
  return out;
}

/// Feature tables of one feature set for the three splits.
struct FeatureSplits {
  std::string name;
  FeatureTable train;
  FeatureTable val;
  FeatureTable test;
};

struct SweepConfig {
  std::vector<double> fractions = default_fractions();
  int selections = 3;
  int trainings = 3;
  ClassifierConfig classifier;  ///< hidden sizes are replaced per fraction
  SubsampleConfig subsample;
  std::uint64_t seed = 0;
};

struct SweepRun {
  double fraction = 0.0;
  std::string feature_set;
  std::uint64_t seed = 0;
  double map = 0.0;
  std::vector<double> per_class;

  /// NaN entries (classes without positives) compare equal to each other.
  bool operator==(const SweepRun& o) const {
    if (fraction != o.fraction || feature_set != o.feature_set || seed != o.seed || map != o.map) return false;
    if (per_class.size() != o.per_class.size()) return false;
    for (std::size_t i = 0; i < per_class.size(); ++i) {
      const bool a = std::isnan(per_class[i]), b = std::isnan(o.per_class[i]);
      if (a != b || (!a && per_class[i] != o.per_class[i])) return false;
    }
    return true;
  }
};

struct SweepCell {
  double fraction = 0.0;
  std::string feature_set;
  int runs = 0;
  double map_mean = 0.0;
  double map_std = 0.0;  ///< sample standard deviation
  double error_mean() const { return 1.0 - map_mean; }
};

struct SweepResult {
  int classes = 0;
  std::vector<SweepRun> runs;
  std::string config_hash;
  std::string version;

  /// Cells in order of first appearance.
  std::vector<SweepCell> cells() const {
    std::vector<SweepCell> out;
    std::vector<std::vector<double>> maps;
    for (const auto& r : runs) {
      auto it = std::find_if(out.begin(), out.end(),
                             [&](const SweepCell& c) { return c.fraction == r.fraction && c.feature_set == r.feature_set; });
      if (it == out.end()) {
        out.push_back({r.fraction, r.feature_set, 0, 0.0, 0.0});
        maps.emplace_back();
        it = out.end() - 1;
      }
      maps[it - out.begin()].push_back(r.map);
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& m = maps[i];
      out[i].runs = static_cast<int>(m.size());
      out[i].map_mean = std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
      double ss = 0.0;
      for (double v : m) ss += (v - out[i].map_mean) * (v - out[i].map_mean);
      out[i].map_std = m.size() > 1 ? std::sqrt(ss / static_cast<double>(m.size() - 1)) : 0.0;
    }
    return out;
  }

  std::optional<SweepCell> cell(double fraction, const std::string& feature_set) const {
    for (const auto& c : cells()) {
      if (std::abs(c.fraction - fraction) < 1e-12 && c.feature_set == feature_set) return c;
    }
    return std::nullopt;
  }

  bool operator==(const SweepResult& o) const {
    return classes == o.classes && runs == o.runs && config_hash == o.config_hash && version == o.version;
  }
};

inline std::string artifact_header(const std::string& config_hash, const std::string& version) {
  return "# config_hash=" + config_hash + " version=" + version + "\n";
}

/// One row per run: fraction,feature_set,seed,map,ap_class0,... Excluded classes are written as nan.
inline std::string sweep_runs_csv(const SweepResult& r) {
  using detail::format_double;
  std::ostringstream os;
  os << artifact_header(r.config_hash, r.version);
  os << "fraction,feature_set,seed,map";
  for (int c = 0; c < r.classes; ++c) os << ",ap_class" << c;
  os << "\n";
  for (const auto& run : r.runs) {
    os << format_double(run.fraction) << "," << run.feature_set << "," << run.seed << "," << format_double(run.map);
    for (double v : run.per_class) os << "," << (std::isnan(v) ? std::string("nan") : format_double(v));
    os << "\n";
  }
  return os.str();
}

inline SweepResult parse_sweep_runs_csv(const std::string& text) {
  SweepResult r;
  std::istringstream is(text);
  std::string line;
  int row = 0;
  bool header_seen = false;
  auto number = [&](std::string_view s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    const auto v = detail::parse_number<double>(s);
    if (!v) throw ParseError("sweep CSV row " + std::to_string(row) + ": '" + std::string(s) + "' is not a number");
    return *v;
  };
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    if (line.starts_with("#")) {
      std::istringstream hs(line.substr(1));
      std::string kv;
      while (hs >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        if (kv.substr(0, eq) == "config_hash") r.config_hash = kv.substr(eq + 1);
        if (kv.substr(0, eq) == "version") r.version = kv.substr(eq + 1);
      }
      continue;
    }
    const auto cols = detail::split_csv(line);
    if (!header_seen) {
      header_seen = true;
      if (cols.size() < 4 || cols[0] != "fraction") throw ParseError("sweep CSV row " + std::to_string(row) + ": bad header");
      r.classes = static_cast<int>(cols.size()) - 4;
      continue;
    }
    if (static_cast<int>(cols.size()) != 4 + r.classes) {
      throw ParseError("sweep CSV row " + std::to_string(row) + ": expected " + std::to_string(4 + r.classes) + " columns");
    }
    SweepRun run;
    run.fraction = number(cols[0]);
    run.feature_set = std::string(cols[1]);
    const auto seed = detail::parse_number<std::uint64_t>(cols[2]);
    if (!seed) throw ParseError("sweep CSV row " + std::to_string(row) + ": bad seed");
    run.seed = *seed;
    run.map = number(cols[3]);
    for (int c = 0; c < r.classes; ++c) run.per_class.push_back(number(cols[4 + c]));
    r.runs.push_back(std::move(run));
  }
  return r;
}

/// fraction,feature_set,runs,map_mean,map_std,error_mean,error_std
inline std::string sweep_cells_csv(const SweepResult& r) {
  using detail::format_double;
  std::ostringstream os;
  os << artifact_header(r.config_hash, r.version);
  os << "fraction,feature_set,runs,map_mean,map_std,error_mean,error_std\n";
  for (const auto& c : r.cells()) {
    os << format_double(c.fraction) << "," << c.feature_set << "," << c.runs << "," << format_double(c.map_mean) << ","
       << format_double(c.map_std) << "," << format_double(c.error_mean()) << "," << format_double(c.map_std) << "\n";
  }
  return os.str();
}

/// Long format for plotting: fraction,error_mean,error_std,series
inline std::string sweep_plot_csv(const SweepResult& r) {
  using detail::format_double;
  std::ostringstream os;
  os << artifact_header(r.config_hash, r.version);
  os << "fraction,error_mean,error_std,series\n";
  for (const auto& c : r.cells()) {
    os << format_double(c.fraction) << "," << format_double(c.error_mean()) << "," << format_double(c.map_std) << ","
       << c.feature_set << "\n";
  }
  return os.str();
}

inline std::uint64_t subsample_seed(std::uint64_t base, double fraction, int selection) {
  return derive_seed(base, {seed_tag("subsample"), seed_tag(fraction), static_cast<std::uint64_t>(selection)});
}

inline std::uint64_t classifier_seed(std::uint64_t base, const std::string& feature_set, double fraction, int selection,
                                     int training) {
  return derive_seed(base, {seed_tag("classifier"), seed_tag(feature_set), seed_tag(fraction),
                            static_cast<std::uint64_t>(selection), static_cast<std::uint64_t>(training)});
}

/// Index of every table row, keyed by frame.
inline std::map<std::pair<int, int>, Eigen::Index> row_index(const FeatureTable& t) {
  std::map<std::pair<int, int>, Eigen::Index> idx;
  for (std::size_t i = 0; i < t.frames.size(); ++i) idx[{t.frames[i].trajectory, t.frames[i].frame}] = static_cast<Eigen::Index>(i);
  return idx;
}

/// One run: subsample selection `selection`, classifier `training`.
inline SweepRun run_sweep_cell(const Dataset& train_split, const FeatureSplits& fs, double fraction, int selection,
                               int training, int classes, const SweepConfig& cfg) {
  Rng rng(subsample_seed(cfg.seed, fraction, selection));
  const auto sub = subsample_training_set(train_split, fraction, rng, cfg.subsample);
  const auto idx = row_index(fs.train);
  std::vector<Eigen::Index> rows;
  rows.reserve(sub.frames.size());
  for (const auto& f : sub.frames) {
    const auto it = idx.find({f.trajectory, f.frame});
    if (it == idx.end()) throw SchemaError("feature table '" + fs.name + "' does not cover the training split");
    rows.push_back(it->second);
  }
  const FeatureTable train = fs.train.select(rows);
  ClassifierConfig cc = cfg.classifier;
  cc.hidden = hidden_sizes_for_fraction(fraction);
  cc.classes = classes;
  cc.allow_missing_classes = true;
  cc.seed = classifier_seed(cfg.seed, fs.name, fraction, selection, training);
  const auto model = train_classifier(train.values, train.labels, fs.val.values, fs.val.labels, cc);
  const auto m = mean_average_precision(model.predict_proba(fs.test.values), fs.test.labels);
  return {fraction, fs.name, cc.seed, m.map, m.per_class};
}

/// selections x trainings runs for every (fraction, feature set) cell.
inline SweepResult run_fraction_sweep(const Dataset& train_split, const std::vector<FeatureSplits>& sets,
                                      const SweepConfig& cfg) {
  if (sets.empty()) throw ConfigError("sweep needs at least one feature set");
  if (cfg.fractions.empty()) throw ConfigError("sweep needs at least one training fraction");
  if (cfg.selections < 1 || cfg.trainings < 1) throw ConfigError("sweep needs at least one selection and one training");
  SweepResult result;
  for (const auto& t : train_split.trajectories) {
    for (int l : t.labels) result.classes = std::max(result.classes, l + 1);
  }
  for (const auto& fs : sets) {
    if (fs.train.rows() != static_cast<Eigen::Index>(train_split.frame_count())) {
      throw SchemaError("feature table '" + fs.name + "' does not match the training split");
    }
  }
  for (double fraction : cfg.fractions) {
    for (const auto& fs : sets) {
      for (int s = 0; s < cfg.selections; ++s) {
        for (int r = 0; r < cfg.trainings; ++r) {
          result.runs.push_back(run_sweep_cell(train_split, fs, fraction, s, r, result.classes, cfg));
        }
      }
    }
  }
  return result;
}

}  // namespace trj
