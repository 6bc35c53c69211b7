// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pose dataset files.
//
// CSV: header `source_id,frame,agent0_kp0_x,agent0_kp0_y,...,label`. Keypoint
// columns follow the stacked (agent, keypoint, x-then-y) order. The label
// column is optional; -1 marks an unlabeled frame. Frame numbers are
// consecutive integers per source_id. Rows of different sources may
// interleave; trajectories are emitted in order of first appearance.
//
// Binary cache (all integers and doubles little-endian):
//   "TRJ1"
//   u32 agents, u32 keypoints, f64 image_width, f64 image_height, u8 split,
//   u32 trajectory_count, then per trajectory:
//     u32 id_len, id bytes, f64 frame_rate, u8 normalized, u8 has_labels,
//     u64 frame_count, frame_count*state_dim f64 (frame-major),
//     frame_count i32 labels when has_labels.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trj/binary_io.hpp"
#include "trj/error.hpp"
#include "trj/trajectory.hpp"

namespace trj {

/// Expected column layout; a negative count means "take it from the header".
struct PoseSchema {
  int agents = -1;
  int keypoints = -1;
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  s = trim(s);
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// Parses `agent<A>_kp<K>_<x|y>`.
inline bool parse_keypoint_column(std::string_view name, int& agent, int& kp, char& axis) {
  name = trim(name);
  if (!name.starts_with("agent")) return false;
  name.remove_prefix(5);
  auto us = name.find('_');
  if (us == std::string_view::npos) return false;
  auto a = parse_number<int>(name.substr(0, us));
  name.remove_prefix(us + 1);
  if (!name.starts_with("kp")) return false;
  name.remove_prefix(2);
  us = name.find('_');
  if (us == std::string_view::npos) return false;
  auto k = parse_number<int>(name.substr(0, us));
  name.remove_prefix(us + 1);
  if (!a || !k || name.size() != 1 || (name[0] != 'x' && name[0] != 'y')) return false;
  agent = *a;
  kp = *k;
  axis = name[0];
  return true;
}

}  // namespace detail

inline std::string pose_csv_header(PoseLayout layout, bool with_label) {
  std::string h = "source_id,frame";
  for (int a = 0; a < layout.agents; ++a) {
    for (int k = 0; k < layout.keypoints; ++k) {
      const std::string base = "agent" + std::to_string(a) + "_kp" + std::to_string(k);
      h += "," + base + "_x," + base + "_y";
    }
  }
  if (with_label) h += ",label";
  return h;
}

/// Reads a pose CSV stream. Coordinates are kept in raw pixels.
inline Dataset read_pose_csv(std::istream& in, ImageDims image, PoseSchema schema = {}, double frame_rate = 30.0) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: missing header");
  const auto header = detail::split_csv(line);
  if (header.size() < 4 || detail::trim(header[0]) != "source_id" || detail::trim(header[1]) != "frame") {
    throw ParseError("line 1: header must start with 'source_id,frame'");
  }
  const bool has_label = detail::trim(header.back()) == "label";
  const std::size_t n_coord = header.size() - 2 - (has_label ? 1 : 0);
  int max_agent = -1, max_kp = -1;
  for (std::size_t i = 0; i < n_coord; ++i) {
    int a = 0, k = 0;
    char axis = 0;
    if (!detail::parse_keypoint_column(header[2 + i], a, k, axis)) {
      throw ParseError("line 1: unrecognized column '" + std::string(header[2 + i]) + "'");
    }
    max_agent = std::max(max_agent, a);
    max_kp = std::max(max_kp, k);
  }
  PoseLayout layout{max_agent + 1, max_kp + 1};
  if (static_cast<std::size_t>(layout.state_dim()) != n_coord) {
    throw SchemaError("header declares " + std::to_string(n_coord) + " coordinate columns, inconsistent with " +
                      std::to_string(layout.agents) + " agents x " + std::to_string(layout.keypoints) + " keypoints");
  }
  for (std::size_t i = 0; i < n_coord; ++i) {
    int a = 0, k = 0;
    char axis = 0;
    detail::parse_keypoint_column(header[2 + i], a, k, axis);
    const std::size_t expected = static_cast<std::size_t>(layout.offset(a, k) + (axis == 'y' ? 1 : 0));
    if (expected != i) throw SchemaError("line 1: keypoint columns are not in stacked (agent, keypoint, x, y) order");
  }
  if ((schema.agents >= 0 && schema.agents != layout.agents) ||
      (schema.keypoints >= 0 && schema.keypoints != layout.keypoints)) {
    throw SchemaError("file has " + std::to_string(layout.agents) + " agents x " + std::to_string(layout.keypoints) +
                      " keypoints, schema expects " + std::to_string(schema.agents) + " x " +
                      std::to_string(schema.keypoints));
  }

  Dataset d;
  d.image = image;
  std::map<std::string, std::size_t, std::less<>> index;
  std::vector<int> last_frame;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cols = detail::split_csv(line);
    if (cols.size() != header.size()) {
      throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(cols.size()));
    }
    const std::string id(detail::trim(cols[0]));
    const auto frame = detail::parse_number<int>(cols[1]);
    if (!frame) throw ParseError("line " + std::to_string(line_no) + ": bad frame number");
    std::vector<double> coords(n_coord);
    for (std::size_t i = 0; i < n_coord; ++i) {
      const auto v = detail::parse_number<double>(cols[2 + i]);
      if (!v) throw ParseError("line " + std::to_string(line_no) + ": bad number in column " + std::to_string(3 + i));
      coords[i] = *v;
    }
    auto it = index.find(id);
    if (it == index.end()) {
      it = index.emplace(id, d.trajectories.size()).first;
      Trajectory t;
      t.source_id = id;
      t.frame_rate = frame_rate;
      d.trajectories.push_back(std::move(t));
      last_frame.push_back(*frame - 1);
    }
    Trajectory& t = d.trajectories[it->second];
    if (*frame != last_frame[it->second] + 1) {
      throw ParseError("line " + std::to_string(line_no) + ": frame " + std::to_string(*frame) + " of '" + id +
                       "' is not contiguous");
    }
    last_frame[it->second] = *frame;
    t.frames.emplace_back(layout, std::move(coords));
    if (has_label) {
      const auto label = detail::parse_number<int>(cols.back());
      if (!label || *label < kUnlabeled) throw ParseError("line " + std::to_string(line_no) + ": bad label");
      t.labels.push_back(*label);
    }
  }
  if (d.trajectories.empty()) throw ParseError("file contains no data rows");
  return d;
}

inline Dataset ingest_pose_file(const std::filesystem::path& path, ImageDims image, PoseSchema schema = {},
                                double frame_rate = 30.0) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_pose_csv(in, image, schema, frame_rate);
}

inline void write_pose_csv(std::ostream& out, const Dataset& d) {
  d.validate();
  const bool with_label = d.labeled();
  out << pose_csv_header(d.layout(), with_label) << '\n';
  for (const auto& t : d.trajectories) {
    for (int f = 0; f < t.size(); ++f) {
      out << t.source_id << ',' << f;
      for (double v : t.frames[f].stacked()) out << ',' << detail::format_double(v);
      if (with_label) out << ',' << t.labels[f];
      out << '\n';
    }
  }
}

inline void write_pose_file(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  write_pose_csv(out, d);
}

inline void write_pose_cache(std::ostream& out, const Dataset& d) {
  using namespace binary;
  d.validate();
  const PoseLayout layout = d.layout();
  out.write("TRJ1", 4);
  write_le<std::uint32_t>(out, layout.agents);
  write_le<std::uint32_t>(out, layout.keypoints);
  write_le<double>(out, d.image.width);
  write_le<double>(out, d.image.height);
  write_le<std::uint8_t>(out, static_cast<std::uint8_t>(d.split));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d.trajectories.size()));
  for (const auto& t : d.trajectories) {
    write_string(out, t.source_id);
    write_le<double>(out, t.frame_rate);
    write_le<std::uint8_t>(out, t.normalized ? 1 : 0);
    write_le<std::uint8_t>(out, t.has_labels() ? 1 : 0);
    write_le<std::uint64_t>(out, t.frames.size());
    for (const auto& f : t.frames) {
      for (double v : f.stacked()) write_le<double>(out, v);
    }
    if (t.has_labels()) {
      for (int l : t.labels) write_le<std::int32_t>(out, l);
    }
  }
}

inline Dataset read_pose_cache(std::istream& in) {
  using namespace binary;
  expect_magic(in, "TRJ1");
  PoseLayout layout;
  layout.agents = static_cast<int>(read_le<std::uint32_t>(in));
  layout.keypoints = static_cast<int>(read_le<std::uint32_t>(in));
  if (layout.agents < 1 || layout.keypoints < 1 || layout.state_dim() > (1 << 16)) {
    throw SchemaError("pose cache has an invalid layout");
  }
  Dataset d;
  d.image.width = read_le<double>(in);
  d.image.height = read_le<double>(in);
  const auto split = read_le<std::uint8_t>(in);
  if (split > 2) throw ParseError("pose cache has an invalid split tag");
  d.split = static_cast<Split>(split);
  const auto n = read_le<std::uint32_t>(in);
  d.trajectories.resize(n);
  for (auto& t : d.trajectories) {
    t.source_id = read_string(in);
    t.frame_rate = read_le<double>(in);
    t.normalized = read_le<std::uint8_t>(in) != 0;
    const bool labeled = read_le<std::uint8_t>(in) != 0;
    const auto frames = read_le<std::uint64_t>(in);
    if (frames > (1ull << 32)) throw ParseError("pose cache frame count is implausible");
    t.frames.reserve(frames);
    std::vector<double> coords(layout.state_dim());
    for (std::uint64_t f = 0; f < frames; ++f) {
      for (auto& v : coords) v = read_le<double>(in);
      t.frames.emplace_back(layout, coords);
    }
    if (labeled) {
      t.labels.resize(frames);
      for (auto& l : t.labels) l = read_le<std::int32_t>(in);
    }
  }
  d.validate();
  return d;
}

inline void save_pose_cache(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  write_pose_cache(out, d);
}

inline Dataset load_pose_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_pose_cache(in);
}

}  // namespace trj
