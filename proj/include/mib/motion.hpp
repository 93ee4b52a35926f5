#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mib/errors.hpp"
#include "mib/jsonio.hpp"
#include "mib/rotations.hpp"
#include "mib/skeleton.hpp"

namespace mib {

// One frame: root position plus per-joint ortho6D rotations. The root's
// rotation lives in the global frame, every other joint's in its parent's.
struct Pose {
  Vec3d root_pos = Vec3d::Zero();
  std::vector<Rot6d> rot;
};

struct MotionSequence {
  Skeleton skeleton;
  double frame_rate = 30.0;
  std::vector<Pose> frames;

  int joint_count() const { return skeleton.joint_count(); }
  int frame_count() const { return static_cast<int>(frames.size()); }

  void validate() const {
    skeleton.validate();
    for (std::size_t f = 0; f < frames.size(); ++f)
      if (static_cast<int>(frames[f].rot.size()) != joint_count())
        throw DataError("sequence: frame " + std::to_string(f) + " has " +
                        std::to_string(frames[f].rot.size()) + " rotations for " +
                        std::to_string(joint_count()) + " joints");
  }
};

// A fixed window plus the key/missing split. Frames are re-indexed from 0.
struct InbetweenTask {
  MotionSequence window;
  std::vector<int> in_indices;   // sorted key-frames
  std::vector<int> out_indices;  // sorted complement

  void validate() const {
    const int t = window.frame_count();
    if (in_indices.empty()) throw TaskError("task: no key-frames");
    std::vector<bool> seen(t, false);
    for (int i : in_indices) {
      if (i < 0 || i >= t || seen[i]) throw TaskError("task: bad key index " + std::to_string(i));
      seen[i] = true;
    }
    for (int i : out_indices) {
      if (i < 0 || i >= t || seen[i])
        throw TaskError("task: bad missing index " + std::to_string(i));
      seen[i] = true;
    }
    if (static_cast<int>(in_indices.size() + out_indices.size()) != t)
      throw TaskError("task: key/missing split does not cover the window");
    if (!std::is_sorted(in_indices.begin(), in_indices.end()) ||
        !std::is_sorted(out_indices.begin(), out_indices.end()))
      throw TaskError("task: indices must be sorted");
  }
};

inline std::vector<MotionSequence> make_windows(const MotionSequence& seq,
                                                int window_len, int offset) {
  if (window_len < 2) throw ConfigError("make_windows: window length must be >= 2");
  if (offset < 1) throw ConfigError("make_windows: offset must be >= 1");
  std::vector<MotionSequence> out;
  for (int start = 0; start + window_len <= seq.frame_count(); start += offset) {
    MotionSequence w;
    w.skeleton = seq.skeleton;
    w.frame_rate = seq.frame_rate;
    w.frames.assign(seq.frames.begin() + start, seq.frames.begin() + start + window_len);
    out.push_back(std::move(w));
  }
  return out;
}

// --- window normalization --------------------------------------------------

// Subtracts the window's mean root X/Z from every frame (vertical untouched).
inline Vec3d xz_center(MotionSequence& window) {
  if (window.frames.empty()) return Vec3d::Zero();
  double mx = 0, mz = 0;
  for (const auto& f : window.frames) {
    mx += f.root_pos.x();
    mz += f.root_pos.z();
  }
  mx /= window.frame_count();
  mz /= window.frame_count();
  for (auto& f : window.frames) {
    f.root_pos.x() -= mx;
    f.root_pos.z() -= mz;
  }
  return {mx, 0.0, mz};
}

inline Mat3d yaw_matrix(double angle) {
  Mat3d m;
  m << std::cos(angle), 0, std::sin(angle), 0, 1, 0, -std::sin(angle), 0,
      std::cos(angle);
  return m;
}

// Rotates the window about the vertical axis so the average facing direction
// of the first `context_frames` frames points to +Z. Facing is derived from
// the root rotation: cross(up, root local X axis), projected to the ground
// plane. Degenerate facings (straight up/down) leave the window unchanged.
inline Mat3d y_rotate(MotionSequence& window, int context_frames = 10) {
  if (window.frames.empty()) return Mat3d::Identity();
  const int n = std::min<int>(context_frames, window.frame_count());
  Vec3d avg_x = Vec3d::Zero();
  for (int f = 0; f < n; ++f)
    avg_x += rot6_to_matrix(window.frames[f].rot[0]).col(0);
  avg_x /= n;
  const Vec3d up{0, 1, 0};
  Vec3d facing = up.cross(avg_x);
  facing.y() = 0;
  if (facing.norm() < 1e-6) return Mat3d::Identity();
  facing.normalize();
  const double angle = -std::atan2(facing.x(), facing.z());
  const Mat3d r = yaw_matrix(angle);
  for (auto& f : window.frames) {
    f.root_pos = r * f.root_pos;
    f.rot[0] = matrix_to_rot6(Mat3d(r * rot6_to_matrix(f.rot[0])));
  }
  return r;
}

// The rigid transform a normalization applied; predictions made in the
// normalized frame can be mapped back through invert().
struct WindowTransform {
  Vec3d shift = Vec3d::Zero();   // subtracted before the yaw rotation
  Mat3d rot = Mat3d::Identity();

  Pose apply(Pose p) const {
    p.root_pos = rot * (p.root_pos - shift);
    p.rot[0] = matrix_to_rot6(Mat3d(rot * rot6_to_matrix(p.rot[0])));
    return p;
  }

  Pose invert(Pose p) const {
    p.root_pos = rot.transpose() * p.root_pos + shift;
    p.rot[0] = matrix_to_rot6(Mat3d(rot.transpose() * rot6_to_matrix(p.rot[0])));
    return p;
  }
};

inline WindowTransform normalize_window(MotionSequence& window, int context_frames = 10) {
  WindowTransform t;
  t.shift = xz_center(window);
  t.rot = y_rotate(window, context_frames);
  return t;
}

// --- metric standardization stats -------------------------------------------

// Per joint-axis mean/std of global joint positions over the (normalized)
// training windows; used to standardize the position metric.
struct NormStats {
  std::vector<Vec3d> mean;
  std::vector<Vec3d> std;

  json to_json() const {
    json m = json::array(), s = json::array();
    for (std::size_t j = 0; j < mean.size(); ++j) {
      m.push_back({mean[j].x(), mean[j].y(), mean[j].z()});
      s.push_back({std[j].x(), std[j].y(), std[j].z()});
    }
    return {{"mean", m}, {"std", s}};
  }

  static NormStats from_json(const json& j) {
    NormStats out;
    try {
      for (const auto& v : j.at("mean"))
        out.mean.emplace_back(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
      for (const auto& v : j.at("std"))
        out.std.emplace_back(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
    } catch (const json::exception& e) {
      throw DataError(std::string("norm stats: malformed JSON: ") + e.what());
    }
    if (out.mean.size() != out.std.size())
      throw DataError("norm stats: mean/std lengths differ");
    return out;
  }
};

inline NormStats compute_norm_stats(const std::vector<MotionSequence>& windows) {
  if (windows.empty()) throw DataError("norm stats: no windows");
  const int j = windows[0].joint_count();
  // Welford keeps constant channels at exactly zero variance.
  std::vector<Vec3d> mean(j, Vec3d::Zero()), m2(j, Vec3d::Zero());
  std::int64_t count = 0;
  for (const auto& w : windows)
    for (const auto& f : w.frames) {
      const auto fkr = fk_pose(w.skeleton, f.root_pos, f.rot);
      ++count;
      for (int k = 0; k < j; ++k) {
        const Vec3d delta = fkr.pos[k] - mean[k];
        mean[k] += delta / static_cast<double>(count);
        m2[k] += delta.cwiseProduct(fkr.pos[k] - mean[k]);
      }
    }
  NormStats stats;
  for (int k = 0; k < j; ++k) {
    Vec3d sd = (m2[k] / static_cast<double>(count)).cwiseMax(0.0).cwiseSqrt();
    // guard constant channels so standardization never divides by ~0
    for (int a = 0; a < 3; ++a)
      if (sd[a] < 1e-8) sd[a] = 1.0;
    stats.mean.push_back(mean[k]);
    stats.std.push_back(sd);
  }
  return stats;
}

// --- position-only lane (dance-style datasets) -------------------------------

// Global joint positions per frame; no skeleton, no rotations.
struct PositionSequence {
  double frame_rate = 30.0;
  int joints = 0;
  std::vector<std::vector<Vec3d>> frames;  // [frame][joint]

  int frame_count() const { return static_cast<int>(frames.size()); }

  void validate() const {
    for (std::size_t f = 0; f < frames.size(); ++f)
      if (static_cast<int>(frames[f].size()) != joints)
        throw DataError("position sequence: frame " + std::to_string(f) +
                        " has wrong joint count");
  }
};

struct PositionTask {
  PositionSequence window;
  std::vector<int> in_indices;
  std::vector<int> out_indices;
};

inline NormStats compute_norm_stats(const std::vector<PositionSequence>& windows) {
  if (windows.empty()) throw DataError("norm stats: no windows");
  const int j = windows[0].joints;
  std::vector<Vec3d> mean(j, Vec3d::Zero()), m2(j, Vec3d::Zero());
  std::int64_t count = 0;
  for (const auto& w : windows)
    for (const auto& f : w.frames) {
      ++count;
      for (int k = 0; k < j; ++k) {
        const Vec3d delta = f[k] - mean[k];
        mean[k] += delta / static_cast<double>(count);
        m2[k] += delta.cwiseProduct(f[k] - mean[k]);
      }
    }
  NormStats stats;
  for (int k = 0; k < j; ++k) {
    Vec3d sd = (m2[k] / static_cast<double>(count)).cwiseMax(0.0).cwiseSqrt();
    for (int a = 0; a < 3; ++a)
      if (sd[a] < 1e-8) sd[a] = 1.0;
    stats.mean.push_back(mean[k]);
    stats.std.push_back(sd);
  }
  return stats;
}

inline std::vector<PositionSequence> make_position_windows(
    const PositionSequence& seq, int window_len, int offset) {
  if (window_len < 2) throw ConfigError("make_windows: window length must be >= 2");
  if (offset < 1) throw ConfigError("make_windows: offset must be >= 1");
  std::vector<PositionSequence> out;
  for (int start = 0; start + window_len <= seq.frame_count(); start += offset) {
    PositionSequence w;
    w.frame_rate = seq.frame_rate;
    w.joints = seq.joints;
    w.frames.assign(seq.frames.begin() + start, seq.frames.begin() + start + window_len);
    out.push_back(std::move(w));
  }
  return out;
}

}  // namespace mib
