#pragma once

#include <string>
#include <vector>

#include "mib/errors.hpp"
#include "mib/motion.hpp"
#include "mib/rotations.hpp"

// Parameter-free reference predictors. Each returns one predicted pose per
// missing frame, in out-index order.

namespace mib {

enum class BaselineKind { ZeroVelocity, SlerpInterp, PosLerp };

inline BaselineKind baseline_from_string(const std::string& s) {
  if (s == "zerovel") return BaselineKind::ZeroVelocity;
  if (s == "slerp") return BaselineKind::SlerpInterp;
  if (s == "lerp") return BaselineKind::PosLerp;
  throw ConfigError("unknown baseline '" + s + "' (want zerovel, slerp or lerp)");
}

// Every missing frame copies the most recent preceding key-frame.
inline std::vector<Pose> zero_velocity(const InbetweenTask& task) {
  task.validate();
  std::vector<Pose> out;
  for (int i : task.out_indices) {
    int prev = -1;
    for (int k : task.in_indices)
      if (k < i) prev = k;
    if (prev < 0)
      throw ContractError("zero_velocity: missing frame " + std::to_string(i) +
                          " has no preceding key-frame");
    out.push_back(task.window.frames[prev]);
  }
  return out;
}

// Root linearly interpolated, every joint rotation SLERPed, both with the
// frame fraction between the surrounding key pair (piecewise when interior
// keys exist).
inline std::vector<Pose> slerp_interpolate(const InbetweenTask& task) {
  task.validate();
  std::vector<Pose> out;
  for (int i : task.out_indices) {
    int a = -1, b = -1;
    for (int k : task.in_indices) {
      if (k < i) a = k;
      if (k > i && b == -1) b = k;
    }
    if (a < 0 || b < 0)
      throw ContractError("slerp_interpolate: missing frame " + std::to_string(i) +
                          " is not surrounded by key-frames");
    const double t = static_cast<double>(i - a) / static_cast<double>(b - a);
    const Pose& pa = task.window.frames[a];
    const Pose& pb = task.window.frames[b];
    Pose p;
    p.root_pos = pa.root_pos + t * (pb.root_pos - pa.root_pos);
    p.rot.resize(pa.rot.size());
    for (std::size_t j = 0; j < pa.rot.size(); ++j)
      p.rot[j] = slerp_rot6(pa.rot[j], pb.rot[j], t);
    out.push_back(std::move(p));
  }
  return out;
}

// Per-joint linear interpolation of global positions (position-only lane).
inline std::vector<std::vector<Vec3d>> pos_lerp(const PositionTask& task) {
  std::vector<std::vector<Vec3d>> out;
  for (int i : task.out_indices) {
    int a = -1, b = -1;
    for (int k : task.in_indices) {
      if (k < i) a = k;
      if (k > i && b == -1) b = k;
    }
    if (a < 0 || b < 0)
      throw ContractError("pos_lerp: missing frame " + std::to_string(i) +
                          " is not surrounded by key-frames");
    const double t = static_cast<double>(i - a) / static_cast<double>(b - a);
    const auto& fa = task.window.frames[a];
    const auto& fb = task.window.frames[b];
    std::vector<Vec3d> frame(fa.size());
    for (std::size_t j = 0; j < fa.size(); ++j) frame[j] = fa[j] + t * (fb[j] - fa[j]);
    out.push_back(std::move(frame));
  }
  return out;
}

inline std::vector<std::vector<Vec3d>> pos_zero_velocity(const PositionTask& task) {
  std::vector<std::vector<Vec3d>> out;
  out.reserve(task.out_indices.size());
  for (int i : task.out_indices) {
    int a = -1;
    for (int k : task.in_indices)
      if (k < i) a = k;
    if (a < 0)
      throw ContractError("pos_zero_velocity: missing frame " + std::to_string(i) +
                          " has no preceding key-frame");
    out.push_back(task.window.frames[a]);
  }
  return out;
}

}  // namespace mib
