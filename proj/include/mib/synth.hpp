#pragma once

#include <cmath>
#include <string>

#include "mib/errors.hpp"
#include "mib/motion.hpp"
#include "mib/rng.hpp"

// Procedural motion: smooth band-limited rotation curves on a synthetic
// skeleton, enough to train and evaluate at desk scale without any licensed
// dataset.

namespace mib {

enum class SynthKind { SinusoidWalk, FigureEight, TwoPoseBlend };

inline SynthKind synth_kind_from_string(const std::string& s) {
  if (s == "sinusoid-walk") return SynthKind::SinusoidWalk;
  if (s == "figure-eight") return SynthKind::FigureEight;
  if (s == "two-pose-blend") return SynthKind::TwoPoseBlend;
  throw ConfigError("unknown synthetic motion kind '" + s + "'");
}

inline std::string to_string(SynthKind k) {
  switch (k) {
    case SynthKind::SinusoidWalk: return "sinusoid-walk";
    case SynthKind::FigureEight: return "figure-eight";
    default: return "two-pose-blend";
  }
}

// Simple chain skeleton with varied, non-degenerate bone offsets.
inline Skeleton synthetic_skeleton(int joints) {
  if (joints < 2) throw ConfigError("synthetic skeleton needs at least 2 joints");
  Skeleton s;
  for (int i = 0; i < joints; ++i) {
    s.names.push_back("j" + std::to_string(i));
    s.parents.push_back(i - 1);
    if (i == 0)
      s.offsets.emplace_back(0, 0, 0);
    else
      s.offsets.emplace_back(0.08 * std::sin(1.7 * i),
                             0.45 + 0.12 * std::cos(0.9 * i),
                             0.06 * std::sin(2.3 * i + 1.0));
  }
  s.validate();
  return s;
}

namespace detail {

struct JointCurve {
  Vec3d axis;
  double a1, w1, p1;  // slow component
  double a2, w2, p2;  // faster, smaller component
  double angle(double t) const {
    return a1 * std::sin(w1 * t + p1) + a2 * std::sin(w2 * t + p2);
  }
};

inline JointCurve random_curve(Rng& rng) {
  Vec3d axis{rng.normal(), rng.normal(), rng.normal()};
  while (axis.norm() < 1e-3) axis = {rng.normal(), rng.normal(), rng.normal()};
  return {axis.normalized(),
          rng.uniform(0.15, 0.5), rng.uniform(0.8, 2.2),  rng.uniform(0, 2 * M_PI),
          rng.uniform(0.05, 0.2), rng.uniform(2.5, 5.0),  rng.uniform(0, 2 * M_PI)};
}

inline Rot6d rot6_of(const Quatd& q) {
  return matrix_to_rot6(quaternion_to_matrix(q));
}

}  // namespace detail

inline MotionSequence synth_motion(SynthKind kind, const Skeleton& skeleton,
                                   int n_frames, std::uint64_t seed) {
  if (n_frames < 2) throw ConfigError("synth: need at least 2 frames");
  Rng rng(seed);
  MotionSequence seq;
  seq.skeleton = skeleton;
  seq.frame_rate = 30.0;
  const int j = skeleton.joint_count();

  std::vector<detail::JointCurve> curves;
  for (int k = 0; k < j; ++k) curves.push_back(detail::random_curve(rng));

  // two-pose-blend endpoints
  std::vector<Quatd> pose_a, pose_b;
  for (int k = 0; k < j; ++k) {
    Quatd qa{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    Quatd qb{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    pose_a.push_back(qa.normalized());
    pose_b.push_back(qb.normalized());
  }
  const Vec3d root_a{rng.uniform(-1, 1), rng.uniform(0.8, 1.1), rng.uniform(-1, 1)};
  const Vec3d root_b{rng.uniform(-1, 1), rng.uniform(0.8, 1.1), rng.uniform(-1, 1)};

  const double speed = rng.uniform(0.7, 1.4);
  const double base_yaw = rng.uniform(0, 2 * M_PI);
  const double yaw_amp = rng.uniform(0.1, 0.35);
  const double yaw_w = rng.uniform(0.4, 1.0);
  const double yaw_p = rng.uniform(0, 2 * M_PI);
  const double bob_p = rng.uniform(0, 2 * M_PI);
  const double sway_p = rng.uniform(0, 2 * M_PI);
  const double eight_r = rng.uniform(1.5, 2.5);
  const double eight_w = rng.uniform(0.3, 0.6);

  const double total_t = (n_frames - 1) / seq.frame_rate;

  for (int f = 0; f < n_frames; ++f) {
    const double t = f / seq.frame_rate;
    Pose pose;
    pose.rot.resize(j);

    Quatd root_q;
    switch (kind) {
      case SynthKind::SinusoidWalk: {
        pose.root_pos = {speed * t, 0.9 + 0.04 * std::sin(2.1 * t + bob_p),
                         0.15 * std::sin(0.9 * t + sway_p)};
        const double yaw = base_yaw + yaw_amp * std::sin(yaw_w * t + yaw_p);
        root_q = quat_from_axis_angle<double>({0, 1, 0}, yaw);
        break;
      }
      case SynthKind::FigureEight: {
        const double u = eight_w * t;
        pose.root_pos = {eight_r * std::sin(u),
                         0.9 + 0.03 * std::sin(2.3 * t + bob_p),
                         eight_r * std::sin(u) * std::cos(u)};
        // face along the path tangent
        const double dx = eight_r * eight_w * std::cos(u);
        const double dz = eight_r * eight_w * std::cos(2 * u);
        const double yaw = std::atan2(dx, dz == 0 && dx == 0 ? 1.0 : dz);
        root_q = quat_from_axis_angle<double>({0, 1, 0}, yaw);
        break;
      }
      default: {  // TwoPoseBlend
        const double s =
            total_t > 0 ? 0.5 * (1 - std::cos(2 * M_PI * t / total_t)) : 0.0;
        pose.root_pos = root_a + s * (root_b - root_a);
        pose.root_pos.y() += 0.02 * std::sin(3.1 * t + bob_p);
        root_q = slerp(pose_a[0], pose_b[0], s);
        break;
      }
    }
    // small smooth wobble keeps the root rotation generic
    const Quatd wobble =
        quat_from_axis_angle<double>(curves[0].axis, 0.3 * curves[0].angle(t));
    pose.rot[0] = detail::rot6_of(root_q * wobble);

    for (int k = 1; k < j; ++k) {
      if (kind == SynthKind::TwoPoseBlend) {
        const double s =
            total_t > 0 ? 0.5 * (1 - std::cos(2 * M_PI * t / total_t)) : 0.0;
        pose.rot[k] = detail::rot6_of(slerp(pose_a[k], pose_b[k], s));
      } else {
        pose.rot[k] = detail::rot6_of(
            quat_from_axis_angle(curves[k].axis, curves[k].angle(t)));
      }
    }
    seq.frames.push_back(std::move(pose));
  }
  seq.validate();
  return seq;
}

// Position-only synthetic data: global joint trajectories from FK of a
// synthetic motion (dance-style lane).
inline PositionSequence synth_positions(SynthKind kind, int joints, int n_frames,
                                        std::uint64_t seed) {
  const auto skel = synthetic_skeleton(joints);
  const auto seq = synth_motion(kind, skel, n_frames, seed);
  PositionSequence out;
  out.frame_rate = seq.frame_rate;
  out.joints = joints;
  for (const auto& f : seq.frames) {
    const auto fkr = fk_pose(skel, f.root_pos, f.rot);
    out.frames.push_back(fkr.pos);
  }
  return out;
}

}  // namespace mib
