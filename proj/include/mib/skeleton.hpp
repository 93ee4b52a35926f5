#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mib/errors.hpp"
#include "mib/jsonio.hpp"
#include "mib/rotations.hpp"

namespace mib {

// Joint tree in topological order (root first, parent[j] < j). Offsets are
// the constant bone vectors in the parent frame; the root's offset is unused
// by FK because the root translation comes from the trajectory.
struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parents;  // -1 marks the root
  std::vector<Vec3d> offsets;

  int joint_count() const { return static_cast<int>(parents.size()); }

  void validate() const {
    const std::size_t j = parents.size();
    if (j == 0) throw DataError("skeleton: no joints");
    if (names.size() != j || offsets.size() != j)
      throw DataError("skeleton: names/parents/offsets lengths differ");
    if (parents[0] != -1) throw DataError("skeleton: first joint must be the root");
    for (std::size_t i = 1; i < j; ++i) {
      if (parents[i] == -1)
        throw DataError("skeleton: multiple roots (joint " + std::to_string(i) + ")");
      if (parents[i] < 0 || parents[i] >= static_cast<int>(i))
        throw DataError("skeleton: parent of joint " + std::to_string(i) +
                        " must precede it");
    }
  }

  // Longest root-to-joint path length; used as a natural length unit.
  double reach() const {
    std::vector<double> depth(parents.size(), 0.0);
    double best = 0.0;
    for (std::size_t i = 1; i < parents.size(); ++i) {
      depth[i] = depth[static_cast<std::size_t>(parents[i])] + offsets[i].norm();
      best = std::max(best, depth[i]);
    }
    return best;
  }
};

inline Skeleton skeleton_from_json(const json& j) {
  Skeleton s;
  try {
    s.names = j.at("names").get<std::vector<std::string>>();
    s.parents = j.at("parents").get<std::vector<int>>();
    for (const auto& o : j.at("offsets")) {
      if (!o.is_array() || o.size() != 3)
        throw DataError("skeleton: each offset must be [x,y,z]");
      s.offsets.emplace_back(o[0].get<double>(), o[1].get<double>(),
                             o[2].get<double>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("skeleton: malformed JSON: ") + e.what());
  }
  s.validate();
  return s;
}

inline json skeleton_to_json(const Skeleton& s) {
  json offsets = json::array();
  for (const auto& o : s.offsets) offsets.push_back({o.x(), o.y(), o.z()});
  return {{"names", s.names}, {"parents", s.parents}, {"offsets", offsets}};
}

inline Skeleton load_skeleton(const std::filesystem::path& path) {
  return skeleton_from_json(read_json_file(path));
}

inline void save_skeleton(const std::filesystem::path& path, const Skeleton& s) {
  write_json_file(path, skeleton_to_json(s));
}

// Single-pose FK. The root's rotation is already global; children compose
// G_j = G_p * [R_j o_j; 0 1].
struct FkPose {
  std::vector<Vec3d> pos;   // global joint positions
  std::vector<Mat3d> rot;   // global joint rotations
};

inline FkPose fk_pose(const Skeleton& skel, const Vec3d& root_pos,
                      const std::vector<Rot6d>& local_rot) {
  const int j = skel.joint_count();
  if (static_cast<int>(local_rot.size()) != j)
    throw ShapeError("fk: " + std::to_string(local_rot.size()) +
                     " rotations for " + std::to_string(j) + " joints");
  FkPose out;
  out.pos.resize(j);
  out.rot.resize(j);
  out.pos[0] = root_pos;
  out.rot[0] = rot6_to_matrix(local_rot[0]);
  for (int i = 1; i < j; ++i) {
    const int p = skel.parents[i];
    out.pos[i] = out.pos[p] + out.rot[p] * skel.offsets[i];
    out.rot[i] = out.rot[p] * rot6_to_matrix(local_rot[i]);
  }
  return out;
}

}  // namespace mib
