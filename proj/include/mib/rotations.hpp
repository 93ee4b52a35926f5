#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mib/errors.hpp"

// Rotation representations and conversions. A pose carries one ortho6D value
// per joint; quaternions appear at the data boundary (CSV files) and in the
// evaluation metrics; matrices are the working representation inside FK.

namespace mib {

template <class S> using Vec3 = Eigen::Matrix<S, 3, 1>;
template <class S> using Mat3 = Eigen::Matrix<S, 3, 3>;
template <class S> using Rot6 = Eigen::Matrix<S, 6, 1>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using Rot6d = Rot6<double>;

inline constexpr double kRot6DegenerateEps = 1e-8;

template <class S>
struct Quat {
  S w, x, y, z;

  static Quat identity() { return {S(1), S(0), S(0), S(0)}; }

  S norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

  Quat normalized() const {
    const S n = norm();
    if (!(n > S(kRot6DegenerateEps)))
      throw DegeneracyError("quaternion: cannot normalize near-zero quaternion");
    return {w / n, x / n, y / n, z / n};
  }

  S dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

  Quat operator-() const { return {-w, -x, -y, -z}; }

  // Hamilton product.
  Quat operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z,
            w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x,
            w * o.z + x * o.y - y * o.x + z * o.w};
  }
};

using Quatd = Quat<double>;

template <class S>
Quat<S> quat_from_axis_angle(const Vec3<S>& axis, S angle) {
  const Vec3<S> u = axis.normalized();
  const S h = angle / S(2);
  const S s = std::sin(h);
  return {std::cos(h), u.x() * s, u.y() * s, u.z() * s};
}

// Gram-Schmidt per the ortho6D construction: Rx from the first triple, Rz
// orthogonal to the plane spanned with the second triple, Ry completing the
// right-handed frame. Columns assembled as [Rx Ry Rz].
template <class S>
Mat3<S> rot6_to_matrix(const Rot6<S>& r) {
  const Vec3<S> a = r.template head<3>();
  const Vec3<S> b = r.template tail<3>();
  const S an = a.norm();
  if (!(an > S(kRot6DegenerateEps)))
    throw DegeneracyError("rot6: first triple has near-zero norm");
  const Vec3<S> rx = a / an;
  const Vec3<S> c = rx.cross(b);
  const S cn = c.norm();
  if (!(cn > S(kRot6DegenerateEps)))
    throw DegeneracyError("rot6: triples are parallel or second triple is near zero");
  const Vec3<S> rz = c / cn;
  const Vec3<S> ry = rz.cross(rx);
  Mat3<S> m;
  m.col(0) = rx;
  m.col(1) = ry;
  m.col(2) = rz;
  return m;
}

// First two columns; inverse of rot6_to_matrix on orthonormal input.
template <class S>
Rot6<S> matrix_to_rot6(const Mat3<S>& m) {
  Rot6<S> r;
  r.template head<3>() = m.col(0);
  r.template tail<3>() = m.col(1);
  return r;
}

template <class S>
Mat3<S> quaternion_to_matrix(const Quat<S>& q) {
  const S w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3<S> m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

// Shepperd-style extraction: branch on the largest of trace and diagonal
// entries, then canonicalize to w >= 0.
template <class S>
Quat<S> matrix_to_quaternion(const Mat3<S>& m) {
  Quat<S> q;
  const S tr = m(0, 0) + m(1, 1) + m(2, 2);
  if (tr > m(0, 0) && tr > m(1, 1) && tr > m(2, 2)) {
    const S s = std::sqrt(tr + S(1)) * S(2);
    q = {s / S(4), (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s,
         (m(1, 0) - m(0, 1)) / s};
  } else if (m(0, 0) > m(1, 1) && m(0, 0) > m(2, 2)) {
    const S s = std::sqrt(S(1) + m(0, 0) - m(1, 1) - m(2, 2)) * S(2);
    q = {(m(2, 1) - m(1, 2)) / s, s / S(4), (m(0, 1) + m(1, 0)) / s,
         (m(0, 2) + m(2, 0)) / s};
  } else if (m(1, 1) > m(2, 2)) {
    const S s = std::sqrt(S(1) + m(1, 1) - m(0, 0) - m(2, 2)) * S(2);
    q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, s / S(4),
         (m(1, 2) + m(2, 1)) / s};
  } else {
    const S s = std::sqrt(S(1) + m(2, 2) - m(0, 0) - m(1, 1)) * S(2);
    q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s,
         (m(1, 2) + m(2, 1)) / s, s / S(4)};
  }
  if (q.w < S(0)) q = -q;
  return q.normalized();
}

// Geodesic interpolation with hemisphere alignment; near-parallel inputs fall
// back to normalized linear interpolation.
template <class S>
Quat<S> slerp(const Quat<S>& q0, Quat<S> q1, S t) {
  S d = q0.dot(q1);
  if (d < S(0)) {
    q1 = -q1;
    d = -d;
  }
  if (d > S(1) - S(1e-7)) {
    const Quat<S> lin{q0.w + t * (q1.w - q0.w), q0.x + t * (q1.x - q0.x),
                      q0.y + t * (q1.y - q0.y), q0.z + t * (q1.z - q0.z)};
    return lin.normalized();
  }
  const S theta = std::acos(std::clamp(d, S(-1), S(1)));
  const S sin_theta = std::sin(theta);
  const S c0 = std::sin((S(1) - t) * theta) / sin_theta;
  const S c1 = std::sin(t * theta) / sin_theta;
  const Quat<S> out{c0 * q0.w + c1 * q1.w, c0 * q0.x + c1 * q1.x,
                    c0 * q0.y + c1 * q1.y, c0 * q0.z + c1 * q1.z};
  return out.normalized();
}

// Flips signs along a quaternion track so consecutive frames stay on the
// same hemisphere (q and -q encode one rotation; mixing them breaks
// interpolation and any componentwise metric).
template <class S>
void fix_quaternion_signs(std::vector<Quat<S>>& track) {
  for (std::size_t i = 1; i < track.size(); ++i)
    if (track[i].dot(track[i - 1]) < S(0)) track[i] = -track[i];
}

template <class S>
Rot6<S> slerp_rot6(const Rot6<S>& a, const Rot6<S>& b, S t) {
  const Quat<S> qa = matrix_to_quaternion(rot6_to_matrix(a));
  const Quat<S> qb = matrix_to_quaternion(rot6_to_matrix(b));
  return matrix_to_rot6(quaternion_to_matrix(slerp(qa, qb, t)));
}

}  // namespace mib
