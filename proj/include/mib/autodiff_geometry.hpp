#pragma once

#include <cstdint>
#include <vector>

#include "mib/skeleton.hpp"
#include "mib/tensor.hpp"

// Geometry expressed through autograd ops so gradients flow from losses on
// global positions/rotations back into the network outputs (the FK pass sits
// between the decoder and every loss term).

namespace mib {

// [N,6] ortho6D rows -> [N,3,3] rotation matrices, columns [Rx Ry Rz].
template <class S>
Tensor<S> rot6_to_matrix_rows(const Tensor<S>& r) {
  if (r.rank() != 2 || r.shape()[1] != 6)
    throw ShapeError("rot6_to_matrix_rows: expects [N,6], got " + shape_str(r.shape()));
  const auto a = slice(r, 1, 0, 3);
  const auto b = slice(r, 1, 3, 3);
  const auto rx = normalize_rows(a);
  const auto rz = normalize_rows(cross_rows(rx, b));
  const auto ry = cross_rows(rz, rx);
  const std::int64_t n = r.shape()[0];
  // interleave as columns: out[n, row, col] with col 0 = rx, 1 = ry, 2 = rz
  const auto cx = reshape(rx, {n, 3, 1});
  const auto cy = reshape(ry, {n, 3, 1});
  const auto cz = reshape(rz, {n, 3, 1});
  return concat<S>({cx, cy, cz}, 2);
}

// [N,3,3] -> [N,6]: first two columns stacked.
template <class S>
Tensor<S> matrix_to_rot6_rows(const Tensor<S>& m) {
  if (m.rank() != 3 || m.shape()[1] != 3 || m.shape()[2] != 3)
    throw ShapeError("matrix_to_rot6_rows: expects [N,3,3], got " + shape_str(m.shape()));
  const std::int64_t n = m.shape()[0];
  const auto c0 = reshape(slice(m, 2, 0, 1), {n, 3});
  const auto c1 = reshape(slice(m, 2, 1, 1), {n, 3});
  return concat<S>({c0, c1}, 1);
}

namespace detail {

// One Shepperd branch on gathered rows. `flat` is [n,9] in row-major
// (m00 m01 m02 m10 m11 m12 m20 m21 m22); returns [n,4] (w x y z).
template <class S>
Tensor<S> quat_branch(const Tensor<S>& flat, int branch) {
  const auto e = [&](int i) { return slice(flat, 1, i, 1); };  // [n,1]
  const auto m00 = e(0), m01 = e(1), m02 = e(2);
  const auto m10 = e(3), m11 = e(4), m12 = e(5);
  const auto m20 = e(6), m21 = e(7), m22 = e(8);
  Tensor<S> s, w, x, y, z;
  switch (branch) {
    case 0:
      s = scalar_mul(mib::sqrt(add_scalar(add(add(m00, m11), m22), S(1))), S(2));
      w = scalar_mul(s, S(0.25));
      x = divide(sub(m21, m12), s);
      y = divide(sub(m02, m20), s);
      z = divide(sub(m10, m01), s);
      break;
    case 1:
      s = scalar_mul(mib::sqrt(add_scalar(sub(sub(m00, m11), m22), S(1))), S(2));
      w = divide(sub(m21, m12), s);
      x = scalar_mul(s, S(0.25));
      y = divide(add(m01, m10), s);
      z = divide(add(m02, m20), s);
      break;
    case 2:
      s = scalar_mul(mib::sqrt(add_scalar(sub(sub(m11, m00), m22), S(1))), S(2));
      w = divide(sub(m02, m20), s);
      x = divide(add(m01, m10), s);
      y = scalar_mul(s, S(0.25));
      z = divide(add(m12, m21), s);
      break;
    default:
      s = scalar_mul(mib::sqrt(add_scalar(sub(sub(m22, m00), m11), S(1))), S(2));
      w = divide(sub(m10, m01), s);
      x = divide(add(m02, m20), s);
      y = divide(add(m12, m21), s);
      z = scalar_mul(s, S(0.25));
  }
  return concat<S>({w, x, y, z}, 1);
}

}  // namespace detail

// [N,3,3] rotation matrices -> [N,4] unit quaternions (w x y z), w >= 0.
// Branch choice per row comes from forward values (matches the plain
// conversion); gradients flow through the chosen branch's formula.
template <class S>
Tensor<S> matrix_to_quaternion_rows(const Tensor<S>& m) {
  if (m.rank() != 3 || m.shape()[1] != 3 || m.shape()[2] != 3)
    throw ShapeError("matrix_to_quaternion_rows: expects [N,3,3], got " +
                     shape_str(m.shape()));
  const std::int64_t n = m.shape()[0];
  const auto flat = reshape(m, {n, 9});
  const auto& v = flat.values();
  std::vector<std::vector<std::int64_t>> groups(4);
  for (std::int64_t r = 0; r < n; ++r) {
    const S m00 = v[r * 9 + 0], m11 = v[r * 9 + 4], m22 = v[r * 9 + 8];
    const S tr = m00 + m11 + m22;
    int branch;
    if (tr > m00 && tr > m11 && tr > m22)
      branch = 0;
    else if (m00 > m11 && m00 > m22)
      branch = 1;
    else if (m11 > m22)
      branch = 2;
    else
      branch = 3;
    groups[branch].push_back(r);
  }
  std::vector<Tensor<S>> parts;
  std::vector<std::int64_t> order;
  for (int b = 0; b < 4; ++b) {
    if (groups[b].empty()) continue;
    parts.push_back(detail::quat_branch(gather_rows(flat, groups[b]), b));
    order.insert(order.end(), groups[b].begin(), groups[b].end());
  }
  auto stacked = parts.size() == 1 ? parts[0] : concat<S>(parts, 0);
  std::vector<std::int64_t> inverse(n);
  for (std::int64_t i = 0; i < n; ++i) inverse[order[i]] = i;
  auto q = gather_rows(stacked, inverse);
  // canonical hemisphere: flip rows whose w came out negative (constant mask)
  auto sign = Tensor<S>::zeros({n, 4});
  bool any_flip = false;
  for (std::int64_t r = 0; r < n; ++r) {
    const S s = q.values()[r * 4] < S(0) ? S(-1) : S(1);
    any_flip = any_flip || s < S(0);
    for (int i = 0; i < 4; ++i) sign.values_mut()[r * 4 + i] = s;
  }
  if (any_flip) q = mul(q, sign);
  return normalize_rows(q);
}

// Batched FK over frames. rootPos is [T,3]; rot6 is [T,J,6] with the root's
// rotation already global. Outputs global positions [T,J,3] and rotation
// matrices [T,J,3,3].
template <class S>
struct FkOut {
  Tensor<S> pos;
  Tensor<S> rot;
};

template <class S>
FkOut<S> fk(const Skeleton& skel, const Tensor<S>& root_pos, const Tensor<S>& rot6) {
  const int j = skel.joint_count();
  if (root_pos.rank() != 2 || root_pos.shape()[1] != 3)
    throw ShapeError("fk: root positions must be [T,3], got " +
                     shape_str(root_pos.shape()));
  if (rot6.rank() != 3 || rot6.shape()[1] != j || rot6.shape()[2] != 6)
    throw ShapeError("fk: rotations must be [T," + std::to_string(j) +
                     ",6], got " + shape_str(rot6.shape()));
  const std::int64_t t = rot6.shape()[0];
  if (root_pos.shape()[0] != t)
    throw ShapeError("fk: frame counts differ: " + shape_str(root_pos.shape()) +
                     " vs " + shape_str(rot6.shape()));

  const auto mats = rot6_to_matrix_rows(reshape(rot6, {t * j, 6}));  // [T*J,3,3]
  const auto mats_flat = reshape(mats, {t, j, 9});
  std::vector<Tensor<S>> local(j);
  for (int k = 0; k < j; ++k)
    local[k] = reshape(slice(mats_flat, 1, k, 1), {t, 3, 3});

  std::vector<Tensor<S>> gpos(j), grot(j);
  gpos[0] = root_pos;
  grot[0] = local[0];
  for (int k = 1; k < j; ++k) {
    const int p = skel.parents[k];
    const auto& o = skel.offsets[k];
    auto off = Tensor<S>::from_values(
        {3, 1}, {static_cast<S>(o.x()), static_cast<S>(o.y()), static_cast<S>(o.z())});
    gpos[k] = add(gpos[p], reshape(matmul(grot[p], off), {t, 3}));
    grot[k] = matmul(grot[p], local[k]);
  }

  std::vector<Tensor<S>> pos_parts, rot_parts;
  for (int k = 0; k < j; ++k) {
    pos_parts.push_back(reshape(gpos[k], {t, 1, 3}));
    rot_parts.push_back(reshape(grot[k], {t, 1, 9}));
  }
  FkOut<S> out;
  out.pos = concat<S>(pos_parts, 1);
  out.rot = reshape(concat<S>(rot_parts, 1), {t, j, 3, 3});
  return out;
}

}  // namespace mib
