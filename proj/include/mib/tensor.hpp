#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mib/errors.hpp"

// Reverse-mode autodiff over dense row-major tensors, templated on scalar so
// the same graph runs in float for training and in double for gradient
// checks. Eigen backs the matrix products; everything else is plain loops
// with a fixed (sequential) reduction order so forward results are bitwise
// reproducible.

namespace mib {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

namespace detail {
inline thread_local int no_grad_depth = 0;
}

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// RAII guard: suppresses graph recording (inference / data preparation).
struct NoGrad {
  NoGrad() { ++detail::no_grad_depth; }
  ~NoGrad() { --detail::no_grad_depth; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

template <class S>
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until backward touches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // accumulates this->grad into parents

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
      if (grad.empty()) grad.assign(value.size(), S(0));
    }
    void accumulate(const std::vector<S>& g) {
      ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from_values(std::move(shape), {}, requires_grad, true);
  }

  static Tensor full(Shape shape, S v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor scalar(S v) { return from_values({}, {v}); }

  static Tensor from_values(Shape shape, std::vector<S> vals,
                            bool requires_grad = false, bool fill_zero = false) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    const std::int64_t count = shape_numel(n->shape);
    if (fill_zero) {
      n->value.assign(static_cast<std::size_t>(count), S(0));
    } else {
      if (static_cast<std::int64_t>(vals.size()) != count)
        throw ShapeError("tensor init: " + std::to_string(vals.size()) +
                         " values for shape " + shape_str(n->shape));
      n->value = std::move(vals);
    }
    n->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return node_->numel(); }
  std::int64_t extent(int axis) const { return node_->shape[static_cast<std::size_t>(axis)]; }

  const std::vector<S>& values() const { return node_->value; }
  std::vector<S>& values_mut() { return node_->value; }

  S item() const {
    if (numel() != 1)
      throw ContractError("item(): tensor " + shape_str(shape()) + " is not scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) {
    if (rg && node_->backprop)
      throw ContractError("set_requires_grad: not a leaf tensor");
    node_->requires_grad = rg;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty())
      throw ContractError("grad(): no gradient recorded for this tensor");
    return node_->grad;
  }
  std::vector<S>& grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  // Value copy detached from any graph.
  Tensor detached() const { return from_values(shape(), values()); }

  template <class T>
  Tensor<T> cast() const {
    std::vector<T> v(values().size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(values()[i]);
    return Tensor<T>::from_values(shape(), std::move(v));
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

namespace detail {

template <class S>
using NodePtr = std::shared_ptr<typename Tensor<S>::Node>;

// Attaches a backward closure when recording is active and some input needs
// gradients. `parents` must list every tensor the closure accumulates into.
template <class S>
void record(Tensor<S>& out, std::vector<NodePtr<S>> parents,
            std::function<void()> backprop) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (!needs || !grad_enabled()) return;
  auto n = out.node();
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backprop = std::move(backprop);
}

template <class S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise suite
// ---------------------------------------------------------------------------

// add: same-shape, or row-broadcast of a rank-1 bias over the last axis.
template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const bool bias_case = b.rank() == 1 && a.rank() >= 2 &&
                         a.shape().back() == b.shape()[0] && a.shape() != b.shape();
  if (!bias_case) detail::check_same_shape("add", a, b);
  auto out = Tensor<S>::zeros(a.shape());
  const auto& av = a.values();
  const auto& bv = b.values();
  auto& ov = out.values_mut();
  if (bias_case) {
    const std::int64_t d = b.numel();
    for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[i % d];
  } else {
    for (std::int64_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[i];
  }
  auto an = a.node(), bn = b.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an, bn}, [an, bn, on, bias_case]() {
    if (an->requires_grad) an->accumulate(on->grad);
    if (bn->requires_grad) {
      if (bias_case) {
        bn->ensure_grad();
        const std::int64_t d = bn->numel();
        for (std::int64_t i = 0; i < on->numel(); ++i) bn->grad[i % d] += on->grad[i];
      } else {
        bn->accumulate(on->grad);
      }
    }
  });
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.values_mut()[i] = a.values()[i] - b.values()[i];
  auto an = a.node(), bn = b.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an, bn}, [an, bn, on]() {
    if (an->requires_grad) an->accumulate(on->grad);
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t i = 0; i < on->numel(); ++i) bn->grad[i] -= on->grad[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.values_mut()[i] = a.values()[i] * b.values()[i];
  auto an = a.node(), bn = b.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an, bn}, [an, bn, on]() {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::int64_t i = 0; i < on->numel(); ++i)
        an->grad[i] += on->grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t i = 0; i < on->numel(); ++i)
        bn->grad[i] += on->grad[i] * an->value[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> divide(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("divide", a, b);
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.values_mut()[i] = a.values()[i] / b.values()[i];
  auto an = a.node(), bn = b.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an, bn}, [an, bn, on]() {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::int64_t i = 0; i < on->numel(); ++i)
        an->grad[i] += on->grad[i] / bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::int64_t i = 0; i < on->numel(); ++i)
        bn->grad[i] -= on->grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
    }
  });
  return out;
}

template <class S>
Tensor<S> scalar_mul(const Tensor<S>& a, S c) {
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.values_mut()[i] = a.values()[i] * c;
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on, c]() {
    an->ensure_grad();
    for (std::int64_t i = 0; i < on->numel(); ++i) an->grad[i] += on->grad[i] * c;
  });
  return out;
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.values_mut()[i] = a.values()[i] + c;
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on]() { an->accumulate(on->grad); });
  return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.values_mut()[i] = a.values()[i] > S(0) ? a.values()[i] : S(0);
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on]() {
    an->ensure_grad();
    for (std::int64_t i = 0; i < on->numel(); ++i)
      if (an->value[i] > S(0)) an->grad[i] += on->grad[i];
  });
  return out;
}

template <class S>
Tensor<S> sqrt(const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.values_mut()[i] = std::sqrt(a.values()[i]);
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on]() {
    an->ensure_grad();
    for (std::int64_t i = 0; i < on->numel(); ++i)
      an->grad[i] += on->grad[i] / (S(2) * on->value[i]);
  });
  return out;
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <class S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return scalar_mul(a, c); }

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  auto out = Tensor<S>::from_values(std::move(shape), a.values());
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on]() { an->accumulate(on->grad); });
  return out;
}

namespace detail {
inline int normalize_axis(int axis, int rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError(std::string(op) + ": axis out of range for rank " +
                     std::to_string(rank));
  return axis;
}
}  // namespace detail

template <class S>
Tensor<S> slice(const Tensor<S>& a, int axis, std::int64_t start, std::int64_t len) {
  axis = detail::normalize_axis(axis, a.rank(), "slice");
  const Shape& sh = a.shape();
  if (start < 0 || len < 0 || start + len > sh[axis])
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside axis " +
                     std::to_string(axis) + " of " + shape_str(sh));
  Shape osh = sh;
  osh[axis] = len;
  auto out = Tensor<S>::zeros(osh);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= sh[i];
  const std::int64_t n = sh[axis];
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t j = 0; j < len; ++j)
      std::copy_n(a.values().begin() + ((o * n + start + j) * inner), inner,
                  out.values_mut().begin() + ((o * len + j) * inner));
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on, outer, inner, n, len, start]() {
    an->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t j = 0; j < len; ++j) {
        const S* src = on->grad.data() + (o * len + j) * inner;
        S* dst = an->grad.data() + (o * n + start + j) * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
  });
  return out;
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const int rank = parts[0].rank();
  axis = detail::normalize_axis(axis, rank, "concat");
  Shape osh = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank)
      throw ShapeError("concat: rank mismatch " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    for (int i = 0; i < rank; ++i)
      if (i != axis && p.shape()[i] != osh[i])
        throw ShapeError("concat: shape mismatch " + shape_str(osh) + " vs " +
                         shape_str(p.shape()));
    total += p.shape()[axis];
  }
  osh[axis] = total;
  auto out = Tensor<S>::zeros(osh);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= osh[i];
  for (int i = axis + 1; i < rank; ++i) inner *= osh[i];
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t n = p.shape()[axis];
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(p.values().begin() + o * n * inner, n * inner,
                  out.values_mut().begin() + (o * total + off) * inner);
    off += n;
  }
  std::vector<detail::NodePtr<S>> pn;
  pn.reserve(parts.size());
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    pn.push_back(p.node());
    extents.push_back(p.shape()[axis]);
  }
  auto* on = out.node().get();
  detail::record<S>(out, pn, [pn, on, extents, outer, inner, total]() {
    std::int64_t off2 = 0;
    for (std::size_t k = 0; k < pn.size(); ++k) {
      const std::int64_t n = extents[k];
      if (pn[k]->requires_grad) {
        pn[k]->ensure_grad();
        for (std::int64_t o = 0; o < outer; ++o) {
          const S* src = on->grad.data() + (o * total + off2) * inner;
          S* dst = pn[k]->grad.data() + o * n * inner;
          for (std::int64_t i = 0; i < n * inner; ++i) dst[i] += src[i];
        }
      }
      off2 += n;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  S acc(0);
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += a.values()[i];
  const S inv = S(1) / static_cast<S>(a.numel());
  auto out = Tensor<S>::scalar(acc * inv);
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on, inv]() {
    an->ensure_grad();
    const S g = on->grad[0] * inv;
    for (auto& gi : an->grad) gi += g;
  });
  return out;
}

// L1 norm over the last axis: [..., d] -> [...]. sign(0) treated as 0.
template <class S>
Tensor<S> l1_norm_lastaxis(const Tensor<S>& a) {
  if (a.rank() < 1) throw ShapeError("l1_norm_lastaxis: rank-0 input");
  const std::int64_t d = a.shape().back();
  const std::int64_t rows = a.numel() / d;
  Shape osh(a.shape().begin(), a.shape().end() - 1);
  auto out = Tensor<S>::zeros(osh);
  for (std::int64_t r = 0; r < rows; ++r) {
    S acc(0);
    for (std::int64_t i = 0; i < d; ++i) acc += std::abs(a.values()[r * d + i]);
    out.values_mut()[r] = acc;
  }
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on, d, rows]() {
    an->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t i = 0; i < d; ++i) {
        const S v = an->value[r * d + i];
        if (v > S(0))
          an->grad[r * d + i] += on->grad[r];
        else if (v < S(0))
          an->grad[r * d + i] -= on->grad[r];
      }
  });
  return out;
}

// ---------------------------------------------------------------------------
// matmul / transpose
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapMat = Eigen::Map<RowMat<S>>;
template <class S>
using CMapMat = Eigen::Map<const RowMat<S>>;
}  // namespace detail

// Matrix product over the last two axes. Supported leading-extent patterns:
// [m,k]x[k,n], [B,m,k]x[B,k,n] and [B,m,k]x[k,n] (shared right operand).
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  const int ra = a.rank(), rb = b.rank();
  const bool ok = (ra == 2 && rb == 2) || (ra == 3 && rb == 3) || (ra == 3 && rb == 2);
  if (!ok)
    throw ShapeError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::int64_t m = a.shape()[ra - 2], k = a.shape()[ra - 1];
  const std::int64_t k2 = b.shape()[rb - 2], n = b.shape()[rb - 1];
  if (k != k2)
    throw ShapeError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  std::int64_t batch = 1;
  if (ra == 3) {
    batch = a.shape()[0];
    if (rb == 3 && b.shape()[0] != batch)
      throw ShapeError("matmul: batch extents differ " + shape_str(a.shape()) +
                       " x " + shape_str(b.shape()));
  }
  Shape osh = ra == 3 ? Shape{batch, m, n} : Shape{m, n};
  auto out = Tensor<S>::zeros(osh);
  const bool b_shared = (rb == 2);
  for (std::int64_t bi = 0; bi < batch; ++bi) {
    detail::CMapMat<S> A(a.values().data() + bi * m * k, m, k);
    detail::CMapMat<S> B(b.values().data() + (b_shared ? 0 : bi * k * n), k, n);
    detail::MapMat<S> C(out.values_mut().data() + bi * m * n, m, n);
    C.noalias() = A * B;
  }
  auto an = a.node(), bn = b.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an, bn}, [an, bn, on, batch, m, k, n, b_shared]() {
    for (std::int64_t bi = 0; bi < batch; ++bi) {
      detail::CMapMat<S> A(an->value.data() + bi * m * k, m, k);
      detail::CMapMat<S> B(bn->value.data() + (b_shared ? 0 : bi * k * n), k, n);
      detail::CMapMat<S> G(on->grad.data() + bi * m * n, m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        detail::MapMat<S> dA(an->grad.data() + bi * m * k, m, k);
        dA.noalias() += G * B.transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::MapMat<S> dB(bn->grad.data() + (b_shared ? 0 : bi * k * n), k, n);
        dB.noalias() += A.transpose() * G;
      }
    }
  });
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose: expects rank-2, got " + shape_str(a.shape()));
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  auto out = Tensor<S>::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out.values_mut()[j * m + i] = a.values()[i * n + j];
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on, m, n]() {
    an->ensure_grad();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        an->grad[i * n + j] += on->grad[j * m + i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// softmax / layernorm
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  axis = detail::normalize_axis(axis, a.rank(), "softmax");
  const Shape& sh = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sh[i];
  for (int i = axis + 1; i < a.rank(); ++i) inner *= sh[i];
  const std::int64_t n = sh[axis];
  auto out = Tensor<S>::zeros(sh);
  const auto& av = a.values();
  auto& ov = out.values_mut();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const auto at = [&](std::int64_t j) { return (o * n + j) * inner + i; };
      S mx = av[at(0)];
      for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, av[at(j)]);
      S denom(0);
      for (std::int64_t j = 0; j < n; ++j) {
        const S e = std::exp(av[at(j)] - mx);
        ov[at(j)] = e;
        denom += e;
      }
      for (std::int64_t j = 0; j < n; ++j) ov[at(j)] /= denom;
    }
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on, outer, inner, n]() {
    an->ensure_grad();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t i = 0; i < inner; ++i) {
        const auto at = [&](std::int64_t j) { return (o * n + j) * inner + i; };
        S dot(0);
        for (std::int64_t j = 0; j < n; ++j) dot += on->grad[at(j)] * on->value[at(j)];
        for (std::int64_t j = 0; j < n; ++j)
          an->grad[at(j)] += on->value[at(j)] * (on->grad[at(j)] - dot);
      }
  });
  return out;
}

// Normalizes over the last axis, then applies the affine gain/bias.
template <class S>
Tensor<S> layernorm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                    S eps = S(1e-5)) {
  const std::int64_t d = x.shape().back();
  if (gain.rank() != 1 || gain.numel() != d || bias.rank() != 1 || bias.numel() != d)
    throw ShapeError("layernorm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last axis of " +
                     shape_str(x.shape()));
  const std::int64_t rows = x.numel() / d;
  auto out = Tensor<S>::zeros(x.shape());
  std::vector<S> inv_std(rows), xhat(x.numel());
  for (std::int64_t r = 0; r < rows; ++r) {
    const S* xr = x.values().data() + r * d;
    S mu(0);
    for (std::int64_t i = 0; i < d; ++i) mu += xr[i];
    mu /= static_cast<S>(d);
    S var(0);
    for (std::int64_t i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<S>(d);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::int64_t i = 0; i < d; ++i) {
      const S h = (xr[i] - mu) * is;
      xhat[r * d + i] = h;
      out.values_mut()[r * d + i] = h * gain.values()[i] + bias.values()[i];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  auto* on = out.node().get();
  detail::record<S>(out, {xn, gn, bn},
                    [xn, gn, bn, on, rows, d, inv_std = std::move(inv_std),
                     xhat = std::move(xhat)]() {
    for (std::int64_t r = 0; r < rows; ++r) {
      const S* g = on->grad.data() + r * d;
      const S* h = xhat.data() + r * d;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (std::int64_t i = 0; i < d; ++i) gn->grad[i] += g[i] * h[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t i = 0; i < d; ++i) bn->grad[i] += g[i];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        S mean_hg(0), mean_hgh(0);
        for (std::int64_t i = 0; i < d; ++i) {
          const S hg = g[i] * gn->value[i];
          mean_hg += hg;
          mean_hgh += hg * h[i];
        }
        mean_hg /= static_cast<S>(d);
        mean_hgh /= static_cast<S>(d);
        for (std::int64_t i = 0; i < d; ++i) {
          const S hg = g[i] * gn->value[i];
          xn->grad[r * d + i] += inv_std[r] * (hg - mean_hg - h[i] * mean_hgh);
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Gather / row geometry primitives
// ---------------------------------------------------------------------------

// Row lookup into a [M, D] table; backward scatter-adds (embedding lookup).
template <class S>
Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<std::int64_t>& idx) {
  if (table.rank() != 2)
    throw ShapeError("gather_rows: expects rank-2 table, got " + shape_str(table.shape()));
  const std::int64_t mrows = table.shape()[0], d = table.shape()[1];
  for (auto i : idx)
    if (i < 0 || i >= mrows)
      throw ContractError("gather_rows: index " + std::to_string(i) +
                          " outside table " + shape_str(table.shape()));
  auto out = Tensor<S>::zeros({static_cast<std::int64_t>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(table.values().begin() + idx[r] * d, d,
                out.values_mut().begin() + static_cast<std::int64_t>(r) * d);
  auto tn = table.node();
  auto* on = out.node().get();
  detail::record<S>(out, {tn}, [tn, on, idx, d]() {
    tn->ensure_grad();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::int64_t i = 0; i < d; ++i)
        tn->grad[idx[r] * d + i] += on->grad[static_cast<std::int64_t>(r) * d + i];
  });
  return out;
}

// Row-wise L2 normalization of a [N, D] tensor.
template <class S>
Tensor<S> normalize_rows(const Tensor<S>& a, S eps = S(1e-8)) {
  if (a.rank() != 2)
    throw ShapeError("normalize_rows: expects rank-2, got " + shape_str(a.shape()));
  const std::int64_t n = a.shape()[0], d = a.shape()[1];
  auto out = Tensor<S>::zeros(a.shape());
  std::vector<S> inv_norm(n);
  for (std::int64_t r = 0; r < n; ++r) {
    S sq(0);
    for (std::int64_t i = 0; i < d; ++i) sq += a.values()[r * d + i] * a.values()[r * d + i];
    const S norm = std::sqrt(sq);
    if (!(norm > eps))
      throw DegeneracyError("normalize_rows: row " + std::to_string(r) +
                            " has near-zero norm");
    inv_norm[r] = S(1) / norm;
    for (std::int64_t i = 0; i < d; ++i)
      out.values_mut()[r * d + i] = a.values()[r * d + i] * inv_norm[r];
  }
  auto an = a.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an}, [an, on, n, d, inv_norm = std::move(inv_norm)]() {
    an->ensure_grad();
    for (std::int64_t r = 0; r < n; ++r) {
      S dot(0);
      for (std::int64_t i = 0; i < d; ++i)
        dot += on->grad[r * d + i] * on->value[r * d + i];
      for (std::int64_t i = 0; i < d; ++i)
        an->grad[r * d + i] +=
            inv_norm[r] * (on->grad[r * d + i] - on->value[r * d + i] * dot);
    }
  });
  return out;
}

// Row-wise 3D cross product of two [N, 3] tensors.
// grad_a = b x g, grad_b = g x a (scalar triple product identities).
template <class S>
Tensor<S> cross_rows(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("cross_rows", a, b);
  if (a.rank() != 2 || a.shape()[1] != 3)
    throw ShapeError("cross_rows: expects [N,3], got " + shape_str(a.shape()));
  const std::int64_t n = a.shape()[0];
  auto out = Tensor<S>::zeros(a.shape());
  const auto cross3 = [](const S* u, const S* v, S* w) {
    w[0] = u[1] * v[2] - u[2] * v[1];
    w[1] = u[2] * v[0] - u[0] * v[2];
    w[2] = u[0] * v[1] - u[1] * v[0];
  };
  for (std::int64_t r = 0; r < n; ++r)
    cross3(a.values().data() + r * 3, b.values().data() + r * 3,
           out.values_mut().data() + r * 3);
  auto an = a.node(), bn = b.node();
  auto* on = out.node().get();
  detail::record<S>(out, {an, bn}, [an, bn, on, n, cross3]() {
    S tmp[3];
    for (std::int64_t r = 0; r < n; ++r) {
      const S* g = on->grad.data() + r * 3;
      if (an->requires_grad) {
        an->ensure_grad();
        cross3(bn->value.data() + r * 3, g, tmp);
        for (int i = 0; i < 3; ++i) an->grad[r * 3 + i] += tmp[i];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        cross3(g, an->value.data() + r * 3, tmp);
        for (int i = 0; i < 3; ++i) bn->grad[r * 3 + i] += tmp[i];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <class S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw ContractError("backward: loss must be scalar, got " +
                        shape_str(loss.shape()));
  using Node = typename Tensor<S>::Node;
  // Iterative post-order DFS gives reverse topological order on reversal.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* next = node->parents[child++].get();
      if (visited.insert(next).second) stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop();
  }
}

}  // namespace mib
