#pragma once

// Central-difference gradient checking in double precision. Used by the op
// tests and the end-to-end model test: run the graph analytically once, then
// wiggle each input element by +/-h and compare.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mib/rng.hpp"
#include "mib/tensor.hpp"

namespace mibtest {

using mib::Tensor;
using mib::TensorD;

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;  // "input i element j: analytic vs numeric"
};

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
}

// f maps the inputs to a scalar tensor. All inputs are treated as leaves that
// require gradients.
inline GradCheck gradcheck(
    const std::function<TensorD(const std::vector<TensorD>&)>& f,
    std::vector<TensorD> inputs, double h = 1e-5) {
  for (auto& t : inputs) t.set_requires_grad(true);
  TensorD loss = f(inputs);
  mib::backward(loss);

  GradCheck res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& analytic = inputs[i].grad();
    for (std::size_t j = 0; j < analytic.size(); ++j) {
      const double saved = inputs[i].values()[j];
      double fp, fm;
      {
        mib::NoGrad ng;
        inputs[i].values_mut()[j] = saved + h;
        fp = f(inputs).item();
        inputs[i].values_mut()[j] = saved - h;
        fm = f(inputs).item();
        inputs[i].values_mut()[j] = saved;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double e = rel_err(analytic[j], numeric);
      if (e > res.max_rel_err) {
        res.max_rel_err = e;
        res.worst = "input " + std::to_string(i) + " elem " + std::to_string(j) +
                    ": analytic " + std::to_string(analytic[j]) + " vs numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return res;
}

// Random tensor with entries away from common kinks (|x| in [0.2, 1.2]).
inline TensorD random_tensor(mib::Rng& rng, mib::Shape shape, bool signed_vals = true) {
  auto t = TensorD::zeros(shape);
  for (auto& v : t.values_mut()) {
    const double mag = 0.2 + rng.uniform();
    v = (signed_vals && rng.uniform() < 0.5) ? -mag : mag;
  }
  return t;
}

}  // namespace mibtest
