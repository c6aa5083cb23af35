#pragma once

#include <cmath>
#include <vector>

#include "lsta/rng.hpp"
#include "lsta/tensor.hpp"

namespace testutil {

inline lsta::Tensor random_tensor(lsta::Shape shape, lsta::CounterRng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  lsta::Tensor t = lsta::Tensor::zeros(std::move(shape));
  for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const lsta::Tensor& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b[i]));
  return m;
}

inline double max_abs_diff(const lsta::Tensor& a, const lsta::Tensor& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  return m;
}

// max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|)
inline double max_grad_rel_err(const lsta::Tensor& analytic_holder,
                               const lsta::Tensor& numeric) {
  double m = 0.0;
  for (size_t i = 0; i < numeric.size(); ++i)
    m = std::max(m, lsta::gradcheck_rel_err(analytic_holder.grad()[i], numeric.data()[i]));
  return m;
}

}  // namespace testutil
