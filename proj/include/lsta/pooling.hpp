#pragma once

#include "lsta/rng.hpp"
#include "lsta/tensor.hpp"

namespace lsta {

// Attention pooling: a pool of category-specific per-channel scalings
// selected by a linear classifier over spatially averaged features. The
// reduction is the spatial average, the mapping is per-channel scaling by a
// category's parameter column, and collapsing the scaled tensor over
// channels yields the class activation map of the winning category.
struct PoolingModel {
  Tensor theta;  // [K, C]

  int feature_depth() const { return theta.dim(0); }
  int categories() const { return theta.dim(1); }

  // theta ~ U[-1/sqrt(K), 1/sqrt(K)]
  static PoolingModel init(int feature_depth, int categories, CounterRng& rng);
};

// Linear regression from category-score space onto selector score biases;
// lets the attended input steer which category the output pooling picks.
struct BiasController {
  Tensor weight;  // [C, C]

  static BiasController init(int categories, CounterRng& rng);
};

// Selector scores z_c = sum_k avg(x)_k * theta[k,c] + score_bias_c.
Tensor category_scores(const Tensor& x, const PoolingModel& model, const Tensor& score_bias = {});

// Index of the maximal score; ties break to the lowest index. The selection
// itself is treated as piecewise constant: no gradient flows through it.
int select_category(const Tensor& scores);

// Gap between the winning score and the runner-up (infinity when C == 1).
double selection_margin(const Tensor& scores);

// Class activation map of the winning category: nu[i] = sum_k x[i,k] theta[k,c*].
// Differentiable w.r.t. x and the selected theta column.
Tensor attention_map(const Tensor& x, const PoolingModel& model, int* winner = nullptr);

// Full-rank variant: no channel reduction, nu[i,k] = x[i,k] theta[k,c*]. The
// optional score bias shifts only the selector.
Tensor attention_map_fullrank(const Tensor& x, const PoolingModel& model,
                              const Tensor& score_bias = {}, int* winner = nullptr);

// b = regression of the attended input's category scores:
// b[m] = sum_c (theta^T avg(attended))_c * weight[c,m].
Tensor instance_bias(const Tensor& attended_x, const PoolingModel& model, const BiasController& ctrl);

}  // namespace lsta
