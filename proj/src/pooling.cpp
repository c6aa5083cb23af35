#include "lsta/pooling.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lsta {

PoolingModel PoolingModel::init(int feature_depth, int categories, CounterRng& rng) {
  if (feature_depth < 1 || categories < 2)
    throw std::invalid_argument("PoolingModel: need K >= 1 and C >= 2");
  PoolingModel m;
  m.theta = Tensor::zeros({feature_depth, categories});
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_depth));
  for (size_t i = 0; i < m.theta.size(); ++i) m.theta.data()[i] = rng.next_uniform(-bound, bound);
  return m;
}

BiasController BiasController::init(int categories, CounterRng& rng) {
  BiasController c;
  c.weight = Tensor::zeros({categories, categories});
  const double bound = 1.0 / std::sqrt(static_cast<double>(categories));
  for (size_t i = 0; i < c.weight.size(); ++i) c.weight.data()[i] = rng.next_uniform(-bound, bound);
  return c;
}

Tensor category_scores(const Tensor& x, const PoolingModel& model, const Tensor& score_bias) {
  if (x.rank() != 3 || x.dim(0) != model.feature_depth())
    throw std::invalid_argument("category_scores: features " + shape_str(x.shape()) +
                                " do not match theta " + shape_str(model.theta.shape()));
  if (!score_bias.empty() && !(score_bias.rank() == 1 && score_bias.dim(0) == model.categories()))
    throw std::invalid_argument("category_scores: score bias must be [" +
                                std::to_string(model.categories()) + "], got " +
                                shape_str(score_bias.shape()));
  return linear(spatial_average(x), model.theta, score_bias);
}

int select_category(const Tensor& scores) {
  if (scores.rank() != 1 || scores.dim(0) < 1)
    throw std::invalid_argument("select_category: expected a non-empty score vector");
  int best = 0;
  const double* v = scores.data();
  for (int c = 1; c < scores.dim(0); ++c)
    if (v[c] > v[best]) best = c;
  return best;
}

double selection_margin(const Tensor& scores) {
  const int c = scores.dim(0);
  if (c < 2) return std::numeric_limits<double>::infinity();
  const int win = select_category(scores);
  const double* v = scores.data();
  double runner = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < c; ++i)
    if (i != win) runner = std::max(runner, v[i]);
  return v[win] - runner;
}

Tensor attention_map(const Tensor& x, const PoolingModel& model, int* winner) {
  int c_star;
  {
    TapeSuspend suspend;  // selection is value-only
    c_star = select_category(category_scores(x, model));
  }
  if (winner) *winner = c_star;
  return channel_sum(scale_channels(x, matrix_column(model.theta, c_star)));
}

Tensor attention_map_fullrank(const Tensor& x, const PoolingModel& model,
                              const Tensor& score_bias, int* winner) {
  int c_star;
  {
    TapeSuspend suspend;
    c_star = select_category(category_scores(x, model, score_bias));
  }
  if (winner) *winner = c_star;
  return scale_channels(x, matrix_column(model.theta, c_star));
}

Tensor instance_bias(const Tensor& attended_x, const PoolingModel& model, const BiasController& ctrl) {
  Tensor scores = linear(spatial_average(attended_x), model.theta);
  return linear(scores, ctrl.weight);
}

}  // namespace lsta
