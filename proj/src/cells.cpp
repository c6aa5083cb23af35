#include "lsta/cells.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace lsta {

namespace {

Tensor uniform_conv_weight(Shape shape, CounterRng& rng) {
  Tensor w = Tensor::zeros(shape);
  const int fan_in = shape[1] * shape[2] * shape[3];
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.next_uniform(-bound, bound);
  return w;
}

}  // namespace

void CellConfig::validate() const {
  if (memory_depth < 1 || height < 1 || width < 1)
    throw std::invalid_argument("CellConfig: extents must be positive");
  if (categories < 2) throw std::invalid_argument("CellConfig: need at least 2 pooling categories");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("CellConfig: kernel size must be odd, got " + std::to_string(kernel));
  if (bias_control && !output_pooling)
    throw std::invalid_argument("CellConfig: bias control requires output pooling");
}

ConvLSTMParams ConvLSTMParams::init(int input_depth, int memory_depth, int kernel, CounterRng& rng) {
  ConvLSTMParams p;
  p.weight = uniform_conv_weight({4 * memory_depth, input_depth + memory_depth, kernel, kernel}, rng);
  p.bias = Tensor::zeros({4 * memory_depth});
  for (int i = memory_depth; i < 2 * memory_depth; ++i) p.bias.data()[i] = 1.0;
  return p;
}

ConvLSTMState ConvLSTMState::zeros(int memory_depth, int height, int width) {
  return {Tensor::zeros({memory_depth, height, width}), Tensor::zeros({memory_depth, height, width})};
}

LSTAParams LSTAParams::init(const CellConfig& cfg, CounterRng& rng) {
  cfg.validate();
  const int k = cfg.memory_depth;
  LSTAParams p;
  p.attn_weight = uniform_conv_weight({4, 2, cfg.kernel, cfg.kernel}, rng);
  p.attn_bias = Tensor::zeros({4});
  p.attn_bias.data()[1] = 1.0;
  p.memory_weight = uniform_conv_weight({3 * k, 2 * k, cfg.kernel, cfg.kernel}, rng);
  p.memory_bias = Tensor::zeros({3 * k});
  for (int i = k; i < 2 * k; ++i) p.memory_bias.data()[i] = 1.0;
  p.out_weight = uniform_conv_weight({k, 2 * k, cfg.kernel, cfg.kernel}, rng);
  p.out_bias = Tensor::zeros({k});
  p.input_pool = PoolingModel::init(k, cfg.categories, rng);
  p.output_pool = PoolingModel::init(k, cfg.categories, rng);
  p.bias_ctrl = BiasController::init(cfg.categories, rng);
  return p;
}

LSTAState LSTAState::zeros(int memory_depth, int height, int width) {
  return {Tensor::zeros({1, height, width}), Tensor::zeros({1, height, width}),
          Tensor::zeros({memory_depth, height, width}), Tensor::zeros({memory_depth, height, width})};
}

ConvLSTMState convlstm_step(const Tensor& x, const ConvLSTMState& state, const ConvLSTMParams& params,
                            const Tensor& extra_gate_bias) {
  const int k = state.c.dim(0);
  Tensor hidden = hadamard(state.o, tanh(state.c));
  Tensor z = conv2d_same(concat_channels(x, hidden), params.weight, params.bias, extra_gate_bias);
  Tensor gate_i = sigmoid(slice_channels(z, 0, k));
  Tensor gate_f = sigmoid(slice_channels(z, k, k));
  Tensor gate_o = sigmoid(slice_channels(z, 2 * k, k));
  Tensor cand = tanh(slice_channels(z, 3 * k, k));
  Tensor c = add(hadamard(gate_f, state.c), hadamard(gate_i, cand));
  return {c, gate_o};
}

AttentionUpdate lsta_attention_update(const Tensor& x, const LSTAState& state, const LSTAParams& params,
                                      const Tensor& extra_gate_bias) {
  AttentionUpdate u;
  {
    TapeSuspend suspend;
    Tensor scores = category_scores(x, params.input_pool);
    u.category = select_category(scores);
    u.margin = selection_margin(scores);
  }
  u.nu_a = channel_sum(scale_channels(x, matrix_column(params.input_pool.theta, u.category)));

  Tensor hidden = hadamard(state.s_gate, tanh(state.a));
  Tensor z = conv2d_same(concat_channels(u.nu_a, hidden), params.attn_weight, params.attn_bias,
                         extra_gate_bias);
  u.input_gate = sigmoid(slice_channels(z, 0, 1));
  u.forget_gate = sigmoid(slice_channels(z, 1, 1));
  u.s_gate = sigmoid(slice_channels(z, 2, 1));
  u.candidate = tanh(slice_channels(z, 3, 1));
  u.a = add(hadamard(u.forget_gate, state.a), hadamard(u.input_gate, u.candidate));
  u.s_map = softmax_locations(add(u.nu_a, hadamard(u.s_gate, tanh(u.a))));
  return u;
}

LSTAStepResult lsta_step(const Tensor& x, const LSTAState& state, const LSTAParams& params,
                         const CellConfig& cfg, const GateBiases& extra) {
  cfg.validate();
  if (x.rank() != 3 || x.dim(0) != cfg.memory_depth || x.dim(1) != cfg.height || x.dim(2) != cfg.width)
    throw std::invalid_argument("lsta_step: input " + shape_str(x.shape()) + " does not match cell " +
                                shape_str({cfg.memory_depth, cfg.height, cfg.width}));

  LSTAStepResult r;
  Tensor attended;
  if (cfg.attention_pooling) {
    AttentionUpdate u = lsta_attention_update(x, state, params, extra.attn);
    r.state.a = u.a;
    r.state.s_gate = u.s_gate;
    r.trace.nu_a = u.nu_a;
    r.trace.s_map = u.s_map;
    r.trace.attn_input_gate = u.input_gate;
    r.trace.attn_forget_gate = u.forget_gate;
    r.trace.attn_candidate = u.candidate;
    r.trace.attn_category = u.category;
    r.trace.attn_margin = u.margin;
    attended = hadamard(x, u.s_map);
  } else {
    // Identity filtering: the uniform map has value 1 at every location, so
    // the multiply is skipped. The trace still reports the nominal uniform
    // attention distribution.
    r.state.a = state.a;
    r.state.s_gate = state.s_gate;
    r.trace.s_map = Tensor::full({1, cfg.height, cfg.width}, 1.0 / cfg.locations());
    r.trace.attn_margin = std::numeric_limits<double>::infinity();
    attended = x;
  }

  const int k = cfg.memory_depth;
  Tensor hidden = hadamard(state.o, tanh(state.c));
  Tensor z = conv2d_same(concat_channels(attended, hidden), params.memory_weight, params.memory_bias,
                         extra.memory);
  r.trace.mem_input_gate = sigmoid(slice_channels(z, 0, k));
  r.trace.mem_forget_gate = sigmoid(slice_channels(z, k, k));
  r.trace.mem_candidate = tanh(slice_channels(z, 2 * k, k));
  r.state.c = add(hadamard(r.trace.mem_forget_gate, state.c),
                  hadamard(r.trace.mem_input_gate, r.trace.mem_candidate));

  Tensor out_input;
  if (cfg.output_pooling) {
    Tensor score_bias;
    if (cfg.bias_control) {
      TapeSuspend suspend;  // the bias shifts only the piecewise-constant selector
      score_bias = instance_bias(attended, params.output_pool, params.bias_ctrl);
    }
    {
      TapeSuspend suspend;
      Tensor scores = category_scores(r.state.c, params.output_pool, score_bias);
      r.trace.out_category = select_category(scores);
      r.trace.out_margin = selection_margin(scores);
    }
    r.trace.nu_c = scale_channels(r.state.c, matrix_column(params.output_pool.theta, r.trace.out_category));
    out_input = hadamard(r.trace.nu_c, r.state.c);
  } else {
    r.trace.out_margin = std::numeric_limits<double>::infinity();
    out_input = attended;
  }
  Tensor zo = conv2d_same(concat_channels(out_input, hidden), params.out_weight, params.out_bias,
                          extra.output);
  r.state.o = sigmoid(zo);
  return r;
}

SequenceResult run_sequence(const std::vector<Tensor>& xs, LSTAState state, const LSTAParams& params,
                            const CellConfig& cfg, const GateBiases& extra) {
  if (xs.empty()) throw std::invalid_argument("run_sequence: empty input sequence");
  SequenceResult r;
  r.traces.reserve(xs.size());
  for (const Tensor& x : xs) {
    LSTAStepResult step = lsta_step(x, state, params, cfg, extra);
    state = step.state;
    r.traces.push_back(std::move(step.trace));
  }
  r.state = std::move(state);
  return r;
}

ConvLSTMState run_sequence(const std::vector<Tensor>& xs, ConvLSTMState state,
                           const ConvLSTMParams& params, const Tensor& extra_gate_bias) {
  if (xs.empty()) throw std::invalid_argument("run_sequence: empty input sequence");
  for (const Tensor& x : xs) state = convlstm_step(x, state, params, extra_gate_bias);
  return state;
}

}  // namespace lsta
