#pragma once

#include <vector>

#include "lsta/pooling.hpp"
#include "lsta/rng.hpp"
#include "lsta/tensor.hpp"

namespace lsta {

struct CellConfig {
  int memory_depth = 16;  // K
  int height = 8;
  int width = 8;
  int categories = 24;  // pooling category count C
  int kernel = 3;
  bool attention_pooling = false;
  bool output_pooling = false;
  bool bias_control = false;

  int locations() const { return height * width; }
  void validate() const;
};

// Gate order inside the stacked convolution: input, forget, output, candidate.
struct ConvLSTMParams {
  Tensor weight;  // [4K, K_in + K, k, k]
  Tensor bias;    // [4K]; forget block initialized to +1

  static ConvLSTMParams init(int input_depth, int memory_depth, int kernel, CounterRng& rng);
};

struct ConvLSTMState {
  Tensor c;  // [K,H,W]
  Tensor o;  // [K,H,W]

  static ConvLSTMState zeros(int memory_depth, int height, int width);
};

struct LSTAParams {
  // Attention recurrence: 2-channel input [nu_a, s(t-1) . tanh(a(t-1))],
  // four single-channel gates (input, forget, s, candidate).
  Tensor attn_weight;  // [4, 2, k, k]
  Tensor attn_bias;    // [4]
  // Memory gates: input [attended, o(t-1) . tanh(c(t-1))] of 2K channels,
  // outputs (input, forget, candidate) of K channels each.
  Tensor memory_weight;  // [3K, 2K, k, k]
  Tensor memory_bias;    // [3K]
  Tensor out_weight;     // [K, 2K, k, k]
  Tensor out_bias;       // [K]
  PoolingModel input_pool;   // selects the attention map over x
  PoolingModel output_pool;  // selects the memory filter
  BiasController bias_ctrl;  // instance-specific selector bias

  static LSTAParams init(const CellConfig& cfg, CounterRng& rng);
};

struct LSTAState {
  Tensor a;       // [1,H,W] attention memory
  Tensor s_gate;  // [1,H,W] attention output gate, entries in (0,1)
  Tensor c;       // [K,H,W]
  Tensor o;       // [K,H,W]

  static LSTAState zeros(int memory_depth, int height, int width);
};

// Optional per-position additions to the gate pre-activations (cross-modal
// coupling); empty tensors mean no bias.
struct GateBiases {
  Tensor attn;    // [4,H,W]
  Tensor memory;  // [3K,H,W]
  Tensor output;  // [K,H,W]
};

struct StepTrace {
  Tensor nu_a;   // empty when attention pooling is off
  Tensor s_map;  // probability map over locations (uniform when attention is off)
  Tensor nu_c;   // empty when output pooling is off
  Tensor attn_input_gate, attn_forget_gate, attn_candidate;
  Tensor mem_input_gate, mem_forget_gate, mem_candidate;
  int attn_category = -1;
  int out_category = -1;
  double attn_margin = 0.0;  // selector score gaps, +inf when no selection ran
  double out_margin = 0.0;
};

ConvLSTMState convlstm_step(const Tensor& x, const ConvLSTMState& state, const ConvLSTMParams& params,
                            const Tensor& extra_gate_bias = {});

struct AttentionUpdate {
  Tensor s_map;
  Tensor a;
  Tensor s_gate;
  Tensor nu_a;
  Tensor input_gate, forget_gate, candidate;
  int category = -1;
  double margin = 0.0;
};

AttentionUpdate lsta_attention_update(const Tensor& x, const LSTAState& state, const LSTAParams& params,
                                      const Tensor& extra_gate_bias = {});

struct LSTAStepResult {
  LSTAState state;
  StepTrace trace;
};

LSTAStepResult lsta_step(const Tensor& x, const LSTAState& state, const LSTAParams& params,
                         const CellConfig& cfg, const GateBiases& extra = {});

struct SequenceResult {
  LSTAState state;
  std::vector<StepTrace> traces;
};

// Folds lsta_step over the input sequence. The gate biases, when present,
// are applied at every step.
SequenceResult run_sequence(const std::vector<Tensor>& xs, LSTAState state, const LSTAParams& params,
                            const CellConfig& cfg, const GateBiases& extra = {});

ConvLSTMState run_sequence(const std::vector<Tensor>& xs, ConvLSTMState state,
                           const ConvLSTMParams& params, const Tensor& extra_gate_bias = {});

}  // namespace lsta
