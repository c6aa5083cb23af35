#pragma once

#include <vector>

#include "lsta/cells.hpp"
#include "lsta/pooling.hpp"
#include "lsta/synth_data.hpp"
#include "lsta/tensor.hpp"

namespace lsta {

// Two same-padded convolutions with tanh nonlinearities and a 2x average
// downsampling between them. Output depth K at half the input resolution.
struct BackboneParams {
  Tensor conv1_weight, conv1_bias;  // [K, C_in, k, k], [K]
  Tensor conv2_weight, conv2_bias;  // [K, K, k, k], [K]

  static BackboneParams init(int in_channels, int depth, int kernel, CounterRng& rng);
};

Tensor backbone_forward(const Tensor& frame, const BackboneParams& p);

struct ClassifierParams {
  Tensor weight;  // [K, L]
  Tensor bias;    // [L]

  static ClassifierParams init(int features, int classes, CounterRng& rng);
};

struct AppearanceStream {
  BackboneParams backbone;
  CellConfig cell_config;
  LSTAParams cell;
  ClassifierParams classifier;
};

struct AppearanceResult {
  Tensor logits;
  std::vector<StepTrace> traces;
};

// backbone per frame -> recurrent cell -> spatial average of the final
// memory -> linear classifier.
AppearanceResult appearance_forward(const std::vector<Tensor>& frames, const AppearanceStream& stream,
                                    const GateBiases& extra = {});

// Stand-in for an optical-flow stack: for `depth` consecutive frame pairs
// centered on `center_index`, the horizontal and vertical spatial gradients
// of the temporal difference. Output [2*depth, H, W]; channel 2i is the
// x-gradient of pair i, channel 2i+1 the y-gradient.
Tensor flow_analog(const std::vector<Tensor>& frames, int center_index, int depth = 5);

struct MotionStream {
  BackboneParams backbone;  // over the 2*depth flow channels
  PoolingModel attention;   // theta seeded from the action-pretrained head
  ClassifierParams classifier;
  bool has_embedding = false;   // ConvLSTM embedding, cross-modal variant only
  ConvLSTMParams embedding;
};

struct MotionResult {
  Tensor logits;
  Tensor attention;  // softmax-calibrated map over locations
  int category = -1;
  double margin = 0.0;
};

MotionResult motion_forward(const Tensor& flow_stack, const MotionStream& stream,
                            const Tensor& embedding_gate_bias = {});
// Same, starting from already-computed backbone features.
MotionResult motion_forward_features(const Tensor& features, const MotionStream& stream,
                                     const Tensor& embedding_gate_bias = {});

enum class CrossModalGates { all, memory_only };

// 1x1 projections from one modality's features onto the other's gate
// pre-activations, plus the 3-D summarizer of the appearance sequence.
struct CrossModalCouplers {
  Tensor attn_weight, attn_bias;      // K -> 4
  Tensor memory_weight, memory_bias;  // K -> 3K
  Tensor output_weight, output_bias;  // K -> K
  Tensor summarizer_weight, summarizer_bias;  // conv3d K -> K
  Tensor clstm_weight, clstm_bias;    // K -> 4K

  static CrossModalCouplers init(int memory_depth, int kernel_t, int kernel_s, CounterRng& rng);
};

// Flow features -> per-gate bias tensors for the appearance cell.
GateBiases crossmodal_bias_appearance(const Tensor& flow_feature, const CrossModalCouplers& couplers,
                                      CrossModalGates gates = CrossModalGates::all);

// 3-D convolution over (time, height, width) followed by a temporal mean.
Tensor summarize_rgb_sequence(const std::vector<Tensor>& features, const Tensor& kernel,
                              const Tensor& bias);

// Late average fusion of per-class scores.
Tensor two_stream_fuse(const Tensor& logits_rgb, const Tensor& logits_flow);

enum class FusionMode { late_average, cross_modal };

struct TwoStreamModel {
  AppearanceStream rgb;
  MotionStream flow;
  FusionMode mode = FusionMode::late_average;
  CrossModalGates gates = CrossModalGates::all;
  CrossModalCouplers couplers;  // unused tensors stay empty in late-average mode
};

struct TwoStreamResult {
  Tensor fused;
  Tensor logits_rgb, logits_flow;
  std::vector<StepTrace> rgb_traces;
  MotionResult flow_result;
};

struct TwoStreamInput {
  std::vector<Tensor> appearance_frames;
  Tensor flow_stack;
};

TwoStreamResult two_stream_forward(const TwoStreamInput& input, const TwoStreamModel& model);

}  // namespace lsta
