#include "lsta/streams.hpp"

#include <cmath>
#include <stdexcept>

namespace lsta {

namespace {

Tensor uniform_tensor(Shape shape, int fan_in, CounterRng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.next_uniform(-bound, bound);
  return t;
}

}  // namespace

BackboneParams BackboneParams::init(int in_channels, int depth, int kernel, CounterRng& rng) {
  BackboneParams p;
  p.conv1_weight = uniform_tensor({depth, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng);
  p.conv1_bias = Tensor::zeros({depth});
  p.conv2_weight = uniform_tensor({depth, depth, kernel, kernel}, depth * kernel * kernel, rng);
  p.conv2_bias = Tensor::zeros({depth});
  return p;
}

Tensor backbone_forward(const Tensor& frame, const BackboneParams& p) {
  Tensor h = tanh(conv2d_same(frame, p.conv1_weight, p.conv1_bias));
  return tanh(conv2d_same(avgpool2(h), p.conv2_weight, p.conv2_bias));
}

ClassifierParams ClassifierParams::init(int features, int classes, CounterRng& rng) {
  ClassifierParams p;
  p.weight = uniform_tensor({features, classes}, features, rng);
  p.bias = Tensor::zeros({classes});
  return p;
}

AppearanceResult appearance_forward(const std::vector<Tensor>& frames, const AppearanceStream& stream,
                                    const GateBiases& extra) {
  if (frames.empty()) throw std::invalid_argument("appearance_forward: empty frame sequence");
  std::vector<Tensor> features;
  features.reserve(frames.size());
  for (const Tensor& f : frames) features.push_back(backbone_forward(f, stream.backbone));

  const CellConfig& cc = stream.cell_config;
  SequenceResult seq = run_sequence(features, LSTAState::zeros(cc.memory_depth, cc.height, cc.width),
                                    stream.cell, cc, extra);
  Tensor logits = linear(spatial_average(seq.state.c), stream.classifier.weight, stream.classifier.bias);
  return {logits, std::move(seq.traces)};
}

Tensor flow_analog(const std::vector<Tensor>& frames, int center_index, int depth) {
  if (frames.empty()) throw std::invalid_argument("flow_analog: empty frame sequence");
  if (depth < 1) throw std::invalid_argument("flow_analog: depth must be positive");
  const int t = static_cast<int>(frames.size());
  const int first = center_index - depth / 2;
  if (first < 0 || first + depth + 1 > t)
    throw std::invalid_argument("flow_analog: window of " + std::to_string(depth) +
                                " differences around frame " + std::to_string(center_index) +
                                " exceeds the " + std::to_string(t) + "-frame clip");

  const Shape& s = frames[0].shape();
  if (s.size() != 3) throw std::invalid_argument("flow_analog: frames must be [C,H,W]");
  const int c = s[0], h = s[1], w = s[2];
  const int n = h * w;

  Tensor out = Tensor::zeros({2 * depth, h, w});
  std::vector<double> diff(static_cast<size_t>(n));
  for (int i = 0; i < depth; ++i) {
    const double* a = frames[static_cast<size_t>(first + i)].data();
    const double* b = frames[static_cast<size_t>(first + i + 1)].data();
    // channel-mean temporal difference
    for (int j = 0; j < n; ++j) {
      double s0 = 0.0;
      for (int ch = 0; ch < c; ++ch) s0 += b[static_cast<size_t>(ch) * n + j] - a[static_cast<size_t>(ch) * n + j];
      diff[j] = s0 / c;
    }
    double* gx = out.data() + static_cast<size_t>(2 * i) * n;
    double* gy = out.data() + static_cast<size_t>(2 * i + 1) * n;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double right = x + 1 < w ? diff[static_cast<size_t>(y) * w + x + 1] : 0.0;
        const double left = x - 1 >= 0 ? diff[static_cast<size_t>(y) * w + x - 1] : 0.0;
        const double below = y + 1 < h ? diff[static_cast<size_t>(y + 1) * w + x] : 0.0;
        const double above = y - 1 >= 0 ? diff[static_cast<size_t>(y - 1) * w + x] : 0.0;
        gx[static_cast<size_t>(y) * w + x] = 0.5 * (right - left);
        gy[static_cast<size_t>(y) * w + x] = 0.5 * (below - above);
      }
  }
  return out;
}

MotionResult motion_forward_features(const Tensor& features, const MotionStream& stream,
                                     const Tensor& embedding_gate_bias) {
  MotionResult r;
  Tensor cam = attention_map(features, stream.attention, &r.category);
  {
    TapeSuspend suspend;
    r.margin = selection_margin(category_scores(features, stream.attention));
  }
  r.attention = softmax_locations(cam);
  Tensor weighted = hadamard(features, r.attention);
  Tensor pooled;
  if (stream.has_embedding) {
    const int k = features.dim(0);
    ConvLSTMState st = convlstm_step(weighted, ConvLSTMState::zeros(k, features.dim(1), features.dim(2)),
                                     stream.embedding, embedding_gate_bias);
    pooled = spatial_average(st.c);
  } else {
    pooled = spatial_average(weighted);
  }
  r.logits = linear(pooled, stream.classifier.weight, stream.classifier.bias);
  return r;
}

MotionResult motion_forward(const Tensor& flow_stack, const MotionStream& stream,
                            const Tensor& embedding_gate_bias) {
  return motion_forward_features(backbone_forward(flow_stack, stream.backbone), stream,
                                 embedding_gate_bias);
}

CrossModalCouplers CrossModalCouplers::init(int memory_depth, int kernel_t, int kernel_s,
                                            CounterRng& rng) {
  const int k = memory_depth;
  CrossModalCouplers c;
  c.attn_weight = uniform_tensor({4, k, 1, 1}, k, rng);
  c.attn_bias = Tensor::zeros({4});
  c.memory_weight = uniform_tensor({3 * k, k, 1, 1}, k, rng);
  c.memory_bias = Tensor::zeros({3 * k});
  c.output_weight = uniform_tensor({k, k, 1, 1}, k, rng);
  c.output_bias = Tensor::zeros({k});
  c.summarizer_weight =
      uniform_tensor({k, k, kernel_t, kernel_s, kernel_s}, k * kernel_t * kernel_s * kernel_s, rng);
  c.summarizer_bias = Tensor::zeros({k});
  c.clstm_weight = uniform_tensor({4 * k, k, 1, 1}, k, rng);
  c.clstm_bias = Tensor::zeros({4 * k});
  return c;
}

GateBiases crossmodal_bias_appearance(const Tensor& flow_feature, const CrossModalCouplers& couplers,
                                      CrossModalGates gates) {
  if (couplers.memory_weight.empty())
    throw std::invalid_argument("crossmodal_bias_appearance: couplers are not initialized "
                                "(late-average mode has none)");
  GateBiases gb;
  gb.memory = conv2d_same(flow_feature, couplers.memory_weight, couplers.memory_bias);
  if (gates == CrossModalGates::all) {
    gb.attn = conv2d_same(flow_feature, couplers.attn_weight, couplers.attn_bias);
    gb.output = conv2d_same(flow_feature, couplers.output_weight, couplers.output_bias);
  }
  return gb;
}

Tensor summarize_rgb_sequence(const std::vector<Tensor>& features, const Tensor& kernel,
                              const Tensor& bias) {
  if (features.empty()) throw std::invalid_argument("summarize_rgb_sequence: empty feature sequence");
  if (static_cast<int>(features.size()) < kernel.dim(2))
    throw std::invalid_argument("summarize_rgb_sequence: sequence of " +
                                std::to_string(features.size()) + " frames shorter than temporal kernel " +
                                std::to_string(kernel.dim(2)));
  Tensor conv = conv3d_same_spatial(stack_frames(features), kernel, bias);
  return temporal_mean(conv);
}

Tensor two_stream_fuse(const Tensor& logits_rgb, const Tensor& logits_flow) {
  if (logits_rgb.rank() != 1 || logits_flow.rank() != 1 ||
      logits_rgb.dim(0) != logits_flow.dim(0))
    throw std::invalid_argument("two_stream_fuse: score lengths differ, " +
                                shape_str(logits_rgb.shape()) + " vs " + shape_str(logits_flow.shape()));
  return scale(add(logits_rgb, logits_flow), 0.5);
}

TwoStreamResult two_stream_forward(const TwoStreamInput& input, const TwoStreamModel& model) {
  TwoStreamResult r;
  if (model.mode == FusionMode::late_average) {
    AppearanceResult rgb = appearance_forward(input.appearance_frames, model.rgb);
    r.flow_result = motion_forward(input.flow_stack, model.flow);
    r.logits_rgb = rgb.logits;
    r.rgb_traces = std::move(rgb.traces);
  } else {
    Tensor flow_feat = backbone_forward(input.flow_stack, model.flow.backbone);
    GateBiases gb = crossmodal_bias_appearance(flow_feat, model.couplers, model.gates);

    std::vector<Tensor> features;
    features.reserve(input.appearance_frames.size());
    for (const Tensor& f : input.appearance_frames)
      features.push_back(backbone_forward(f, model.rgb.backbone));
    const CellConfig& cc = model.rgb.cell_config;
    SequenceResult seq = run_sequence(features, LSTAState::zeros(cc.memory_depth, cc.height, cc.width),
                                      model.rgb.cell, cc, gb);
    r.logits_rgb = linear(spatial_average(seq.state.c), model.rgb.classifier.weight,
                          model.rgb.classifier.bias);
    r.rgb_traces = std::move(seq.traces);

    Tensor summary = summarize_rgb_sequence(features, model.couplers.summarizer_weight,
                                            model.couplers.summarizer_bias);
    Tensor clstm_bias = conv2d_same(summary, model.couplers.clstm_weight, model.couplers.clstm_bias);
    r.flow_result = motion_forward_features(flow_feat, model.flow, clstm_bias);
  }
  r.logits_flow = r.flow_result.logits;
  r.fused = two_stream_fuse(r.logits_rgb, r.logits_flow);
  return r;
}

}  // namespace lsta
