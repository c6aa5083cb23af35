#include "lsta/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lsta {

namespace {

void register_backbone(ParamSet& ps, BackboneParams& b, const std::string& prefix) {
  b.conv1_weight = ps.add(prefix + ".conv1.weight", b.conv1_weight);
  b.conv1_bias = ps.add(prefix + ".conv1.bias", b.conv1_bias);
  b.conv2_weight = ps.add(prefix + ".conv2.weight", b.conv2_weight);
  b.conv2_bias = ps.add(prefix + ".conv2.bias", b.conv2_bias);
}

void register_cell(ParamSet& ps, LSTAParams& c, const std::string& prefix) {
  c.attn_weight = ps.add(prefix + ".attn.weight", c.attn_weight);
  c.attn_bias = ps.add(prefix + ".attn.bias", c.attn_bias);
  c.memory_weight = ps.add(prefix + ".memory.weight", c.memory_weight);
  c.memory_bias = ps.add(prefix + ".memory.bias", c.memory_bias);
  c.out_weight = ps.add(prefix + ".out.weight", c.out_weight);
  c.out_bias = ps.add(prefix + ".out.bias", c.out_bias);
  c.input_pool.theta = ps.add(prefix + ".attention_pool.theta", c.input_pool.theta);
  c.output_pool.theta = ps.add(prefix + ".output_pool.theta", c.output_pool.theta);
  c.bias_ctrl.weight = ps.add(prefix + ".bias_control.weight", c.bias_ctrl.weight);
}

void register_classifier(ParamSet& ps, ClassifierParams& c, const std::string& prefix) {
  c.weight = ps.add(prefix + ".weight", c.weight);
  c.bias = ps.add(prefix + ".bias", c.bias);
}

// Motion backbone first layer: channel-average of the appearance first conv,
// replicated across the flow channels.
void seed_flow_conv1(BackboneParams& flow, const BackboneParams& rgb) {
  const int k_out = rgb.conv1_weight.dim(0);
  const int c_rgb = rgb.conv1_weight.dim(1);
  const int k = rgb.conv1_weight.dim(2);
  const int c_flow = flow.conv1_weight.dim(1);
  for (int o = 0; o < k_out; ++o)
    for (int y = 0; y < k; ++y)
      for (int x = 0; x < k; ++x) {
        double avg = 0.0;
        for (int c = 0; c < c_rgb; ++c)
          avg += rgb.conv1_weight.data()[((static_cast<size_t>(o) * c_rgb + c) * k + y) * k + x];
        avg /= c_rgb;
        for (int c = 0; c < c_flow; ++c)
          flow.conv1_weight.data()[((static_cast<size_t>(o) * c_flow + c) * k + y) * k + x] = avg;
      }
  for (int o = 0; o < k_out; ++o) flow.conv1_bias.data()[o] = rgb.conv1_bias.data()[o];
}

double lr_at_epoch(const TrainSettings& t, int epoch) {
  double lr = t.learning_rate;
  for (int d : t.decay_epochs)
    if (epoch > d) lr *= t.decay_factor;
  return lr;
}

void check_dataset(const FullConfig& cfg, const Dataset& ds, const char* which) {
  if (static_cast<int>(ds.actions) != cfg.task.actions ||
      static_cast<int>(ds.objects) != cfg.task.objects ||
      static_cast<int>(ds.frames) != cfg.task.frames ||
      static_cast<int>(ds.channels) != cfg.task.channels ||
      static_cast<int>(ds.grid_h) != cfg.task.grid_h || static_cast<int>(ds.grid_w) != cfg.task.grid_w)
    throw std::invalid_argument(std::string(which) +
                                " dataset header does not match the task configuration");
}

struct Fisher {
  // In-place Fisher-Yates driven by the run's generator.
  static void shuffle(std::vector<int>& idx, CounterRng& rng) {
    for (size_t i = idx.size(); i > 1; --i) {
      const size_t j = rng.next_below(i);
      std::swap(idx[i - 1], idx[j]);
    }
  }
};

void abort_on_non_finite(double loss_value, const ParamSet& params, const std::string& where) {
  if (std::isfinite(loss_value)) return;
  std::string tensor = params.first_non_finite();
  if (tensor.empty()) tensor = "(loss)";
  throw std::runtime_error("non-finite loss " + where + "; first non-finite tensor: " + tensor);
}

using Optimizer = std::pair<AdamOptimizer, SgdOptimizer>;

void optimizer_step(const FullConfig& cfg, Optimizer& opt, ParamSet& params, double lr) {
  if (cfg.train.optimizer == "adam")
    opt.first.step(params, lr);
  else
    opt.second.step(params, lr);
}

// One epoch over `order` using per-sample losses produced by `loss_fn`.
// Returns (mean loss, accuracy). loss_fn must also report whether the
// prediction was correct.
template <typename LossFn>
std::pair<double, double> run_epoch(const FullConfig& cfg, ParamSet& params, Optimizer& opt, double lr,
                                    std::vector<int>& order, CounterRng& rng, LossFn&& loss_fn,
                                    const std::string& where) {
  Fisher::shuffle(order, rng);
  double loss_sum = 0.0;
  int correct = 0;
  const int batch = cfg.train.batch_size;
  for (size_t start = 0; start < order.size(); start += batch) {
    const size_t stop = std::min(order.size(), start + batch);
    params.zero_grads();
    for (size_t i = start; i < stop; ++i) {
      Tape tape;
      auto [loss, ok] = loss_fn(order[i]);
      const double lv = loss.scalar_value();
      abort_on_non_finite(lv, params, where);
      loss_sum += lv;
      correct += ok ? 1 : 0;
      backward(loss, tape);
    }
    params.scale_grads(1.0 / static_cast<double>(stop - start));
    optimizer_step(cfg, opt, params, lr);
  }
  return {loss_sum / static_cast<double>(order.size()), correct / static_cast<double>(order.size())};
}

}  // namespace

CellConfig cell_config_for(const FullConfig& cfg) {
  CellConfig cc;
  cc.memory_depth = cfg.model.memory_depth;
  cc.height = cfg.task.grid_h / 2;
  cc.width = cfg.task.grid_w / 2;
  cc.categories = cfg.model.pool_categories;
  cc.kernel = cfg.model.kernel;
  switch (cfg.train.variant) {
    case Variant::baseline:
      break;
    case Variant::output_pooling:
      cc.output_pooling = true;
      break;
    case Variant::attention_pooling:
      cc.attention_pooling = true;
      break;
    case Variant::pooling:
      cc.attention_pooling = true;
      cc.output_pooling = true;
      break;
    case Variant::lsta:
    case Variant::two_stream_late:
    case Variant::two_stream_crossmodal:
      cc.attention_pooling = true;
      cc.output_pooling = true;
      cc.bias_control = true;
      break;
  }
  return cc;
}

BuiltModel build_model(const FullConfig& cfg, CounterRng& rng) {
  cfg.validate();
  BuiltModel m;
  m.config = cfg;

  const int k = cfg.model.memory_depth;
  const int classes = cfg.task.num_classes();

  m.rgb.backbone = BackboneParams::init(cfg.task.channels, k, cfg.model.kernel, rng);
  m.rgb.cell_config = cell_config_for(cfg);
  m.rgb.cell = LSTAParams::init(m.rgb.cell_config, rng);
  m.rgb.classifier = ClassifierParams::init(k, classes, rng);
  register_backbone(m.params, m.rgb.backbone, "rgb.backbone");
  register_cell(m.params, m.rgb.cell, "rgb.cell");
  register_classifier(m.params, m.rgb.classifier, "rgb.classifier");

  if (is_two_stream(cfg.train.variant)) {
    MotionStream flow;
    flow.backbone = BackboneParams::init(2 * cfg.model.flow_depth, k, cfg.model.kernel, rng);
    // Motion pooling categories are the action verbs; theta is overwritten at
    // the pretrain handoff.
    flow.attention = PoolingModel::init(k, std::max(2, cfg.task.actions), rng);
    flow.classifier = ClassifierParams::init(k, classes, rng);
    flow.has_embedding = cfg.train.variant == Variant::two_stream_crossmodal;
    if (flow.has_embedding) flow.embedding = ConvLSTMParams::init(k, k, cfg.model.kernel, rng);
    m.flow = std::move(flow);

    register_backbone(m.params, m.flow->backbone, "flow.backbone");
    m.flow->attention.theta = m.params.add("flow.attention.theta", m.flow->attention.theta);
    register_classifier(m.params, m.flow->classifier, "flow.classifier");
    if (m.flow->has_embedding) {
      m.flow->embedding.weight = m.params.add("flow.embedding.weight", m.flow->embedding.weight);
      m.flow->embedding.bias = m.params.add("flow.embedding.bias", m.flow->embedding.bias);
    }
    m.flow_action_head = ClassifierParams::init(k, std::max(2, cfg.task.actions), rng);
    register_classifier(m.params, *m.flow_action_head, "flow.action_head");

    if (cfg.train.variant == Variant::two_stream_crossmodal) {
      CrossModalCouplers cp = CrossModalCouplers::init(k, cfg.model.summarizer_kernel_t, 3, rng);
      m.couplers = std::move(cp);
      CrossModalCouplers& c = *m.couplers;
      c.attn_weight = m.params.add("coupler.attn.weight", c.attn_weight);
      c.attn_bias = m.params.add("coupler.attn.bias", c.attn_bias);
      c.memory_weight = m.params.add("coupler.memory.weight", c.memory_weight);
      c.memory_bias = m.params.add("coupler.memory.bias", c.memory_bias);
      c.output_weight = m.params.add("coupler.output.weight", c.output_weight);
      c.output_bias = m.params.add("coupler.output.bias", c.output_bias);
      c.summarizer_weight = m.params.add("coupler.summarizer.weight", c.summarizer_weight);
      c.summarizer_bias = m.params.add("coupler.summarizer.bias", c.summarizer_bias);
      c.clstm_weight = m.params.add("coupler.clstm.weight", c.clstm_weight);
      c.clstm_bias = m.params.add("coupler.clstm.bias", c.clstm_bias);
    }
  }
  return m;
}

std::vector<Tensor> appearance_input(const Dataset& ds, const ToyActivitySample& s,
                                     int frames_per_clip) {
  std::vector<Tensor> frames;
  frames.reserve(frames_per_clip);
  for (int idx : uniform_frame_indices(static_cast<int>(ds.frames), frames_per_clip))
    frames.push_back(sample_frame(ds, s, idx));
  return frames;
}

Tensor flow_input(const Dataset& ds, const ToyActivitySample& s, int flow_depth) {
  std::vector<Tensor> frames;
  frames.reserve(ds.frames);
  for (uint32_t t = 0; t < ds.frames; ++t) frames.push_back(sample_frame(ds, s, static_cast<int>(t)));
  return flow_analog(frames, static_cast<int>(ds.frames) / 2, flow_depth);
}

namespace {

TwoStreamModel as_two_stream(const BuiltModel& m) {
  TwoStreamModel ts;
  ts.rgb = m.rgb;
  ts.flow = *m.flow;
  ts.mode = m.config.train.variant == Variant::two_stream_crossmodal ? FusionMode::cross_modal
                                                                     : FusionMode::late_average;
  ts.gates = m.config.train.crossmodal_gates == "memory" ? CrossModalGates::memory_only
                                                         : CrossModalGates::all;
  if (m.couplers) ts.couplers = *m.couplers;
  return ts;
}

Tensor forward_logits(const BuiltModel& model, const Dataset& ds, const ToyActivitySample& s) {
  const FullConfig& cfg = model.config;
  if (!is_two_stream(cfg.train.variant)) {
    return appearance_forward(appearance_input(ds, s, cfg.model.frames_per_clip), model.rgb).logits;
  }
  TwoStreamInput in{appearance_input(ds, s, cfg.model.frames_per_clip),
                    flow_input(ds, s, cfg.model.flow_depth)};
  return two_stream_forward(in, as_two_stream(model)).fused;
}

}  // namespace

Tensor model_logits(const BuiltModel& model, const Dataset& ds, const ToyActivitySample& s) {
  TapeSuspend suspend;
  return forward_logits(model, ds, s);
}

MetricsReport evaluate(const BuiltModel& model, const Dataset& test_set) {
  TapeSuspend suspend;
  const FullConfig& cfg = model.config;
  check_dataset(cfg, test_set, "test");
  MetricsReport r;
  r.num_classes = cfg.task.num_classes();
  r.test_count = static_cast<int>(test_set.samples.size());
  r.confusion.assign(static_cast<size_t>(r.num_classes) * r.num_classes, 0);

  int n_act = 0, n_obj = 0, n_all = 0;
  for (const ToyActivitySample& s : test_set.samples) {
    Tensor logits = forward_logits(model, test_set, s);
    int pred = 0;
    for (int i = 1; i < logits.dim(0); ++i)
      if (logits.data()[i] > logits.data()[pred]) pred = i;
    const int truth = s.activity_id(cfg.task.objects);
    r.confusion[static_cast<size_t>(truth) * r.num_classes + pred] += 1;
    const auto [pa, po] = decompose_prediction(pred, cfg.task);
    if (pa == s.action_id) ++n_act;
    if (po == s.object_id) ++n_obj;
    if (pred == truth) ++n_all;
  }
  const double inv = r.test_count > 0 ? 1.0 / r.test_count : 0.0;
  r.activity_accuracy = n_all * inv;
  r.action_accuracy = n_act * inv;
  r.object_accuracy = n_obj * inv;
  return r;
}

namespace {

void set_single_stream_trainable(BuiltModel& m, bool stage2) {
  m.params.set_trainable_all(false);
  for (const char* name :
       {"rgb.cell.attn.weight", "rgb.cell.attn.bias", "rgb.cell.memory.weight", "rgb.cell.memory.bias",
        "rgb.cell.out.weight", "rgb.cell.out.bias", "rgb.cell.attention_pool.theta",
        "rgb.cell.output_pool.theta", "rgb.cell.bias_control.weight", "rgb.classifier.weight",
        "rgb.classifier.bias"})
    m.params.set_trainable(name, true);
  if (stage2) {
    m.params.set_trainable("rgb.backbone.conv2.weight", true);
    m.params.set_trainable("rgb.backbone.conv2.bias", true);
  }
}

void train_appearance_phase(const FullConfig& cfg, BuiltModel& m, const Dataset& train_set,
                            CounterRng& rng, Optimizer& opt, MetricsReport& report) {
  std::vector<int> order(train_set.samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  const int total = cfg.train.stage1_epochs + cfg.train.stage2_epochs;
  for (int epoch = 1; epoch <= total; ++epoch) {
    const bool stage2 = epoch > cfg.train.stage1_epochs;
    set_single_stream_trainable(m, stage2);
    const double lr = lr_at_epoch(cfg.train, epoch);
    auto loss_fn = [&](int idx) {
      const ToyActivitySample& s = train_set.samples[static_cast<size_t>(idx)];
      const int label = s.activity_id(cfg.task.objects);
      Tensor logits =
          appearance_forward(appearance_input(train_set, s, cfg.model.frames_per_clip), m.rgb).logits;
      int pred = 0;
      for (int i = 1; i < logits.dim(0); ++i)
        if (logits.data()[i] > logits.data()[pred]) pred = i;
      return std::make_pair(cross_entropy(logits, label), pred == label);
    };
    auto [loss, acc] = run_epoch(cfg, m.params, opt, lr, order, rng, loss_fn,
                                 "in epoch " + std::to_string(epoch));
    report.phase.push_back(stage2 ? "rgb.stage2" : "rgb.stage1");
    report.epoch_loss.push_back(loss);
    report.epoch_accuracy.push_back(acc);
  }
}

void train_motion_phases(const FullConfig& cfg, BuiltModel& m, const Dataset& train_set,
                         CounterRng& rng, Optimizer& opt, MetricsReport& report) {
  MotionStream& flow = *m.flow;
  seed_flow_conv1(flow.backbone, m.rgb.backbone);

  // Action pretraining: spatially averaged features into the action head.
  ClassifierParams& head = *m.flow_action_head;

  std::vector<int> order(train_set.samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.train.action_pretrain_epochs; ++epoch) {
    m.params.set_trainable_all(false);
    for (const char* name : {"flow.backbone.conv1.weight", "flow.backbone.conv1.bias",
                             "flow.backbone.conv2.weight", "flow.backbone.conv2.bias",
                             "flow.action_head.weight", "flow.action_head.bias"})
      m.params.set_trainable(name, true);
    const double lr = lr_at_epoch(cfg.train, epoch);
    auto loss_fn = [&](int idx) {
      const ToyActivitySample& s = train_set.samples[static_cast<size_t>(idx)];
      Tensor feat = backbone_forward(flow_input(train_set, s, cfg.model.flow_depth), flow.backbone);
      Tensor logits = linear(spatial_average(feat), head.weight, head.bias);
      int pred = 0;
      for (int i = 1; i < logits.dim(0); ++i)
        if (logits.data()[i] > logits.data()[pred]) pred = i;
      return std::make_pair(cross_entropy(logits, s.action_id), pred == s.action_id);
    };
    auto [loss, acc] = run_epoch(cfg, m.params, opt, lr, order, rng, loss_fn,
                                 "in action pretraining epoch " + std::to_string(epoch));
    report.phase.push_back("flow.pretrain");
    report.epoch_loss.push_back(loss);
    report.epoch_accuracy.push_back(acc);
  }

  // Attention pooling starts from the action head's weights.
  std::copy(head.weight.data(), head.weight.data() + head.weight.size(), flow.attention.theta.data());
  report.action_pretrained = cfg.train.action_pretrain_epochs > 0;

  for (int epoch = 1; epoch <= cfg.train.motion_epochs; ++epoch) {
    m.params.set_trainable_all(false);
    for (const char* name : {"flow.attention.theta", "flow.classifier.weight", "flow.classifier.bias"})
      m.params.set_trainable(name, true);
    if (flow.has_embedding) {
      m.params.set_trainable("flow.embedding.weight", true);
      m.params.set_trainable("flow.embedding.bias", true);
    }
    const double lr = lr_at_epoch(cfg.train, epoch);
    auto loss_fn = [&](int idx) {
      const ToyActivitySample& s = train_set.samples[static_cast<size_t>(idx)];
      const int label = s.activity_id(cfg.task.objects);
      Tensor logits = motion_forward(flow_input(train_set, s, cfg.model.flow_depth), flow).logits;
      int pred = 0;
      for (int i = 1; i < logits.dim(0); ++i)
        if (logits.data()[i] > logits.data()[pred]) pred = i;
      return std::make_pair(cross_entropy(logits, label), pred == label);
    };
    auto [loss, acc] = run_epoch(cfg, m.params, opt, lr, order, rng, loss_fn,
                                 "in motion epoch " + std::to_string(epoch));
    report.phase.push_back("flow.activity");
    report.epoch_loss.push_back(loss);
    report.epoch_accuracy.push_back(acc);
  }
}

void train_fusion_phase(const FullConfig& cfg, BuiltModel& m, const Dataset& train_set,
                        CounterRng& rng, Optimizer& opt, MetricsReport& report) {
  std::vector<int> order(train_set.samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 1; epoch <= cfg.train.fusion_epochs; ++epoch) {
    m.params.set_trainable_all(false);
    for (const NamedParam& p : m.params) {
      const bool coupler = p.name.rfind("coupler.", 0) == 0;
      const bool cell_or_head = p.name.rfind("rgb.cell.", 0) == 0 ||
                                p.name.rfind("rgb.classifier.", 0) == 0 ||
                                p.name == "flow.attention.theta" ||
                                p.name.rfind("flow.classifier.", 0) == 0 ||
                                p.name.rfind("flow.embedding.", 0) == 0;
      const bool backbone = p.name.rfind("rgb.backbone.", 0) == 0 ||
                            p.name.rfind("flow.backbone.", 0) == 0;
      if (coupler || cell_or_head || (backbone && cfg.train.unfreeze_backbone_in_fusion))
        m.params.set_trainable(p.name, true);
    }
    const double lr = lr_at_epoch(cfg.train, epoch);
    auto loss_fn = [&](int idx) {
      const ToyActivitySample& s = train_set.samples[static_cast<size_t>(idx)];
      const int label = s.activity_id(cfg.task.objects);
      TwoStreamInput in{appearance_input(train_set, s, cfg.model.frames_per_clip),
                        flow_input(train_set, s, cfg.model.flow_depth)};
      Tensor logits = two_stream_forward(in, as_two_stream(m)).fused;
      int pred = 0;
      for (int i = 1; i < logits.dim(0); ++i)
        if (logits.data()[i] > logits.data()[pred]) pred = i;
      return std::make_pair(cross_entropy(logits, label), pred == label);
    };
    auto [loss, acc] = run_epoch(cfg, m.params, opt, lr, order, rng, loss_fn,
                                 "in fusion epoch " + std::to_string(epoch));
    report.phase.push_back("fusion");
    report.epoch_loss.push_back(loss);
    report.epoch_accuracy.push_back(acc);
  }
}

}  // namespace

TrainResult train(const FullConfig& cfg, const Dataset& train_set, const Dataset& test_set) {
  cfg.validate();
  if (cfg.preset == "paper")
    throw std::invalid_argument(
        "the paper preset documents the published configuration; training it requires the original "
        "video datasets, which are not part of this artifact");
  check_dataset(cfg, train_set, "train");
  check_dataset(cfg, test_set, "test");

  CounterRng rng(cfg.seed);
  TrainResult r;
  r.model = std::make_shared<BuiltModel>(build_model(cfg, rng));
  BuiltModel& m = *r.model;
  Optimizer opt;

  train_appearance_phase(cfg, m, train_set, rng, opt, r.report);
  if (is_two_stream(cfg.train.variant)) {
    train_motion_phases(cfg, m, train_set, rng, opt, r.report);
    if (cfg.train.variant == Variant::two_stream_crossmodal)
      train_fusion_phase(cfg, m, train_set, rng, opt, r.report);
  }

  MetricsReport eval = evaluate(m, test_set);
  eval.phase = r.report.phase;
  eval.epoch_loss = r.report.epoch_loss;
  eval.epoch_accuracy = r.report.epoch_accuracy;
  eval.action_pretrained = r.report.action_pretrained;
  r.report = eval;

  r.checkpoint.config_hash = config_hash(cfg);
  r.checkpoint.config_json = canonical_config_json(cfg);
  r.checkpoint.epoch = static_cast<uint32_t>(r.report.epoch_loss.size());
  r.checkpoint.rng_state = rng.state();
  for (const NamedParam& p : m.params)
    r.checkpoint.params.emplace_back(p.name, p.tensor.clone());
  if (cfg.train.optimizer == "adam") {
    r.checkpoint.opt_state = opt.first.state(m.params);
    r.checkpoint.opt_steps = opt.first.steps();
  }
  return r;
}

std::shared_ptr<BuiltModel> model_from_checkpoint(const Checkpoint& ck) {
  const FullConfig cfg = parse_config(ck.config_json);
  CounterRng rng(cfg.seed);
  auto model = std::make_shared<BuiltModel>(build_model(cfg, rng));
  if (ck.params.size() != model->params.size())
    throw std::runtime_error("checkpoint parameter table does not match the model (" +
                             std::to_string(ck.params.size()) + " vs " +
                             std::to_string(model->params.size()) + " tensors)");
  for (size_t i = 0; i < ck.params.size(); ++i) {
    const auto& [name, tensor] = ck.params[i];
    NamedParam& p = model->params[i];
    if (p.name != name)
      throw std::runtime_error("checkpoint tensor '" + name + "' does not match expected '" + p.name +
                               "'");
    if (p.tensor.shape() != tensor.shape())
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               shape_str(tensor.shape()) + ", expected " + shape_str(p.tensor.shape()));
    std::copy(tensor.data(), tensor.data() + tensor.size(), p.tensor.data());
  }
  return model;
}

void require_matching_config(const Checkpoint& ck, const FullConfig& cfg) {
  if (ck.config_hash != config_hash(cfg))
    throw std::invalid_argument(
        "checkpoint was trained under a different configuration (config hash mismatch)");
}

}  // namespace lsta
