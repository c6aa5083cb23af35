#include "lsta/gradcheck.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lsta {

using nlohmann::json;

std::string GradCheckReport::to_json() const {
  json j;
  j["variant"] = variant;
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  j["step"] = step;
  j["pass"] = pass;
  json entries_j = json::array();
  for (const GradCheckEntry& e : entries)
    entries_j.push_back({{"tensor", e.tensor}, {"max_rel_err", e.max_rel_err}, {"pass", e.pass}});
  j["tensors"] = entries_j;
  return j.dump(2);
}

namespace {

constexpr double kMinMargin = 1e-3;

FullConfig tiny_config(Variant variant, uint64_t seed) {
  FullConfig c;
  c.seed = seed;
  c.task.grid_h = 8;
  c.task.grid_w = 8;
  c.task.actions = 2;
  c.task.objects = 3;
  c.task.distractors = 1;
  c.task.frames = 8;
  c.task.train_per_class = 1;
  c.task.test_per_class = 1;
  c.task.seed = seed;
  c.model.memory_depth = 3;
  c.model.pool_categories = 4;
  c.model.frames_per_clip = 3;
  c.model.flow_depth = 2;
  c.model.summarizer_kernel_t = 2;
  c.train.variant = variant;
  return c;
}

// Smallest selector margin seen anywhere in the forward pass; a strict
// argmax keeps finite differences from flipping the selection.
double min_selection_margin(const BuiltModel& m, const Dataset& ds, const ToyActivitySample& s) {
  TapeSuspend suspend;
  const FullConfig& cfg = m.config;
  double margin = std::numeric_limits<double>::infinity();
  if (!is_two_stream(cfg.train.variant)) {
    AppearanceResult r =
        appearance_forward(appearance_input(ds, s, cfg.model.frames_per_clip), m.rgb);
    for (const StepTrace& t : r.traces)
      margin = std::min({margin, t.attn_margin, t.out_margin});
    return margin;
  }
  TwoStreamModel ts;
  ts.rgb = m.rgb;
  ts.flow = *m.flow;
  ts.mode = cfg.train.variant == Variant::two_stream_crossmodal ? FusionMode::cross_modal
                                                                : FusionMode::late_average;
  if (m.couplers) ts.couplers = *m.couplers;
  TwoStreamInput in{appearance_input(ds, s, cfg.model.frames_per_clip),
                    flow_input(ds, s, cfg.model.flow_depth)};
  TwoStreamResult r = two_stream_forward(in, ts);
  for (const StepTrace& t : r.rgb_traces) margin = std::min({margin, t.attn_margin, t.out_margin});
  margin = std::min(margin, r.flow_result.margin);
  return margin;
}

}  // namespace

GradCheckFixture make_gradcheck_fixture(Variant variant, uint64_t seed) {
  // Deterministic reseed until every selection has a comfortable margin.
  for (uint64_t attempt = 0; attempt < 32; ++attempt) {
    const uint64_t s = seed + attempt;
    GradCheckFixture f;
    f.config = tiny_config(variant, s);
    auto [train_split, test_split] = generate_dataset(f.config.task);
    f.data = std::move(train_split);
    CounterRng rng(s);
    f.model = std::make_shared<BuiltModel>(build_model(f.config, rng));
    f.model->params.set_trainable_all(true);

    const ToyActivitySample& sample = f.data.samples.at(0);
    if (min_selection_margin(*f.model, f.data, sample) < kMinMargin) continue;

    auto model = f.model;
    auto* data = &f.data;
    const FullConfig cfg = f.config;
    f.loss = [model, data, cfg]() {
      const ToyActivitySample& s0 = data->samples.at(0);
      const int label = s0.activity_id(cfg.task.objects);
      Tensor logits;
      if (!is_two_stream(cfg.train.variant)) {
        logits = appearance_forward(appearance_input(*data, s0, cfg.model.frames_per_clip),
                                    model->rgb)
                     .logits;
      } else {
        TwoStreamModel ts;
        ts.rgb = model->rgb;
        ts.flow = *model->flow;
        ts.mode = cfg.train.variant == Variant::two_stream_crossmodal ? FusionMode::cross_modal
                                                                      : FusionMode::late_average;
        if (model->couplers) ts.couplers = *model->couplers;
        TwoStreamInput in{appearance_input(*data, s0, cfg.model.frames_per_clip),
                          flow_input(*data, s0, cfg.model.flow_depth)};
        logits = two_stream_forward(in, ts).fused;
      }
      return cross_entropy(logits, label).scalar_value();
    };
    return f;
  }
  throw std::runtime_error("gradcheck: could not find a strict-margin fixture near seed " +
                           std::to_string(seed));
}

std::vector<std::vector<double>> analytic_gradients(const GradCheckFixture& f) {
  ParamSet& params = f.model->params;
  params.zero_grads();
  {
    Tape tape;
    const ToyActivitySample& s0 = f.data.samples.at(0);
    const int label = s0.activity_id(f.config.task.objects);
    Tensor logits;
    if (!is_two_stream(f.config.train.variant)) {
      logits = appearance_forward(appearance_input(f.data, s0, f.config.model.frames_per_clip),
                                  f.model->rgb)
                   .logits;
    } else {
      TwoStreamModel ts;
      ts.rgb = f.model->rgb;
      ts.flow = *f.model->flow;
      ts.mode = f.config.train.variant == Variant::two_stream_crossmodal ? FusionMode::cross_modal
                                                                         : FusionMode::late_average;
      if (f.model->couplers) ts.couplers = *f.model->couplers;
      TwoStreamInput in{appearance_input(f.data, s0, f.config.model.frames_per_clip),
                        flow_input(f.data, s0, f.config.model.flow_depth)};
      logits = two_stream_forward(in, ts).fused;
    }
    backward(cross_entropy(logits, label), tape);
  }
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const NamedParam& p : params)
    out.emplace_back(p.tensor.grad(), p.tensor.grad() + p.tensor.size());
  return out;
}

std::vector<std::vector<double>> numeric_gradients(const GradCheckFixture& f, double h) {
  std::vector<std::vector<double>> out;
  out.reserve(f.model->params.size());
  for (NamedParam& p : f.model->params) {
    Tensor g = finite_diff_grad(f.loss, p.tensor, h);
    out.emplace_back(g.data(), g.data() + g.size());
  }
  return out;
}

GradCheckReport compare_gradients(const GradCheckFixture& f,
                                  const std::vector<std::vector<double>>& analytic,
                                  const std::vector<std::vector<double>>& numeric, double tolerance,
                                  double h) {
  GradCheckReport r;
  r.variant = variant_key(f.config.train.variant);
  r.seed = f.config.seed;
  r.tolerance = tolerance;
  r.step = h;
  for (size_t i = 0; i < f.model->params.size(); ++i) {
    GradCheckEntry e;
    e.tensor = f.model->params[i].name;
    for (size_t j = 0; j < analytic[i].size(); ++j)
      e.max_rel_err = std::max(e.max_rel_err, gradcheck_rel_err(analytic[i][j], numeric[i][j]));
    e.pass = e.max_rel_err <= tolerance;
    r.pass = r.pass && e.pass;
    r.entries.push_back(std::move(e));
  }
  return r;
}

GradCheckReport gradcheck_variant(const std::string& variant, uint64_t seed) {
  GradCheckFixture f = make_gradcheck_fixture(parse_variant(variant), seed);
  const double h = 1e-5;
  auto analytic = analytic_gradients(f);
  auto numeric = numeric_gradients(f, h);
  return compare_gradients(f, analytic, numeric, 1e-5, h);
}

}  // namespace lsta
