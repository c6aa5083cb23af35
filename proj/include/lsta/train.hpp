#pragma once

#include <memory>
#include <optional>
#include <string>

#include "lsta/checkpoint.hpp"
#include "lsta/config.hpp"
#include "lsta/metrics.hpp"
#include "lsta/optim.hpp"
#include "lsta/streams.hpp"
#include "lsta/synth_data.hpp"

namespace lsta {

// A variant's full parameter set, with every tensor registered by name.
// Single-stream variants carry only the appearance stream.
struct BuiltModel {
  FullConfig config;
  AppearanceStream rgb;
  std::optional<MotionStream> flow;
  // Action-verb head used only during motion pretraining; its weights seed
  // the motion attention pool.
  std::optional<ClassifierParams> flow_action_head;
  std::optional<CrossModalCouplers> couplers;
  ParamSet params;
};

CellConfig cell_config_for(const FullConfig& cfg);
// Constructs the model, drawing every initial value from `rng` in
// registration order.
BuiltModel build_model(const FullConfig& cfg, CounterRng& rng);

// Prepared per-sample inputs.
std::vector<Tensor> appearance_input(const Dataset& ds, const ToyActivitySample& s, int frames_per_clip);
Tensor flow_input(const Dataset& ds, const ToyActivitySample& s, int flow_depth);

// Class scores for one sample under the model's variant (no recording).
Tensor model_logits(const BuiltModel& model, const Dataset& ds, const ToyActivitySample& s);

struct TrainResult {
  std::shared_ptr<BuiltModel> model;
  MetricsReport report;
  Checkpoint checkpoint;
};

// Deterministic in (config, dataset bytes). Trains the configured variant,
// evaluates on the test split and snapshots the final state.
TrainResult train(const FullConfig& cfg, const Dataset& train_set, const Dataset& test_set);

MetricsReport evaluate(const BuiltModel& model, const Dataset& test_set);

// Rebuilds a model from a checkpoint; the parameter table must match the
// embedded config's registration exactly.
std::shared_ptr<BuiltModel> model_from_checkpoint(const Checkpoint& ck);

// Errors unless hash(cfg) matches the checkpoint's config hash.
void require_matching_config(const Checkpoint& ck, const FullConfig& cfg);

}  // namespace lsta
