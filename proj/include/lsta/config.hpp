#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsta/synth_data.hpp"

namespace lsta {

enum class Variant {
  baseline,
  output_pooling,
  attention_pooling,
  pooling,
  lsta,
  two_stream_late,
  two_stream_crossmodal,
};

// The ladder order used by ablation reports.
const std::vector<Variant>& all_variants();
const std::vector<Variant>& single_stream_variants();

Variant parse_variant(const std::string& name);  // accepts "+output_pooling" and "output_pooling"
std::string variant_key(Variant v);              // file-system friendly
std::string variant_label(Variant v);            // display form, "+" prefixed where customary
bool is_two_stream(Variant v);

struct ModelConfig {
  int memory_depth = 16;     // K
  int pool_categories = 24;  // C of the appearance pools
  int kernel = 3;
  int frames_per_clip = 8;   // T sampled from the raw clip
  int flow_depth = 5;        // differences per flow stack
  int summarizer_kernel_t = 3;
};

struct TrainSettings {
  std::string optimizer = "adam";  // adam | sgd
  double learning_rate = 0.003;
  std::vector<int> decay_epochs;  // lr *= decay_factor after each listed epoch
  double decay_factor = 0.1;
  int stage1_epochs = 8;  // cell + pooling + classifier, backbone frozen
  int stage2_epochs = 2;  // last backbone layer unfrozen
  int batch_size = 10;
  Variant variant = Variant::lsta;
  std::string crossmodal_gates = "all";  // all | memory
  bool unfreeze_backbone_in_fusion = false;
  int action_pretrain_epochs = 6;
  int motion_epochs = 6;
  int fusion_epochs = 3;
};

struct FullConfig {
  std::string preset = "desk";  // desk | paper
  uint64_t seed = 1;
  ToyTaskConfig task;
  ModelConfig model;
  TrainSettings train;

  void validate() const;
};

FullConfig desk_preset();
// The published configuration, kept for documentation; training with it
// requires the original video datasets and is refused.
FullConfig paper_preset();

// Strict parse: the document may override preset defaults; unknown keys are
// errors. Accepts an empty document.
FullConfig parse_config(const std::string& json_text);

std::string canonical_config_json(const FullConfig& cfg);
uint64_t config_hash(const FullConfig& cfg);  // FNV-1a 64 of the canonical form

}  // namespace lsta
