#include "lsta/config.hpp"

#include <json.hpp>

#include <stdexcept>

namespace lsta {

using nlohmann::json;

namespace {

const std::vector<Variant> kLadder = {
    Variant::baseline,         Variant::output_pooling, Variant::attention_pooling,
    Variant::pooling,          Variant::lsta,           Variant::two_stream_late,
    Variant::two_stream_crossmodal,
};

const std::vector<Variant> kSingleStream = {
    Variant::baseline, Variant::output_pooling, Variant::attention_pooling, Variant::pooling,
    Variant::lsta,
};

[[noreturn]] void bad(const std::string& msg) { throw std::invalid_argument("config: " + msg); }

class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) bad("'" + where_ + "' must be an object");
  }
  ~StrictObject() = default;

  bool has(const std::string& key) {
    seen_.push_back(key);
    return j_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      bad("'" + where_ + "." + key + "' has the wrong type");
    }
  }

  const json& raw(const std::string& key) {
    has(key);
    return j_.at(key);
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      bool known = false;
      for (const std::string& s : seen_) known = known || s == it.key();
      if (!known) bad("unknown key '" + it.key() + "' in '" + where_ + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string> seen_;
};

}  // namespace

const std::vector<Variant>& all_variants() { return kLadder; }
const std::vector<Variant>& single_stream_variants() { return kSingleStream; }

Variant parse_variant(const std::string& name) {
  std::string n = name;
  if (!n.empty() && n[0] == '+') n = n.substr(1);
  if (n == "baseline") return Variant::baseline;
  if (n == "output_pooling") return Variant::output_pooling;
  if (n == "attention_pooling") return Variant::attention_pooling;
  if (n == "pooling") return Variant::pooling;
  if (n == "lsta") return Variant::lsta;
  if (n == "two_stream_late") return Variant::two_stream_late;
  if (n == "two_stream_crossmodal") return Variant::two_stream_crossmodal;
  bad("unknown variant '" + name +
      "' (expected baseline|output_pooling|attention_pooling|pooling|lsta|two_stream_late|"
      "two_stream_crossmodal)");
}

std::string variant_key(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::output_pooling: return "output_pooling";
    case Variant::attention_pooling: return "attention_pooling";
    case Variant::pooling: return "pooling";
    case Variant::lsta: return "lsta";
    case Variant::two_stream_late: return "two_stream_late";
    case Variant::two_stream_crossmodal: return "two_stream_crossmodal";
  }
  bad("invalid variant value");
}

std::string variant_label(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::output_pooling: return "+output_pooling";
    case Variant::attention_pooling: return "+attention_pooling";
    case Variant::pooling: return "+pooling";
    case Variant::lsta: return "lsta";
    case Variant::two_stream_late: return "two_stream_late";
    case Variant::two_stream_crossmodal: return "two_stream_crossmodal";
  }
  bad("invalid variant value");
}

bool is_two_stream(Variant v) {
  return v == Variant::two_stream_late || v == Variant::two_stream_crossmodal;
}

FullConfig desk_preset() { return FullConfig{}; }

FullConfig paper_preset() {
  FullConfig c;
  c.preset = "paper";
  c.model.memory_depth = 512;
  c.model.pool_categories = 100;
  c.model.frames_per_clip = 25;
  c.train.learning_rate = 0.001;
  c.train.decay_epochs = {25, 75, 150};
  c.train.decay_factor = 0.1;
  c.train.stage1_epochs = 200;
  c.train.stage2_epochs = 100;
  c.train.batch_size = 32;
  c.train.action_pretrain_epochs = 700;
  c.train.motion_epochs = 500;
  c.train.fusion_epochs = 200;
  return c;
}

void FullConfig::validate() const {
  if (preset != "desk" && preset != "paper") bad("preset must be 'desk' or 'paper'");
  task.validate();
  if (model.memory_depth < 1) bad("model.memory_depth must be positive");
  if (model.pool_categories < 2) bad("model.pool_categories must be at least 2");
  if (model.kernel < 1 || model.kernel % 2 == 0) bad("model.kernel must be odd");
  if (model.frames_per_clip < 1 || model.frames_per_clip > task.frames)
    bad("model.frames_per_clip must be in [1, task.frames]");
  if (model.flow_depth < 1) bad("model.flow_depth must be positive");
  {
    const int center = task.frames / 2;
    const int first = center - model.flow_depth / 2;
    if (first < 0 || first + model.flow_depth + 1 > task.frames)
      bad("model.flow_depth does not fit around the clip center");
  }
  if (model.summarizer_kernel_t < 1 || model.summarizer_kernel_t > model.frames_per_clip)
    bad("model.summarizer_kernel_t must be in [1, frames_per_clip]");
  if (task.grid_h % 2 != 0 || task.grid_w % 2 != 0)
    bad("task grid extents must be even (the backbone downsamples by 2)");
  if (train.optimizer != "adam" && train.optimizer != "sgd") bad("train.optimizer must be adam or sgd");
  if (train.learning_rate <= 0.0) bad("train.learning_rate must be positive");
  if (train.decay_factor <= 0.0) bad("train.decay_factor must be positive");
  if (train.stage1_epochs < 0 || train.stage2_epochs < 0) bad("epoch counts must be non-negative");
  if (train.stage1_epochs + train.stage2_epochs < 1) bad("need at least one training epoch");
  if (train.batch_size < 1) bad("train.batch_size must be positive");
  if (train.crossmodal_gates != "all" && train.crossmodal_gates != "memory")
    bad("train.crossmodal_gates must be 'all' or 'memory'");
  if (train.action_pretrain_epochs < 0 || train.motion_epochs < 0 || train.fusion_epochs < 0)
    bad("phase epoch counts must be non-negative");
}

FullConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::parse_error& e) {
    bad(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) bad("document root must be an object");

  std::string preset = "desk";
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) bad("'preset' must be a string");
    preset = j.at("preset").get<std::string>();
  }
  FullConfig c;
  if (preset == "desk") {
    c = desk_preset();
  } else if (preset == "paper") {
    c = paper_preset();
  } else {
    bad("preset must be 'desk' or 'paper', got '" + preset + "'");
  }

  StrictObject root(j, "config");
  root.has("preset");
  if (root.has("seed")) {
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
      bad("'seed' must be an integer");
    c.seed = j.at("seed").get<uint64_t>();
  }

  if (root.has("task")) {
    StrictObject t(root.raw("task"), "task");
    t.get("grid_h", c.task.grid_h);
    t.get("grid_w", c.task.grid_w);
    t.get("channels", c.task.channels);
    t.get("actions", c.task.actions);
    t.get("objects", c.task.objects);
    t.get("distractors", c.task.distractors);
    t.get("frames", c.task.frames);
    t.get("noise_sigma", c.task.noise_sigma);
    t.get("train_per_class", c.task.train_per_class);
    t.get("test_per_class", c.task.test_per_class);
    t.finish();
  }
  if (root.has("model")) {
    StrictObject m(root.raw("model"), "model");
    m.get("memory_depth", c.model.memory_depth);
    m.get("pool_categories", c.model.pool_categories);
    m.get("kernel", c.model.kernel);
    m.get("frames_per_clip", c.model.frames_per_clip);
    m.get("flow_depth", c.model.flow_depth);
    m.get("summarizer_kernel_t", c.model.summarizer_kernel_t);
    m.finish();
  }
  if (root.has("train")) {
    StrictObject t(root.raw("train"), "train");
    t.get("optimizer", c.train.optimizer);
    t.get("learning_rate", c.train.learning_rate);
    t.get("decay_epochs", c.train.decay_epochs);
    t.get("decay_factor", c.train.decay_factor);
    t.get("stage1_epochs", c.train.stage1_epochs);
    t.get("stage2_epochs", c.train.stage2_epochs);
    t.get("batch_size", c.train.batch_size);
    if (t.has("variant")) {
      if (!root.raw("train").at("variant").is_string()) bad("'train.variant' must be a string");
      c.train.variant = parse_variant(root.raw("train").at("variant").get<std::string>());
    }
    t.get("crossmodal_gates", c.train.crossmodal_gates);
    t.get("unfreeze_backbone_in_fusion", c.train.unfreeze_backbone_in_fusion);
    t.get("action_pretrain_epochs", c.train.action_pretrain_epochs);
    t.get("motion_epochs", c.train.motion_epochs);
    t.get("fusion_epochs", c.train.fusion_epochs);
    t.finish();
  }
  root.finish();

  // The dataset seed follows the run seed unless the task overrides it.
  c.task.seed = c.seed;
  c.validate();
  return c;
}

std::string canonical_config_json(const FullConfig& c) {
  json j;
  j["preset"] = c.preset;
  j["seed"] = c.seed;
  j["task"] = {
      {"grid_h", c.task.grid_h},
      {"grid_w", c.task.grid_w},
      {"channels", c.task.channels},
      {"actions", c.task.actions},
      {"objects", c.task.objects},
      {"distractors", c.task.distractors},
      {"frames", c.task.frames},
      {"noise_sigma", c.task.noise_sigma},
      {"train_per_class", c.task.train_per_class},
      {"test_per_class", c.task.test_per_class},
  };
  j["model"] = {
      {"memory_depth", c.model.memory_depth},
      {"pool_categories", c.model.pool_categories},
      {"kernel", c.model.kernel},
      {"frames_per_clip", c.model.frames_per_clip},
      {"flow_depth", c.model.flow_depth},
      {"summarizer_kernel_t", c.model.summarizer_kernel_t},
  };
  j["train"] = {
      {"optimizer", c.train.optimizer},
      {"learning_rate", c.train.learning_rate},
      {"decay_epochs", c.train.decay_epochs},
      {"decay_factor", c.train.decay_factor},
      {"stage1_epochs", c.train.stage1_epochs},
      {"stage2_epochs", c.train.stage2_epochs},
      {"batch_size", c.train.batch_size},
      {"variant", variant_key(c.train.variant)},
      {"crossmodal_gates", c.train.crossmodal_gates},
      {"unfreeze_backbone_in_fusion", c.train.unfreeze_backbone_in_fusion},
      {"action_pretrain_epochs", c.train.action_pretrain_epochs},
      {"motion_epochs", c.train.motion_epochs},
      {"fusion_epochs", c.train.fusion_epochs},
  };
  return j.dump(2);
}

uint64_t config_hash(const FullConfig& cfg) {
  const std::string s = canonical_config_json(cfg);
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace lsta
