#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lsta/rng.hpp"
#include "lsta/tensor.hpp"

namespace lsta {

// Toy activity task: every clip shows one target glyph (the object) executing
// a motion pattern (the action) among static distractor glyphs, under i.i.d.
// Gaussian pixel noise. activity = action * objects + object.
struct ToyTaskConfig {
  int grid_h = 16;
  int grid_w = 16;
  int channels = 1;
  int actions = 4;      // hold, stir, drag, shake
  int objects = 5;      // glyph shapes, equal pixel mass
  int distractors = 2;  // static non-target glyphs per clip
  int frames = 16;      // raw frames per clip
  double noise_sigma = 0.05;
  int train_per_class = 40;
  int test_per_class = 10;
  uint64_t seed = 1;

  int num_classes() const { return actions * objects; }
  void validate() const;
};

struct BBox {
  uint16_t x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BBox&) const = default;
};

struct ToyActivitySample {
  uint16_t action_id = 0;
  uint16_t object_id = 0;
  std::vector<BBox> track;    // per raw frame, tight box of the target glyph
  std::vector<float> frames;  // [T_raw, C, H, W] row-major

  int activity_id(int objects) const { return action_id * objects + object_id; }
};

struct Dataset {
  // Header fields; serialization keeps exactly these.
  uint32_t actions = 0, objects = 0, frames = 0, channels = 0, grid_h = 0, grid_w = 0;
  std::vector<ToyActivitySample> samples;

  int num_classes() const { return static_cast<int>(actions * objects); }
  size_t frame_values() const { return static_cast<size_t>(channels) * grid_h * grid_w; }
};

const char* action_name(int action_id);
const char* object_name(int object_id);
std::string activity_name(int activity_id, int objects);

// Deterministic in cfg.seed; the train split is drawn first, then the test
// split, from one generator stream. Samples are ordered by (activity, index).
std::pair<Dataset, Dataset> generate_dataset(const ToyTaskConfig& cfg);

std::pair<int, int> decompose_prediction(int activity_id, const ToyTaskConfig& cfg);
std::pair<int, int> decompose_prediction(int activity_id, int actions, int objects);

void write_dataset(const std::string& path, const Dataset& dataset);
Dataset read_dataset(const std::string& path);

// Frame t of a sample as a [C,H,W] tensor.
Tensor sample_frame(const Dataset& ds, const ToyActivitySample& s, int t);
// Indices of `count` frames uniformly sampled from the raw clip.
std::vector<int> uniform_frame_indices(int raw_frames, int count);

}  // namespace lsta
