#pragma once

#include <string>
#include <vector>

#include "lsta/train.hpp"

namespace lsta {

// Bilinear upsampling of a [1,h,w] map to out_h x out_w (half-pixel centers,
// clamped borders).
std::vector<double> bilinear_upsample(const Tensor& map, int out_h, int out_w);

// P2 PGM, maxval 255, values round(255*(v-min)/(max-min)); a constant map
// renders mid-gray.
std::string pgm_from_map(const std::vector<double>& values, int h, int w);

// Writes attention_step##.pgm (upsampled to frame size) per time step plus
// attention.csv with one row of raw per-location probabilities per step.
void export_attention(const BuiltModel& model, const Dataset& ds, int sample_index,
                      const std::string& out_dir);

}  // namespace lsta
