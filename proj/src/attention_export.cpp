#include "lsta/attention_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lsta {

namespace fs = std::filesystem;

std::vector<double> bilinear_upsample(const Tensor& map, int out_h, int out_w) {
  if (map.rank() != 3 || map.dim(0) != 1)
    throw std::invalid_argument("bilinear_upsample: expected [1,h,w], got " + shape_str(map.shape()));
  const int h = map.dim(1), w = map.dim(2);
  const double* src = map.data();
  std::vector<double> out(static_cast<size_t>(out_h) * out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * src[y0 * w + x0] + wx * src[y0 * w + x1];
      const double bot = (1.0 - wx) * src[y1 * w + x0] + wx * src[y1 * w + x1];
      out[static_cast<size_t>(y) * out_w + x] = (1.0 - wy) * top + wy * bot;
    }
  }
  return out;
}

std::string pgm_from_map(const std::vector<double>& values, int h, int w) {
  if (values.size() != static_cast<size_t>(h) * w)
    throw std::invalid_argument("pgm_from_map: value count does not match extents");
  double lo = values[0], hi = values[0];
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ostringstream os;
  os << "P2\n" << w << " " << h << "\n255\n";
  const double span = hi - lo;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = values[static_cast<size_t>(y) * w + x];
      const long g = span > 0.0 ? std::lround(255.0 * (v - lo) / span) : 128;
      os << (x ? " " : "") << g;
    }
    os << "\n";
  }
  return os.str();
}

void export_attention(const BuiltModel& model, const Dataset& ds, int sample_index,
                      const std::string& out_dir) {
  if (sample_index < 0 || static_cast<size_t>(sample_index) >= ds.samples.size())
    throw std::invalid_argument("export_attention: sample index " + std::to_string(sample_index) +
                                " out of range [0," + std::to_string(ds.samples.size()) + ")");
  TapeSuspend suspend;
  const FullConfig& cfg = model.config;
  const ToyActivitySample& s = ds.samples[static_cast<size_t>(sample_index)];

  std::vector<Tensor> maps;
  if (!is_two_stream(cfg.train.variant)) {
    AppearanceResult r =
        appearance_forward(appearance_input(ds, s, cfg.model.frames_per_clip), model.rgb);
    for (const StepTrace& t : r.traces) maps.push_back(t.s_map);
  } else {
    TwoStreamModel ts;
    ts.rgb = model.rgb;
    ts.flow = *model.flow;
    ts.mode = cfg.train.variant == Variant::two_stream_crossmodal ? FusionMode::cross_modal
                                                                  : FusionMode::late_average;
    ts.gates = cfg.train.crossmodal_gates == "memory" ? CrossModalGates::memory_only
                                                      : CrossModalGates::all;
    if (model.couplers) ts.couplers = *model.couplers;
    TwoStreamInput in{appearance_input(ds, s, cfg.model.frames_per_clip),
                      flow_input(ds, s, cfg.model.flow_depth)};
    TwoStreamResult r = two_stream_forward(in, ts);
    for (const StepTrace& t : r.rgb_traces) maps.push_back(t.s_map);
  }

  fs::create_directories(out_dir);
  std::ostringstream csv;
  for (size_t t = 0; t < maps.size(); ++t) {
    const std::vector<double> up =
        bilinear_upsample(maps[t], cfg.task.grid_h, cfg.task.grid_w);
    char name[48];
    std::snprintf(name, sizeof name, "attention_step%02zu.pgm", t);
    std::ofstream f(fs::path(out_dir) / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write attention map '" + std::string(name) + "'");
    const std::string pgm = pgm_from_map(up, cfg.task.grid_h, cfg.task.grid_w);
    f.write(pgm.data(), static_cast<std::streamsize>(pgm.size()));

    const double* v = maps[t].data();
    for (size_t i = 0; i < maps[t].size(); ++i) {
      char num[32];
      std::snprintf(num, sizeof num, "%.17g", v[i]);
      csv << (i ? "," : "") << num;
    }
    csv << "\n";
  }
  std::ofstream f(fs::path(out_dir) / "attention.csv", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write attention.csv");
  const std::string text = csv.str();
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

}  // namespace lsta
