#include "lsta/synth_data.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace lsta {

namespace {

constexpr int kPatch = 5;
constexpr int kGlyphMass = 9;  // lit pixels per glyph, equal across shapes
constexpr int kStirRadius = 2;
constexpr int kStirPeriod = 8;

// 5x5 glyphs, 9 lit pixels each. Equal mass forces the classifier to use
// spatial structure rather than a per-frame intensity statistic.
constexpr std::array<std::array<const char*, kPatch>, 5> kGlyphRows = {{
    // cross
    {{"..#..", "..#..", "#####", "..#..", "..#.."}},
    // saltire
    {{"#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
    // block
    {{".....", ".###.", ".###.", ".###.", "....."}},
    // ell
    {{"#....", "#....", "#....", "#....", "#####"}},
    // tee
    {{"#####", "..#..", "..#..", "..#..", "..#.."}},
}};

constexpr std::array<const char*, 5> kObjectNames = {"cross", "saltire", "block", "ell", "tee"};
constexpr std::array<const char*, 4> kActionNames = {"hold", "stir", "drag", "shake"};

// Shake offset pattern along the chosen axis; period 4 so the motion stays
// visible under stride-2 frame sampling.
constexpr std::array<int, 4> kShakePattern = {0, 1, 1, 0};

struct Glyph {
  std::array<std::array<bool, kPatch>, kPatch> mask{};
  int min_x = kPatch, min_y = kPatch, max_x = -1, max_y = -1;
};

const std::array<Glyph, 5>& glyphs() {
  static const std::array<Glyph, 5> table = [] {
    std::array<Glyph, 5> g{};
    for (int i = 0; i < 5; ++i) {
      int mass = 0;
      for (int y = 0; y < kPatch; ++y)
        for (int x = 0; x < kPatch; ++x) {
          const bool lit = kGlyphRows[i][y][x] == '#';
          g[i].mask[y][x] = lit;
          if (lit) {
            ++mass;
            g[i].min_x = std::min(g[i].min_x, x);
            g[i].min_y = std::min(g[i].min_y, y);
            g[i].max_x = std::max(g[i].max_x, x);
            g[i].max_y = std::max(g[i].max_y, y);
          }
        }
      if (mass != kGlyphMass) throw std::logic_error("glyph mass mismatch");
    }
    return g;
  }();
  return table;
}

struct IRect {
  int x0, y0, x1, y1;  // half-open
  bool intersects(const IRect& o) const {
    return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
  }
};

struct Trajectory {
  std::vector<std::pair<int, int>> pos;  // patch top-left per frame
  IRect swept;                           // bounding rect of all patch placements
};

Trajectory make_trajectory(int action, int frames, int grid_h, int grid_w, CounterRng& rng) {
  const int max_x = grid_w - kPatch;
  const int max_y = grid_h - kPatch;

  Trajectory t;
  t.pos.resize(frames);
  auto fail = [&] {
    throw std::invalid_argument("generate_dataset: grid " + std::to_string(grid_w) + "x" +
                                std::to_string(grid_h) + " too small for the '" +
                                kActionNames[action] + "' trajectory");
  };

  switch (action) {
    case 0: {  // hold
      if (max_x < 0 || max_y < 0) fail();
      const int px = static_cast<int>(rng.next_below(max_x + 1));
      const int py = static_cast<int>(rng.next_below(max_y + 1));
      for (int f = 0; f < frames; ++f) t.pos[f] = {px, py};
      break;
    }
    case 1: {  // stir: circular orbit of radius 2, one cycle per 8 frames
      const int lo = kStirRadius;
      if (max_x - kStirRadius < lo || max_y - kStirRadius < lo) fail();
      const int cx = lo + static_cast<int>(rng.next_below(max_x - 2 * kStirRadius + 1));
      const int cy = lo + static_cast<int>(rng.next_below(max_y - 2 * kStirRadius + 1));
      const int phase = static_cast<int>(rng.next_below(kStirPeriod));
      for (int f = 0; f < frames; ++f) {
        const double ang = 2.0 * M_PI * ((f + phase) % kStirPeriod) / kStirPeriod;
        t.pos[f] = {cx + static_cast<int>(std::lround(kStirRadius * std::cos(ang))),
                    cy + static_cast<int>(std::lround(kStirRadius * std::sin(ang)))};
      }
      break;
    }
    case 2: {  // drag: 1 px/frame linear sweep, reflecting at the walls
      if (max_x < 1 && max_y < 1) fail();
      const int dir = static_cast<int>(rng.next_below(4));  // +x, -x, +y, -y
      int px = static_cast<int>(rng.next_below(max_x + 1));
      int py = static_cast<int>(rng.next_below(max_y + 1));
      int vx = dir == 0 ? 1 : dir == 1 ? -1 : 0;
      int vy = dir == 2 ? 1 : dir == 3 ? -1 : 0;
      if ((vx != 0 && max_x < 1) || (vy != 0 && max_y < 1)) fail();
      for (int f = 0; f < frames; ++f) {
        t.pos[f] = {px, py};
        int nx = px + vx, ny = py + vy;
        if (nx < 0 || nx > max_x) {
          vx = -vx;
          nx = px + vx;
        }
        if (ny < 0 || ny > max_y) {
          vy = -vy;
          ny = py + vy;
        }
        px = nx;
        py = ny;
      }
      break;
    }
    case 3: {  // shake: 1 px oscillation along a drawn axis
      const int axis = static_cast<int>(rng.next_below(2));  // 0 horizontal, 1 vertical
      const int mx = axis == 0 ? max_x - 1 : max_x;
      const int my = axis == 1 ? max_y - 1 : max_y;
      if (mx < 0 || my < 0) fail();
      const int px = static_cast<int>(rng.next_below(mx + 1));
      const int py = static_cast<int>(rng.next_below(my + 1));
      for (int f = 0; f < frames; ++f) {
        const int off = kShakePattern[f % 4];
        t.pos[f] = {px + (axis == 0 ? off : 0), py + (axis == 1 ? off : 0)};
      }
      break;
    }
    default:
      throw std::logic_error("unknown action id");
  }

  t.swept = {grid_w, grid_h, 0, 0};
  for (auto [px, py] : t.pos) {
    t.swept.x0 = std::min(t.swept.x0, px);
    t.swept.y0 = std::min(t.swept.y0, py);
    t.swept.x1 = std::max(t.swept.x1, px + kPatch);
    t.swept.y1 = std::max(t.swept.y1, py + kPatch);
  }
  return t;
}

ToyActivitySample make_sample(const ToyTaskConfig& cfg, int action, int object, CounterRng& rng) {
  ToyActivitySample s;
  s.action_id = static_cast<uint16_t>(action);
  s.object_id = static_cast<uint16_t>(object);

  const Trajectory traj = make_trajectory(action, cfg.frames, cfg.grid_h, cfg.grid_w, rng);

  // Static distractors: non-target glyph types at positions disjoint from the
  // target's swept area and from each other.
  std::vector<int> d_type(cfg.distractors);
  std::vector<std::pair<int, int>> d_pos(cfg.distractors);
  std::vector<IRect> taken = {traj.swept};
  for (int d = 0; d < cfg.distractors; ++d) {
    int pick = static_cast<int>(rng.next_below(cfg.objects - 1));
    if (pick >= object) ++pick;
    d_type[d] = pick;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const int px = static_cast<int>(rng.next_below(cfg.grid_w - kPatch + 1));
      const int py = static_cast<int>(rng.next_below(cfg.grid_h - kPatch + 1));
      const IRect r{px, py, px + kPatch, py + kPatch};
      bool clear = true;
      for (const IRect& o : taken) clear = clear && !r.intersects(o);
      if (clear) {
        d_pos[d] = {px, py};
        taken.push_back(r);
        placed = true;
      }
    }
    if (!placed)
      throw std::invalid_argument("generate_dataset: grid too small to place " +
                                  std::to_string(cfg.distractors) + " distractors");
  }

  const size_t frame_values = static_cast<size_t>(cfg.channels) * cfg.grid_h * cfg.grid_w;
  s.frames.assign(static_cast<size_t>(cfg.frames) * frame_values, 0.0f);
  s.track.resize(cfg.frames);

  const auto& g = glyphs();
  auto stamp = [&](float* frame, int glyph_id, int px, int py) {
    for (int y = 0; y < kPatch; ++y)
      for (int x = 0; x < kPatch; ++x)
        if (g[glyph_id].mask[y][x])
          for (int c = 0; c < cfg.channels; ++c)
            frame[(static_cast<size_t>(c) * cfg.grid_h + py + y) * cfg.grid_w + px + x] += 1.0f;
  };

  for (int f = 0; f < cfg.frames; ++f) {
    float* frame = s.frames.data() + static_cast<size_t>(f) * frame_values;
    auto [px, py] = traj.pos[f];
    stamp(frame, object, px, py);
    for (int d = 0; d < cfg.distractors; ++d) stamp(frame, d_type[d], d_pos[d].first, d_pos[d].second);
    if (cfg.noise_sigma > 0.0) {
      for (size_t i = 0; i < frame_values; ++i)
        frame[i] += static_cast<float>(cfg.noise_sigma * rng.next_gaussian());
    }
    const Glyph& gl = g[object];
    s.track[f] = {static_cast<uint16_t>(px + gl.min_x), static_cast<uint16_t>(py + gl.min_y),
                  static_cast<uint16_t>(gl.max_x - gl.min_x + 1),
                  static_cast<uint16_t>(gl.max_y - gl.min_y + 1)};
  }
  return s;
}

Dataset make_split(const ToyTaskConfig& cfg, int per_class, CounterRng& rng) {
  Dataset ds;
  ds.actions = cfg.actions;
  ds.objects = cfg.objects;
  ds.frames = cfg.frames;
  ds.channels = cfg.channels;
  ds.grid_h = cfg.grid_h;
  ds.grid_w = cfg.grid_w;
  ds.samples.reserve(static_cast<size_t>(cfg.num_classes()) * per_class);
  for (int a = 0; a < cfg.actions; ++a)
    for (int o = 0; o < cfg.objects; ++o)
      for (int i = 0; i < per_class; ++i) ds.samples.push_back(make_sample(cfg, a, o, rng));
  return ds;
}

// ---- little-endian byte IO ----

void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}
void put_u16(std::string& out, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  put_bytes(out, b, 2);
}
void put_u32(std::string& out, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  put_bytes(out, b, 4);
}
void put_f32(std::string& out, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(out, u);
}

struct ByteReader {
  const std::string& buf;
  size_t off = 0;

  void need(size_t n, const std::string& what) const {
    if (off + n > buf.size())
      throw std::runtime_error("dataset file truncated while reading " + what + " at byte offset " +
                               std::to_string(off));
  }
  uint16_t u16(const std::string& what) {
    need(2, what);
    const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + off);
    off += 2;
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32(const std::string& what) {
    need(4, what);
    const auto* b = reinterpret_cast<const unsigned char*>(buf.data() + off);
    off += 4;
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  float f32(const std::string& what) {
    const uint32_t u = u32(what);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
};

constexpr char kMagic[9] = "LSTATOY1";

}  // namespace

void ToyTaskConfig::validate() const {
  if (grid_h < kPatch || grid_w < kPatch)
    throw std::invalid_argument("task: grid must be at least " + std::to_string(kPatch) + "x" +
                                std::to_string(kPatch));
  if (channels < 1) throw std::invalid_argument("task: channels must be positive");
  if (actions < 1 || actions > 4)
    throw std::invalid_argument("task: actions must be in [1,4], got " + std::to_string(actions));
  if (objects < 1 || objects > 5)
    throw std::invalid_argument("task: objects must be in [1,5], got " + std::to_string(objects));
  if (num_classes() < 2) throw std::invalid_argument("task: need at least 2 activity classes");
  if (distractors < 0) throw std::invalid_argument("task: distractors must be non-negative");
  if (distractors > 0 && objects < 2)
    throw std::invalid_argument("task: distractors need at least 2 object types");
  if (frames < 1) throw std::invalid_argument("task: frames must be positive");
  if (noise_sigma < 0.0) throw std::invalid_argument("task: noise sigma must be non-negative");
  if (train_per_class < 1 || test_per_class < 1)
    throw std::invalid_argument("task: per-class sample counts must be positive");
}

const char* action_name(int action_id) { return kActionNames.at(action_id); }
const char* object_name(int object_id) { return kObjectNames.at(object_id); }

std::string activity_name(int activity_id, int objects) {
  return std::string(kActionNames.at(activity_id / objects)) + "_" +
         kObjectNames.at(activity_id % objects);
}

std::pair<Dataset, Dataset> generate_dataset(const ToyTaskConfig& cfg) {
  cfg.validate();
  CounterRng rng(cfg.seed);
  Dataset train = make_split(cfg, cfg.train_per_class, rng);
  Dataset test = make_split(cfg, cfg.test_per_class, rng);
  return {std::move(train), std::move(test)};
}

std::pair<int, int> decompose_prediction(int activity_id, int actions, int objects) {
  if (activity_id < 0 || activity_id >= actions * objects)
    throw std::invalid_argument("decompose_prediction: activity id " + std::to_string(activity_id) +
                                " out of range [0," + std::to_string(actions * objects) + ")");
  return {activity_id / objects, activity_id % objects};
}

std::pair<int, int> decompose_prediction(int activity_id, const ToyTaskConfig& cfg) {
  return decompose_prediction(activity_id, cfg.actions, cfg.objects);
}

void write_dataset(const std::string& path, const Dataset& ds) {
  std::string out;
  put_bytes(out, kMagic, 8);
  put_u32(out, 1);  // version
  put_u32(out, ds.actions);
  put_u32(out, ds.objects);
  put_u32(out, ds.frames);
  put_u32(out, ds.channels);
  put_u32(out, ds.grid_h);
  put_u32(out, ds.grid_w);
  put_u32(out, static_cast<uint32_t>(ds.samples.size()));
  const size_t per_frame = ds.frame_values();
  for (const ToyActivitySample& s : ds.samples) {
    put_u16(out, s.action_id);
    put_u16(out, s.object_id);
    for (uint32_t f = 0; f < ds.frames; ++f) {
      const BBox& b = s.track.at(f);
      put_u16(out, b.x);
      put_u16(out, b.y);
      put_u16(out, b.w);
      put_u16(out, b.h);
    }
    for (size_t i = 0; i < static_cast<size_t>(ds.frames) * per_frame; ++i) put_f32(out, s.frames[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing dataset to '" + path + "'");
}

Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open dataset file '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r{buf};

  r.need(8, "magic");
  if (std::memcmp(buf.data(), kMagic, 8) != 0)
    throw std::runtime_error("bad dataset magic in '" + path + "' at byte 0: expected \"LSTATOY1\"");
  r.off = 8;
  const uint32_t version = r.u32("version");
  if (version != 1)
    throw std::runtime_error("unsupported dataset version " + std::to_string(version) + " at byte 8");

  Dataset ds;
  ds.actions = r.u32("actions");
  ds.objects = r.u32("objects");
  ds.frames = r.u32("frames");
  ds.channels = r.u32("channels");
  ds.grid_h = r.u32("grid height");
  ds.grid_w = r.u32("grid width");
  const uint32_t count = r.u32("sample count");
  if (ds.actions == 0 || ds.objects == 0 || ds.frames == 0 || ds.channels == 0 || ds.grid_h == 0 ||
      ds.grid_w == 0)
    throw std::runtime_error("dataset header of '" + path + "' contains a zero field");

  const size_t per_frame = ds.frame_values();
  ds.samples.resize(count);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string where = "sample " + std::to_string(i);
    ToyActivitySample& s = ds.samples[i];
    s.action_id = r.u16(where);
    s.object_id = r.u16(where);
    s.track.resize(ds.frames);
    for (uint32_t t = 0; t < ds.frames; ++t) {
      s.track[t].x = r.u16(where);
      s.track[t].y = r.u16(where);
      s.track[t].w = r.u16(where);
      s.track[t].h = r.u16(where);
    }
    const size_t total = static_cast<size_t>(ds.frames) * per_frame;
    s.frames.resize(total);
    r.need(total * 4, where);
    for (size_t j = 0; j < total; ++j) s.frames[j] = r.f32(where);
  }
  if (r.off != buf.size())
    throw std::runtime_error("dataset file '" + path + "' has " + std::to_string(buf.size() - r.off) +
                             " trailing bytes at offset " + std::to_string(r.off));
  return ds;
}

Tensor sample_frame(const Dataset& ds, const ToyActivitySample& s, int t) {
  if (t < 0 || static_cast<uint32_t>(t) >= ds.frames)
    throw std::invalid_argument("sample_frame: frame index out of range");
  const size_t per_frame = ds.frame_values();
  std::vector<double> v(per_frame);
  const float* src = s.frames.data() + static_cast<size_t>(t) * per_frame;
  for (size_t i = 0; i < per_frame; ++i) v[i] = static_cast<double>(src[i]);
  return Tensor::from_data({static_cast<int>(ds.channels), static_cast<int>(ds.grid_h),
                            static_cast<int>(ds.grid_w)},
                           std::move(v));
}

std::vector<int> uniform_frame_indices(int raw_frames, int count) {
  if (count < 1 || raw_frames < 1)
    throw std::invalid_argument("uniform_frame_indices: counts must be positive");
  if (count > raw_frames)
    throw std::invalid_argument("uniform_frame_indices: cannot sample " + std::to_string(count) +
                                " frames from " + std::to_string(raw_frames));
  std::vector<int> idx(count);
  for (int i = 0; i < count; ++i) idx[i] = i * raw_frames / count;
  return idx;
}

}  // namespace lsta
