#include "lsta/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace lsta {

namespace {

thread_local Tape* g_active_tape = nullptr;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace

size_t numel(const Shape& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(shape));
    n *= static_cast<size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape) {
  auto n = std::make_shared<TensorNode>();
  size_t count = numel(shape);
  if (shape.size() > 5) throw std::invalid_argument("tensor rank > 5: " + shape_str(shape));
  n->shape = std::move(shape);
  n->value.assign(count, 0.0);
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.node_->value.begin(), t.node_->value.end(), v);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (numel(shape) != data.size())
    throw std::invalid_argument("data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  Tensor t = zeros(std::move(shape));
  t.node_->value = std::move(data);
  return t;
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::dim(int i) const { return node_->shape.at(static_cast<size_t>(i)); }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
size_t Tensor::size() const { return node_->value.size(); }

double* Tensor::data() { return node_->value.data(); }
const double* Tensor::data() const { return node_->value.data(); }
double Tensor::value_at(size_t i) const { return node_->value.at(i); }

double Tensor::scalar_value() const {
  if (size() != 1) throw std::invalid_argument("scalar_value on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (on) {
    node_->requires_grad = true;
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
  } else {
    node_->requires_grad = false;
    node_->grad.clear();
  }
  return *this;
}

double* Tensor::grad() { return node_->grad.data(); }
const double* Tensor::grad() const { return node_->grad.data(); }

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

const std::string& Tensor::name() const { return node_->name; }
Tensor& Tensor::set_name(std::string name) {
  node_->name = std::move(name);
  return *this;
}

Tensor Tensor::clone() const {
  Tensor t = zeros(node_->shape);
  t.node_->value = node_->value;
  t.node_->name = node_->name;
  return t;
}

// ---- Tape ----

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }
Tape::~Tape() { g_active_tape = prev_; }
void Tape::record(std::function<void()> step) { steps_.push_back(std::move(step)); }
Tape* Tape::active() { return g_active_tape; }

TapeSuspend::TapeSuspend() : saved_(g_active_tape) { g_active_tape = nullptr; }
TapeSuspend::~TapeSuspend() { g_active_tape = saved_; }

void backward(const Tensor& loss, Tape& tape) {
  if (loss.size() != 1)
    throw std::invalid_argument("backward expects a scalar loss, got shape " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw std::invalid_argument("backward: loss does not depend on any tracked tensor");
  loss.node()->grad[0] += 1.0;
  for (auto it = tape.steps_.rbegin(); it != tape.steps_.rend(); ++it) (*it)();
}

// ---- op helpers ----

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t && !t->empty() && t->requires_grad()) return true;
  return false;
}

void track(Tensor& out, std::function<void()> step) {
  out.set_requires_grad(true);
  Tape::active()->record(std::move(step));
}

enum class Bcast { none, a_map, b_map };  // which side is the [1,H,W] map

Bcast binary_layout(const Tensor& a, const Tensor& b, const char* op) {
  if (same_shape(a.shape(), b.shape())) return Bcast::none;
  auto is_map_of = [](const Shape& map, const Shape& full) {
    return map.size() == 3 && full.size() == 3 && map[0] == 1 && map[1] == full[1] && map[2] == full[2];
  };
  if (is_map_of(a.shape(), b.shape())) return Bcast::a_map;
  if (is_map_of(b.shape(), a.shape())) return Bcast::b_map;
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                              " and " + shape_str(b.shape()));
}

}  // namespace

// ---- pointwise ----

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* x = a.data();
  double* y = out.data();
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) {
    if (x[i] >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    } else {
      const double e = std::exp(x[i]);
      y[i] = e / (1.0 + e);
    }
  }
  if (tracking({&a})) {
    track(out, [an = a.node(), on = out.node(), n] {
      for (size_t i = 0; i < n; ++i) {
        const double yi = on->value[i];
        an->grad[i] += on->grad[i] * yi * (1.0 - yi);
      }
    });
  }
  return out;
}

Tensor tanh(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const double* x = a.data();
  double* y = out.data();
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
  if (tracking({&a})) {
    track(out, [an = a.node(), on = out.node(), n] {
      for (size_t i = 0; i < n; ++i) {
        const double yi = on->value[i];
        an->grad[i] += on->grad[i] * (1.0 - yi * yi);
      }
    });
  }
  return out;
}

namespace {

template <bool kMul>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* opname) {
  const Bcast bc = binary_layout(a, b, opname);
  const Tensor& full = (bc == Bcast::a_map) ? b : a;
  const Tensor& map = (bc == Bcast::a_map) ? a : b;
  Tensor out = Tensor::zeros(full.shape());
  const size_t total = full.size();
  double* y = out.data();

  if (bc == Bcast::none) {
    const double* pa = a.data();
    const double* pb = b.data();
    for (size_t i = 0; i < total; ++i) y[i] = kMul ? pa[i] * pb[i] : pa[i] + pb[i];
  } else {
    const size_t n_loc = map.size();
    const double* pf = full.data();
    const double* pm = map.data();
    for (size_t i = 0; i < total; ++i) {
      const double m = pm[i % n_loc];
      y[i] = kMul ? pf[i] * m : pf[i] + m;
    }
  }

  if (tracking({&a, &b})) {
    track(out, [an = a.node(), bn = b.node(), on = out.node(), bc, total] {
      TensorNode* fn = (bc == Bcast::a_map) ? bn.get() : an.get();
      TensorNode* mn = (bc == Bcast::a_map) ? an.get() : bn.get();
      const size_t n_loc = (bc == Bcast::none) ? total : mn->value.size();
      for (size_t i = 0; i < total; ++i) {
        const double g = on->grad[i];
        const size_t j = (bc == Bcast::none) ? i : i % n_loc;
        if constexpr (kMul) {
          if (fn->requires_grad) fn->grad[i] += g * mn->value[j];
          if (mn->requires_grad) mn->grad[j] += g * fn->value[i];
        } else {
          if (fn->requires_grad) fn->grad[i] += g;
          if (mn->requires_grad) mn->grad[j] += g;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op<false>(a, b, "add"); }
Tensor hadamard(const Tensor& a, const Tensor& b) { return binary_op<true>(a, b, "hadamard"); }

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const double* x = a.data();
  double* y = out.data();
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) y[i] = c * x[i];
  if (tracking({&a})) {
    track(out, [an = a.node(), on = out.node(), c, n] {
      for (size_t i = 0; i < n; ++i) an->grad[i] += c * on->grad[i];
    });
  }
  return out;
}

// ---- conv2d ----

namespace {

// cols is [Ci*k*k rows x H*W columns]; row r = (ci*k + ky)*k + kx holds the
// input value at the (ky,kx) kernel offset for every output location, zero
// where the offset falls into padding.
void im2col(const double* in, int ci_count, int h, int w, int k, int pad, double* cols) {
  const int n = h * w;
  for (int ci = 0; ci < ci_count; ++ci) {
    const double* plane = in + static_cast<size_t>(ci) * n;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + (static_cast<size_t>(ci) * k * k + static_cast<size_t>(ky) * k + kx) * n;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          double* dst = row + static_cast<size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            dst[x] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int ci_count, int h, int w, int k, int pad, double* grad_in) {
  const int n = h * w;
  for (int ci = 0; ci < ci_count; ++ci) {
    double* plane = grad_in + static_cast<size_t>(ci) * n;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + (static_cast<size_t>(ci) * k * k + static_cast<size_t>(ky) * k + kx) * n;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + static_cast<size_t>(y) * w;
          double* dst = plane + static_cast<size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   const Tensor& extra_bias) {
  require(input.rank() == 3, "conv2d_same: input must be [Ci,H,W], got " + shape_str(input.shape()));
  require(kernel.rank() == 4, "conv2d_same: kernel must be [Co,Ci,k,k], got " + shape_str(kernel.shape()));
  const int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int co = kernel.dim(0), k = kernel.dim(2);
  require(kernel.dim(1) == ci, "conv2d_same: kernel expects " + std::to_string(kernel.dim(1)) +
                                   " input channels, input has " + std::to_string(ci));
  require(kernel.dim(3) == k, "conv2d_same: kernel must be square, got " + shape_str(kernel.shape()));
  require(k % 2 == 1, "conv2d_same: kernel size must be odd, got " + std::to_string(k));
  require(bias.rank() == 1 && bias.dim(0) == co,
          "conv2d_same: bias must be [" + std::to_string(co) + "], got " + shape_str(bias.shape()));
  if (!extra_bias.empty()) {
    require(extra_bias.shape() == Shape{co, h, w},
            "conv2d_same: extra bias must be [Co,H,W], got " + shape_str(extra_bias.shape()));
  }

  const int pad = (k - 1) / 2;
  const int n = h * w;
  const int rows = ci * k * k;
  auto cols = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * n);
  im2col(input.data(), ci, h, w, k, pad, cols->data());

  Tensor out = Tensor::zeros({co, h, w});
  const double* wm = kernel.data();
  const double* bv = bias.data();
  const double* ev = extra_bias.empty() ? nullptr : extra_bias.data();
  double* y = out.data();
  for (int o = 0; o < co; ++o) {
    double* orow = y + static_cast<size_t>(o) * n;
    if (ev) {
      const double* erow = ev + static_cast<size_t>(o) * n;
      for (int j = 0; j < n; ++j) orow[j] = bv[o] + erow[j];
    } else {
      std::fill(orow, orow + n, bv[o]);
    }
    const double* wrow = wm + static_cast<size_t>(o) * rows;
    for (int r = 0; r < rows; ++r) {
      const double a = wrow[r];
      const double* crow = cols->data() + static_cast<size_t>(r) * n;
      for (int j = 0; j < n; ++j) orow[j] += a * crow[j];
    }
  }

  if (tracking({&input, &kernel, &bias, &extra_bias})) {
    NodePtr en = extra_bias.empty() ? nullptr : extra_bias.node();
    track(out, [in = input.node(), kn = kernel.node(), bn = bias.node(), en, on = out.node(), cols,
                ci, h, w, co, k, pad, n, rows] {
      const double* g = on->grad.data();
      if (bn->requires_grad) {
        for (int o = 0; o < co; ++o) {
          double s = 0.0;
          const double* grow = g + static_cast<size_t>(o) * n;
          for (int j = 0; j < n; ++j) s += grow[j];
          bn->grad[o] += s;
        }
      }
      if (en && en->requires_grad) {
        for (size_t i = 0; i < en->grad.size(); ++i) en->grad[i] += g[i];
      }
      if (kn->requires_grad) {
        for (int o = 0; o < co; ++o) {
          const double* grow = g + static_cast<size_t>(o) * n;
          double* wgrow = kn->grad.data() + static_cast<size_t>(o) * rows;
          for (int r = 0; r < rows; ++r) {
            const double* crow = cols->data() + static_cast<size_t>(r) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += grow[j] * crow[j];
            wgrow[r] += s;
          }
        }
      }
      if (in->requires_grad) {
        std::vector<double> dcols(static_cast<size_t>(rows) * n, 0.0);
        const double* wm = kn->value.data();
        for (int o = 0; o < co; ++o) {
          const double* grow = g + static_cast<size_t>(o) * n;
          const double* wrow = wm + static_cast<size_t>(o) * rows;
          for (int r = 0; r < rows; ++r) {
            const double a = wrow[r];
            double* drow = dcols.data() + static_cast<size_t>(r) * n;
            for (int j = 0; j < n; ++j) drow[j] += a * grow[j];
          }
        }
        col2im_add(dcols.data(), ci, h, w, k, pad, in->grad.data());
      }
    });
  }
  return out;
}

// ---- conv3d ----

Tensor conv3d_same_spatial(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require(input.rank() == 4, "conv3d: input must be [T,Ci,H,W], got " + shape_str(input.shape()));
  require(kernel.rank() == 5, "conv3d: kernel must be [Co,Ci,kt,k,k], got " + shape_str(kernel.shape()));
  const int t = input.dim(0), ci = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int co = kernel.dim(0), kt = kernel.dim(2), k = kernel.dim(3);
  require(kernel.dim(1) == ci, "conv3d: channel mismatch between input " + shape_str(input.shape()) +
                                   " and kernel " + shape_str(kernel.shape()));
  require(kernel.dim(4) == k && k % 2 == 1, "conv3d: spatial kernel must be square and odd");
  require(t >= kt, "conv3d: sequence length " + std::to_string(t) + " shorter than temporal kernel " +
                       std::to_string(kt));
  require(bias.rank() == 1 && bias.dim(0) == co, "conv3d: bias must be [Co]");

  const int pad = (k - 1) / 2;
  const int to = t - kt + 1;
  const int n = h * w;
  Tensor out = Tensor::zeros({co, to, h, w});

  const double* in = input.data();
  const double* wm = kernel.data();
  auto in_at = [&](int tt, int c, int y, int x) {
    return in[((static_cast<size_t>(tt) * ci + c) * h + y) * w + x];
  };
  auto w_at = [&](int o, int c, int dt, int dy, int dx) {
    return wm[(((static_cast<size_t>(o) * ci + c) * kt + dt) * k + dy) * k + dx];
  };
  double* y = out.data();
  for (int o = 0; o < co; ++o)
    for (int tt = 0; tt < to; ++tt)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          double acc = bias.data()[o];
          for (int c = 0; c < ci; ++c)
            for (int dt = 0; dt < kt; ++dt)
              for (int dy = 0; dy < k; ++dy) {
                const int sy = yy + dy - pad;
                if (sy < 0 || sy >= h) continue;
                for (int dx = 0; dx < k; ++dx) {
                  const int sx = xx + dx - pad;
                  if (sx < 0 || sx >= w) continue;
                  acc += in_at(tt + dt, c, sy, sx) * w_at(o, c, dt, dy, dx);
                }
              }
          y[((static_cast<size_t>(o) * to + tt) * h + yy) * w + xx] = acc;
        }

  if (tracking({&input, &kernel, &bias})) {
    track(out, [in = input.node(), kn = kernel.node(), bn = bias.node(), on = out.node(),
                t, ci, h, w, co, kt, k, pad, to, n] {
      const double* g = on->grad.data();
      auto g_at = [&](int o, int tt, int y, int x) {
        return g[((static_cast<size_t>(o) * to + tt) * h + y) * w + x];
      };
      auto in_idx = [&](int tt, int c, int y, int x) {
        return ((static_cast<size_t>(tt) * ci + c) * h + y) * w + x;
      };
      auto w_idx = [&](int o, int c, int dt, int dy, int dx) {
        return (((static_cast<size_t>(o) * ci + c) * kt + dt) * k + dy) * k + dx;
      };
      for (int o = 0; o < co; ++o)
        for (int tt = 0; tt < to; ++tt)
          for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
              const double gv = g_at(o, tt, yy, xx);
              if (gv == 0.0) continue;
              if (bn->requires_grad) bn->grad[o] += gv;
              for (int c = 0; c < ci; ++c)
                for (int dt = 0; dt < kt; ++dt)
                  for (int dy = 0; dy < k; ++dy) {
                    const int sy = yy + dy - pad;
                    if (sy < 0 || sy >= h) continue;
                    for (int dx = 0; dx < k; ++dx) {
                      const int sx = xx + dx - pad;
                      if (sx < 0 || sx >= w) continue;
                      if (kn->requires_grad)
                        kn->grad[w_idx(o, c, dt, dy, dx)] += gv * in->value[in_idx(tt + dt, c, sy, sx)];
                      if (in->requires_grad)
                        in->grad[in_idx(tt + dt, c, sy, sx)] += gv * kn->value[w_idx(o, c, dt, dy, dx)];
                    }
                  }
            }
    });
  }
  return out;
}

Tensor temporal_mean(const Tensor& x) {
  require(x.rank() == 4, "temporal_mean: expected [K,T,H,W], got " + shape_str(x.shape()));
  const int kch = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int n = h * w;
  Tensor out = Tensor::zeros({kch, h, w});
  const double* in = x.data();
  double* y = out.data();
  const double inv = 1.0 / t;
  for (int c = 0; c < kch; ++c)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int tt = 0; tt < t; ++tt) s += in[(static_cast<size_t>(c) * t + tt) * n + j];
      y[static_cast<size_t>(c) * n + j] = s * inv;
    }
  if (tracking({&x})) {
    track(out, [xn = x.node(), on = out.node(), kch, t, n, inv] {
      for (int c = 0; c < kch; ++c)
        for (int j = 0; j < n; ++j) {
          const double g = on->grad[static_cast<size_t>(c) * n + j] * inv;
          for (int tt = 0; tt < t; ++tt) xn->grad[(static_cast<size_t>(c) * t + tt) * n + j] += g;
        }
    });
  }
  return out;
}

Tensor avgpool2(const Tensor& x) {
  require(x.rank() == 3, "avgpool2: expected [K,H,W], got " + shape_str(x.shape()));
  const int kch = x.dim(0), h = x.dim(1), w = x.dim(2);
  require(h % 2 == 0 && w % 2 == 0, "avgpool2: spatial extents must be even, got " + shape_str(x.shape()));
  const int ho = h / 2, wo = w / 2;
  Tensor out = Tensor::zeros({kch, ho, wo});
  const double* in = x.data();
  double* y = out.data();
  for (int c = 0; c < kch; ++c)
    for (int yy = 0; yy < ho; ++yy)
      for (int xx = 0; xx < wo; ++xx) {
        const size_t base = (static_cast<size_t>(c) * h + 2 * yy) * w + 2 * xx;
        y[(static_cast<size_t>(c) * ho + yy) * wo + xx] =
            0.25 * (in[base] + in[base + 1] + in[base + w] + in[base + w + 1]);
      }
  if (tracking({&x})) {
    track(out, [xn = x.node(), on = out.node(), kch, h, w, ho, wo] {
      for (int c = 0; c < kch; ++c)
        for (int yy = 0; yy < ho; ++yy)
          for (int xx = 0; xx < wo; ++xx) {
            const double g = 0.25 * on->grad[(static_cast<size_t>(c) * ho + yy) * wo + xx];
            const size_t base = (static_cast<size_t>(c) * h + 2 * yy) * w + 2 * xx;
            xn->grad[base] += g;
            xn->grad[base + 1] += g;
            xn->grad[base + w] += g;
            xn->grad[base + w + 1] += g;
          }
    });
  }
  return out;
}

Tensor spatial_average(const Tensor& x) {
  require(x.rank() == 3, "spatial_average: expected [K,H,W], got " + shape_str(x.shape()));
  const int kch = x.dim(0);
  const int n = x.dim(1) * x.dim(2);
  Tensor out = Tensor::zeros({kch});
  const double* in = x.data();
  double* y = out.data();
  const double inv = 1.0 / n;
  for (int c = 0; c < kch; ++c) {
    double s = 0.0;
    const double* row = in + static_cast<size_t>(c) * n;
    for (int j = 0; j < n; ++j) s += row[j];
    y[c] = s * inv;
  }
  if (tracking({&x})) {
    track(out, [xn = x.node(), on = out.node(), kch, n, inv] {
      for (int c = 0; c < kch; ++c) {
        const double g = on->grad[c] * inv;
        double* row = xn->grad.data() + static_cast<size_t>(c) * n;
        for (int j = 0; j < n; ++j) row[j] += g;
      }
    });
  }
  return out;
}

Tensor channel_sum(const Tensor& x) {
  require(x.rank() == 3, "channel_sum: expected [K,H,W], got " + shape_str(x.shape()));
  const int kch = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int n = h * w;
  Tensor out = Tensor::zeros({1, h, w});
  const double* in = x.data();
  double* y = out.data();
  for (int c = 0; c < kch; ++c) {
    const double* row = in + static_cast<size_t>(c) * n;
    for (int j = 0; j < n; ++j) y[j] += row[j];
  }
  if (tracking({&x})) {
    track(out, [xn = x.node(), on = out.node(), kch, n] {
      for (int c = 0; c < kch; ++c) {
        double* row = xn->grad.data() + static_cast<size_t>(c) * n;
        for (int j = 0; j < n; ++j) row[j] += on->grad[j];
      }
    });
  }
  return out;
}

Tensor softmax_locations(const Tensor& x) {
  require(x.rank() == 3 && x.dim(0) == 1,
          "softmax_locations: expected [1,H,W], got " + shape_str(x.shape()));
  const size_t n = x.size();
  Tensor out = Tensor::zeros(x.shape());
  const double* in = x.data();
  double* y = out.data();
  double m = in[0];
  for (size_t i = 1; i < n; ++i) m = std::max(m, in[i]);
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    y[i] = std::exp(in[i] - m);
    s += y[i];
  }
  const double inv = 1.0 / s;
  for (size_t i = 0; i < n; ++i) y[i] *= inv;
  if (tracking({&x})) {
    track(out, [xn = x.node(), on = out.node(), n] {
      double dot = 0.0;
      for (size_t i = 0; i < n; ++i) dot += on->grad[i] * on->value[i];
      for (size_t i = 0; i < n; ++i) xn->grad[i] += on->value[i] * (on->grad[i] - dot);
    });
  }
  return out;
}

// ---- shape plumbing ----

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3, "concat_channels: expected rank-3 tensors");
  require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
          "concat_channels: spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int ka = a.dim(0), kb = b.dim(0);
  Tensor out = Tensor::zeros({ka + kb, a.dim(1), a.dim(2)});
  std::copy(a.data(), a.data() + a.size(), out.data());
  std::copy(b.data(), b.data() + b.size(), out.data() + a.size());
  if (tracking({&a, &b})) {
    track(out, [an = a.node(), bn = b.node(), on = out.node()] {
      const size_t na = an->value.size();
      if (an->requires_grad)
        for (size_t i = 0; i < na; ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (size_t i = 0; i < bn->value.size(); ++i) bn->grad[i] += on->grad[na + i];
    });
  }
  return out;
}

Tensor slice_channels(const Tensor& x, int from, int count) {
  require(x.rank() == 3, "slice_channels: expected rank-3 tensor");
  require(from >= 0 && count > 0 && from + count <= x.dim(0),
          "slice_channels: range [" + std::to_string(from) + "," + std::to_string(from + count) +
              ") out of " + std::to_string(x.dim(0)) + " channels");
  const int n = x.dim(1) * x.dim(2);
  Tensor out = Tensor::zeros({count, x.dim(1), x.dim(2)});
  const size_t off = static_cast<size_t>(from) * n;
  std::copy(x.data() + off, x.data() + off + out.size(), out.data());
  if (tracking({&x})) {
    track(out, [xn = x.node(), on = out.node(), off] {
      for (size_t i = 0; i < on->value.size(); ++i) xn->grad[off + i] += on->grad[i];
    });
  }
  return out;
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
  require(!frames.empty(), "stack_frames: empty frame list");
  const Shape& s = frames[0].shape();
  require(s.size() == 3, "stack_frames: frames must be rank 3");
  for (const Tensor& f : frames)
    require(f.shape() == s, "stack_frames: mismatched frame shapes");
  const int t = static_cast<int>(frames.size());
  Tensor out = Tensor::zeros({t, s[0], s[1], s[2]});
  const size_t per = frames[0].size();
  for (int i = 0; i < t; ++i)
    std::copy(frames[i].data(), frames[i].data() + per, out.data() + static_cast<size_t>(i) * per);
  bool any = false;
  for (const Tensor& f : frames) any = any || f.requires_grad();
  if (Tape::active() && any) {
    std::vector<NodePtr> nodes;
    nodes.reserve(frames.size());
    for (const Tensor& f : frames) nodes.push_back(f.node());
    track(out, [nodes = std::move(nodes), on = out.node(), per] {
      for (size_t i = 0; i < nodes.size(); ++i) {
        if (!nodes[i]->requires_grad) continue;
        const double* g = on->grad.data() + i * per;
        for (size_t j = 0; j < per; ++j) nodes[i]->grad[j] += g[j];
      }
    });
  }
  return out;
}

// ---- linear algebra ----

Tensor linear(const Tensor& v, const Tensor& w, const Tensor& bias) {
  require(v.rank() == 1, "linear: v must be rank 1, got " + shape_str(v.shape()));
  require(w.rank() == 2, "linear: w must be rank 2, got " + shape_str(w.shape()));
  const int n = v.dim(0), m = w.dim(1);
  require(w.dim(0) == n, "linear: w " + shape_str(w.shape()) + " does not match v " + shape_str(v.shape()));
  if (!bias.empty())
    require(bias.rank() == 1 && bias.dim(0) == m,
            "linear: bias must be [" + std::to_string(m) + "], got " + shape_str(bias.shape()));
  Tensor out = Tensor::zeros({m});
  double* y = out.data();
  if (!bias.empty()) std::copy(bias.data(), bias.data() + m, y);
  const double* pv = v.data();
  const double* pw = w.data();
  for (int i = 0; i < n; ++i) {
    const double a = pv[i];
    const double* wrow = pw + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) y[j] += a * wrow[j];
  }
  if (tracking({&v, &w, &bias})) {
    NodePtr bn = bias.empty() ? nullptr : bias.node();
    track(out, [vn = v.node(), wn = w.node(), bn, on = out.node(), n, m] {
      const double* g = on->grad.data();
      if (bn && bn->requires_grad)
        for (int j = 0; j < m; ++j) bn->grad[j] += g[j];
      for (int i = 0; i < n; ++i) {
        const double* wrow = wn->value.data() + static_cast<size_t>(i) * m;
        if (vn->requires_grad) {
          double s = 0.0;
          for (int j = 0; j < m; ++j) s += g[j] * wrow[j];
          vn->grad[i] += s;
        }
        if (wn->requires_grad) {
          const double a = vn->value[i];
          double* wg = wn->grad.data() + static_cast<size_t>(i) * m;
          for (int j = 0; j < m; ++j) wg[j] += a * g[j];
        }
      }
    });
  }
  return out;
}

Tensor matrix_column(const Tensor& w, int col) {
  require(w.rank() == 2, "matrix_column: expected rank-2 tensor, got " + shape_str(w.shape()));
  const int n = w.dim(0), m = w.dim(1);
  require(col >= 0 && col < m, "matrix_column: column " + std::to_string(col) + " out of " + std::to_string(m));
  Tensor out = Tensor::zeros({n});
  for (int i = 0; i < n; ++i) out.data()[i] = w.data()[static_cast<size_t>(i) * m + col];
  if (tracking({&w})) {
    track(out, [wn = w.node(), on = out.node(), n, m, col] {
      for (int i = 0; i < n; ++i) wn->grad[static_cast<size_t>(i) * m + col] += on->grad[i];
    });
  }
  return out;
}

Tensor scale_channels(const Tensor& x, const Tensor& w) {
  require(x.rank() == 3, "scale_channels: x must be [K,H,W], got " + shape_str(x.shape()));
  require(w.rank() == 1 && w.dim(0) == x.dim(0),
          "scale_channels: weights " + shape_str(w.shape()) + " do not match " + shape_str(x.shape()));
  const int kch = x.dim(0);
  const int n = x.dim(1) * x.dim(2);
  Tensor out = Tensor::zeros(x.shape());
  for (int c = 0; c < kch; ++c) {
    const double a = w.data()[c];
    const double* row = x.data() + static_cast<size_t>(c) * n;
    double* y = out.data() + static_cast<size_t>(c) * n;
    for (int j = 0; j < n; ++j) y[j] = a * row[j];
  }
  if (tracking({&x, &w})) {
    track(out, [xn = x.node(), wn = w.node(), on = out.node(), kch, n] {
      for (int c = 0; c < kch; ++c) {
        const double* g = on->grad.data() + static_cast<size_t>(c) * n;
        if (xn->requires_grad) {
          const double a = wn->value[c];
          double* xg = xn->grad.data() + static_cast<size_t>(c) * n;
          for (int j = 0; j < n; ++j) xg[j] += a * g[j];
        }
        if (wn->requires_grad) {
          const double* row = xn->value.data() + static_cast<size_t>(c) * n;
          double s = 0.0;
          for (int j = 0; j < n; ++j) s += g[j] * row[j];
          wn->grad[c] += s;
        }
      }
    });
  }
  return out;
}

// ---- reductions / losses ----

Tensor reduce_sum(const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  double s = 0.0;
  const double* in = x.data();
  for (size_t i = 0; i < x.size(); ++i) s += in[i];
  out.data()[0] = s;
  if (tracking({&x})) {
    track(out, [xn = x.node(), on = out.node()] {
      const double g = on->grad[0];
      for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
  }
  return out;
}

Tensor cross_entropy(const Tensor& logits, int label) {
  require(logits.rank() == 1, "cross_entropy: logits must be rank 1, got " + shape_str(logits.shape()));
  const int l = logits.dim(0);
  require(label >= 0 && label < l,
          "cross_entropy: label " + std::to_string(label) + " out of " + std::to_string(l) + " classes");
  const double* x = logits.data();
  double m = x[0];
  for (int i = 1; i < l; ++i) m = std::max(m, x[i]);
  double s = 0.0;
  for (int i = 0; i < l; ++i) s += std::exp(x[i] - m);
  const double lse = m + std::log(s);
  Tensor out = Tensor::scalar(lse - x[label]);
  if (tracking({&logits})) {
    track(out, [xn = logits.node(), on = out.node(), l, label, lse] {
      const double g = on->grad[0];
      for (int i = 0; i < l; ++i) {
        const double p = std::exp(xn->value[i] - lse);
        xn->grad[i] += g * (p - (i == label ? 1.0 : 0.0));
      }
    });
  }
  return out;
}

Tensor finite_diff_grad(const std::function<double()>& f, Tensor x, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: step must be positive");
  TapeSuspend suspend;
  Tensor out = Tensor::zeros(x.shape());
  double* xv = x.data();
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = xv[i];
    xv[i] = saved + h;
    const double fp = f();
    xv[i] = saved - h;
    const double fm = f();
    xv[i] = saved;
    out.data()[i] = (fp - fm) / (2.0 * h);
  }
  return out;
}

bool all_finite(const Tensor& x) {
  const double* v = x.data();
  for (size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(v[i])) return false;
  return true;
}

double gradcheck_rel_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

}  // namespace lsta
