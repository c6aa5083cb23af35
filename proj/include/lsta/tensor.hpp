#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lsta {

using Shape = std::vector<int>;

size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same length as value when requires_grad
  bool requires_grad = false;
  std::string name;
};

// Dense row-major f64 tensor, rank <= 5. Value semantics over a shared node;
// an op never mutates its inputs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);

  bool empty() const { return !node_; }
  const Shape& shape() const;
  int dim(int i) const;
  int rank() const;
  size_t size() const;

  double* data();
  const double* data() const;
  double value_at(size_t i) const;
  double scalar_value() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  double* grad();
  const double* grad() const;
  void zero_grad();

  const std::string& name() const;
  Tensor& set_name(std::string name);

  // Deep copy of the values; grad state is not copied.
  Tensor clone() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
};

// Ordered record of executed primitives. Constructing a Tape installs it as
// the active tape for the current thread; destruction restores the previous
// one. One tape per thread at a time; independent tapes may live on
// independent threads.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> step);
  size_t size() const { return steps_.size(); }

  static Tape* active();

 private:
  friend void backward(const Tensor&, Tape&);
  std::vector<std::function<void()>> steps_;
  Tape* prev_ = nullptr;
};

// Suppresses recording while alive (evaluation passes, finite differences).
class TapeSuspend {
 public:
  TapeSuspend();
  ~TapeSuspend();
  TapeSuspend(const TapeSuspend&) = delete;
  TapeSuspend& operator=(const TapeSuspend&) = delete;

 private:
  Tape* saved_;
};

// Replays the tape's adjoints in reverse order, accumulating gradients into
// every requires_grad tensor reachable from `loss`. The loss must be scalar.
void backward(const Tensor& loss, Tape& tape);

// ---- pointwise ----
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
// Binary ops accept equal shapes, or a [1,H,W] map broadcast against a
// [K,H,W] tensor (either side).
Tensor add(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// ---- convolution and spatial ops ----
// input [Ci,H,W], kernel [Co,Ci,k,k] with odd k, bias [Co], optional
// extra_bias [Co,H,W] added per position. Zero padded, same-size output.
Tensor conv2d_same(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                   const Tensor& extra_bias = {});
// input [T,Ci,H,W], kernel [Co,Ci,kt,k,k]; valid over time, same-padded
// spatially. Output [Co,T-kt+1,H,W].
Tensor conv3d_same_spatial(const Tensor& input, const Tensor& kernel, const Tensor& bias);
// [K,T,H,W] -> [K,H,W], mean over the temporal axis.
Tensor temporal_mean(const Tensor& x);
// [K,H,W] -> [K,H/2,W/2]; H and W must be even.
Tensor avgpool2(const Tensor& x);
// [K,H,W] -> [K], per-channel mean over locations.
Tensor spatial_average(const Tensor& x);
// [K,H,W] -> [1,H,W], sum over channels.
Tensor channel_sum(const Tensor& x);
// [1,H,W] -> [1,H,W], exp-normalized over locations with max subtraction.
Tensor softmax_locations(const Tensor& x);

// ---- shape plumbing ----
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& x, int from, int count);
// frames of identical [K,H,W] shape -> [T,K,H,W]
Tensor stack_frames(const std::vector<Tensor>& frames);

// ---- linear algebra ----
// v [N], w [N,M], optional bias [M]: out[m] = sum_n v[n] w[n,m] + bias[m]
Tensor linear(const Tensor& v, const Tensor& w, const Tensor& bias = {});
Tensor matrix_column(const Tensor& w, int col);
// x [K,H,W], w [K]: out[k,·] = x[k,·] * w[k]
Tensor scale_channels(const Tensor& x, const Tensor& w);

// ---- reductions / losses ----
Tensor reduce_sum(const Tensor& x);
Tensor cross_entropy(const Tensor& logits, int label);

// Central finite differences of f around the current contents of x; x is
// perturbed in place and restored. Recording is suspended during the probe
// evaluations. Intended as the independent gradient oracle.
Tensor finite_diff_grad(const std::function<double()>& f, Tensor x, double h);

bool all_finite(const Tensor& x);

// |a-b| / max(1, |a|, |b|), the relative error used by all gradient checks.
double gradcheck_rel_err(double analytic, double numeric);

}  // namespace lsta
