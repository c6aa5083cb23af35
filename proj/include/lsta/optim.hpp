#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsta/tensor.hpp"

namespace lsta {

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Named parameter tensors in a fixed registration order; the order defines
// initialization draws, checkpoint layout and update order.
class ParamSet {
 public:
  Tensor& add(const std::string& name, Tensor t);
  NamedParam* find(const std::string& name);
  const NamedParam* find(const std::string& name) const;

  size_t size() const { return items_.size(); }
  NamedParam& operator[](size_t i) { return items_[i]; }
  const NamedParam& operator[](size_t i) const { return items_[i]; }
  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grads();
  // Scales every trainable gradient, e.g. by 1/batch.
  void scale_grads(double s);
  // trainable also toggles requires_grad so frozen tensors drop out of the tape.
  void set_trainable_all(bool on);
  void set_trainable(const std::string& name, bool on);

  // Name of the first parameter holding a non-finite value, or empty.
  std::string first_non_finite() const;

 private:
  std::vector<NamedParam> items_;
};

// Adam with standard moment estimates (beta1 0.9, beta2 0.999, eps 1e-8).
class AdamOptimizer {
 public:
  void step(ParamSet& params, double lr);

  uint64_t steps() const { return steps_; }
  // Checkpoint access: moment buffers keyed by parameter name.
  std::vector<std::pair<std::string, std::vector<double>>> state(const ParamSet& params) const;
  void restore(const ParamSet& params,
               const std::vector<std::pair<std::string, std::vector<double>>>& state, uint64_t steps);

 private:
  void ensure(const ParamSet& params);
  std::vector<std::vector<double>> m_, v_;
  uint64_t steps_ = 0;
};

class SgdOptimizer {
 public:
  void step(ParamSet& params, double lr);
};

}  // namespace lsta
