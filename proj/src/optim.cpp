#include "lsta/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace lsta {

Tensor& ParamSet::add(const std::string& name, Tensor t) {
  if (find(name)) throw std::invalid_argument("ParamSet: duplicate parameter '" + name + "'");
  if (t.empty()) throw std::invalid_argument("ParamSet: empty tensor for '" + name + "'");
  t.set_name(name);
  t.set_requires_grad(true);
  items_.push_back({name, std::move(t), true});
  return items_.back().tensor;
}

NamedParam* ParamSet::find(const std::string& name) {
  for (NamedParam& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

const NamedParam* ParamSet::find(const std::string& name) const {
  for (const NamedParam& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

void ParamSet::zero_grads() {
  for (NamedParam& p : items_)
    if (p.tensor.requires_grad()) p.tensor.zero_grad();
}

void ParamSet::scale_grads(double s) {
  for (NamedParam& p : items_) {
    if (!p.tensor.requires_grad()) continue;
    double* g = p.tensor.grad();
    for (size_t i = 0; i < p.tensor.size(); ++i) g[i] *= s;
  }
}

void ParamSet::set_trainable_all(bool on) {
  for (NamedParam& p : items_) {
    p.trainable = on;
    p.tensor.set_requires_grad(on);
  }
}

void ParamSet::set_trainable(const std::string& name, bool on) {
  NamedParam* p = find(name);
  if (!p) throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
  p->trainable = on;
  p->tensor.set_requires_grad(on);
}

std::string ParamSet::first_non_finite() const {
  for (const NamedParam& p : items_)
    if (!all_finite(p.tensor)) return p.name;
  return {};
}

void AdamOptimizer::ensure(const ParamSet& params) {
  if (m_.size() == params.size()) return;
  m_.resize(params.size());
  v_.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i].assign(params[i].tensor.size(), 0.0);
    v_[i].assign(params[i].tensor.size(), 0.0);
  }
}

void AdamOptimizer::step(ParamSet& params, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  ensure(params);
  ++steps_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    NamedParam& p = params[i];
    if (!p.trainable || !p.tensor.requires_grad()) continue;
    const double* g = p.tensor.grad();
    double* x = p.tensor.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (size_t j = 0; j < p.tensor.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      x[j] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

std::vector<std::pair<std::string, std::vector<double>>> AdamOptimizer::state(
    const ParamSet& params) const {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  if (m_.empty()) return out;
  out.reserve(params.size() * 2);
  for (size_t i = 0; i < params.size(); ++i) {
    out.emplace_back("adam.m." + params[i].name, m_[i]);
    out.emplace_back("adam.v." + params[i].name, v_[i]);
  }
  return out;
}

void AdamOptimizer::restore(const ParamSet& params,
                            const std::vector<std::pair<std::string, std::vector<double>>>& state,
                            uint64_t steps) {
  ensure(params);
  steps_ = steps;
  for (size_t i = 0; i < params.size(); ++i) {
    for (const auto& [name, values] : state) {
      if (name == "adam.m." + params[i].name) m_[i] = values;
      if (name == "adam.v." + params[i].name) v_[i] = values;
    }
  }
}

void SgdOptimizer::step(ParamSet& params, double lr) {
  for (NamedParam& p : params) {
    if (!p.trainable || !p.tensor.requires_grad()) continue;
    const double* g = p.tensor.grad();
    double* x = p.tensor.data();
    for (size_t j = 0; j < p.tensor.size(); ++j) x[j] -= lr * g[j];
  }
}

}  // namespace lsta
