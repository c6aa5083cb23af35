#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lsta/train.hpp"

namespace lsta {

struct GradCheckEntry {
  std::string tensor;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::string variant;
  uint64_t seed = 0;
  double tolerance = 1e-5;
  double step = 1e-5;
  bool pass = true;
  std::vector<GradCheckEntry> entries;

  std::string to_json() const;
};

// A tiny model + fixed sample with strict selector margins, plus the scalar
// loss both gradient routes differentiate.
struct GradCheckFixture {
  FullConfig config;
  std::shared_ptr<BuiltModel> model;
  Dataset data;
  int sample_index = 0;
  std::function<double()> loss;
};

GradCheckFixture make_gradcheck_fixture(Variant variant, uint64_t seed);

// Analytic gradients per parameter, in registration order.
std::vector<std::vector<double>> analytic_gradients(const GradCheckFixture& f);
// Central finite differences of the fixture loss, h = report.step.
std::vector<std::vector<double>> numeric_gradients(const GradCheckFixture& f, double h);

GradCheckReport compare_gradients(const GradCheckFixture& f,
                                  const std::vector<std::vector<double>>& analytic,
                                  const std::vector<std::vector<double>>& numeric, double tolerance,
                                  double h);

// Full-parameter check of one variant at a tiny configuration.
GradCheckReport gradcheck_variant(const std::string& variant, uint64_t seed);

}  // namespace lsta
