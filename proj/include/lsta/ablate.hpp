#pragma once

#include <string>
#include <vector>

#include "lsta/train.hpp"

namespace lsta {

struct AblateResult {
  std::vector<Variant> variants;       // ladder order
  std::vector<MetricsReport> reports;  // one per variant
  std::string summary_json;
};

// Trains every ladder variant with the shared seed and dataset, writes per
// variant checkpoints/metrics, the comparison table, confusion-matrix
// differences for adjacent ladder rows and the most-improved-classes
// listings. `threads` > 1 trains variants concurrently; outputs do not
// depend on the schedule.
AblateResult ablate(const FullConfig& base, const Dataset& train_set, const Dataset& test_set,
                    const std::string& out_dir, int threads);

// confusion(B) - confusion(A), row-major.
std::vector<int> confusion_diff(const MetricsReport& b, const MetricsReport& a);

struct ImprovedClass {
  int activity_id;
  std::string label;
  int gained;  // diagonal improvement, corrected samples
};

// Classes whose diagonal count improved, best first, at most `limit`.
std::vector<ImprovedClass> top_improved_classes(const MetricsReport& b, const MetricsReport& a,
                                                int objects, int limit = 25);

// Runs fn(0..n-1) on a pool of worker threads; each task must be independent.
void run_parallel(int n, int threads, const std::function<void(int)>& fn);

}  // namespace lsta
