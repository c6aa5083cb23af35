#pragma once

#include <string>
#include <vector>

namespace lsta {

struct MetricsReport {
  // Per-epoch training curve; `phase` labels multi-phase runs
  // (rgb.stage1, rgb.stage2, flow.pretrain, flow.activity, fusion).
  std::vector<std::string> phase;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;

  int num_classes = 0;
  int test_count = 0;
  double activity_accuracy = 0.0;
  double action_accuracy = 0.0;
  double object_accuracy = 0.0;
  std::vector<int> confusion;  // [true * num_classes + predicted]

  bool action_pretrained = false;  // motion attention seeded from a trained head

  int confusion_at(int truth, int pred) const { return confusion[truth * num_classes + pred]; }
  int correct_total() const;

  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);

  // Recomputes the three accuracies from the confusion matrix and checks them
  // against the stored fields; throws on mismatch.
  void verify_accounting(int actions, int objects) const;
};

std::string metrics_csv(const MetricsReport& r);
std::string confusion_csv(const MetricsReport& r, int objects);

}  // namespace lsta
