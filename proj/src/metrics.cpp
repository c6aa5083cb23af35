#include "lsta/metrics.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lsta/synth_data.hpp"

namespace lsta {

using nlohmann::json;

int MetricsReport::correct_total() const {
  int c = 0;
  for (int i = 0; i < num_classes; ++i) c += confusion_at(i, i);
  return c;
}

std::string MetricsReport::to_json() const {
  json j;
  j["phase"] = phase;
  j["epoch_loss"] = epoch_loss;
  j["epoch_accuracy"] = epoch_accuracy;
  j["num_classes"] = num_classes;
  j["test_count"] = test_count;
  j["activity_accuracy"] = activity_accuracy;
  j["action_accuracy"] = action_accuracy;
  j["object_accuracy"] = object_accuracy;
  j["confusion"] = confusion;
  j["action_pretrained"] = action_pretrained;
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  json j = json::parse(text);
  MetricsReport r;
  r.phase = j.at("phase").get<std::vector<std::string>>();
  r.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  r.epoch_accuracy = j.at("epoch_accuracy").get<std::vector<double>>();
  r.num_classes = j.at("num_classes").get<int>();
  r.test_count = j.at("test_count").get<int>();
  r.activity_accuracy = j.at("activity_accuracy").get<double>();
  r.action_accuracy = j.at("action_accuracy").get<double>();
  r.object_accuracy = j.at("object_accuracy").get<double>();
  r.confusion = j.at("confusion").get<std::vector<int>>();
  r.action_pretrained = j.at("action_pretrained").get<bool>();
  return r;
}

void MetricsReport::verify_accounting(int actions, int objects) const {
  if (num_classes != actions * objects)
    throw std::runtime_error("metrics: class count does not match actions*objects");
  if (static_cast<int>(confusion.size()) != num_classes * num_classes)
    throw std::runtime_error("metrics: confusion matrix size mismatch");
  int total = 0, act_ok = 0, obj_ok = 0, all_ok = 0;
  for (int t = 0; t < num_classes; ++t) {
    const auto [ta, to] = decompose_prediction(t, actions, objects);
    for (int p = 0; p < num_classes; ++p) {
      const int n = confusion_at(t, p);
      if (n < 0) throw std::runtime_error("metrics: negative confusion entry");
      const auto [pa, po] = decompose_prediction(p, actions, objects);
      total += n;
      if (t == p) all_ok += n;
      if (ta == pa) act_ok += n;
      if (to == po) obj_ok += n;
    }
  }
  if (total != test_count) throw std::runtime_error("metrics: confusion total differs from test count");
  auto close = [](double a, double b) { return std::fabs(a - b) < 1e-12; };
  const double inv = total > 0 ? 1.0 / total : 0.0;
  if (!close(activity_accuracy, all_ok * inv) || !close(action_accuracy, act_ok * inv) ||
      !close(object_accuracy, obj_ok * inv))
    throw std::runtime_error("metrics: stored accuracies disagree with the confusion matrix");
  if (activity_accuracy > action_accuracy || activity_accuracy > object_accuracy)
    throw std::runtime_error("metrics: activity accuracy exceeds a component accuracy");
}

std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "epoch,phase,loss,train_accuracy\n";
  for (size_t i = 0; i < r.epoch_loss.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%s,%.10f,%.6f\n", i + 1,
                  i < r.phase.size() ? r.phase[i].c_str() : "", r.epoch_loss[i], r.epoch_accuracy[i]);
    os << buf;
  }
  return os.str();
}

std::string confusion_csv(const MetricsReport& r, int objects) {
  std::ostringstream os;
  os << "true\\predicted";
  for (int p = 0; p < r.num_classes; ++p) os << "," << activity_name(p, objects);
  os << "\n";
  for (int t = 0; t < r.num_classes; ++t) {
    os << activity_name(t, objects);
    for (int p = 0; p < r.num_classes; ++p) os << "," << r.confusion_at(t, p);
    os << "\n";
  }
  return os.str();
}

}  // namespace lsta
