#include "lsta.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <filesystem>
#include <new>
#include <string>
#include <thread>

#include "lsta/ablate.hpp"
#include "lsta/attention_export.hpp"
#include "lsta/checkpoint.hpp"
#include "lsta/config.hpp"
#include "lsta/gradcheck.hpp"
#include "lsta/synth_data.hpp"
#include "lsta/train.hpp"

struct lsta_dataset {
  lsta::Dataset data;
};

struct lsta_model {
  std::shared_ptr<lsta::BuiltModel> built;
  lsta::Checkpoint checkpoint;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

template <typename Fn>
lsta_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return LSTA_OK;
  } catch (const std::invalid_argument& e) {
    g_last_error = e.what();
    return LSTA_ERR_ARGUMENT;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return LSTA_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LSTA_ERR_RUNTIME;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    // IO-flavoured runtime errors come from the readers/writers.
    const std::string msg = e.what();
    if (msg.find("cannot open") != std::string::npos || msg.find("failed writing") != std::string::npos)
      return LSTA_ERR_IO;
    return LSTA_ERR_RUNTIME;
  }
}

lsta_status require_arg(bool ok, const char* msg) {
  if (ok) return LSTA_OK;
  g_last_error = msg;
  return LSTA_ERR_ARGUMENT;
}

}  // namespace

extern "C" {

const char* lsta_version(void) { return "1.0.0"; }

const char* lsta_last_error(void) { return g_last_error.c_str(); }

lsta_status lsta_dataset_generate(const char* config_json, lsta_dataset** train_out,
                                  lsta_dataset** test_out) {
  if (lsta_status s = require_arg(config_json && train_out && test_out,
                                  "lsta_dataset_generate: null argument"))
    return s;
  return guarded([&] {
    const lsta::FullConfig cfg = lsta::parse_config(config_json);
    auto [train_split, test_split] = lsta::generate_dataset(cfg.task);
    *train_out = new lsta_dataset{std::move(train_split)};
    *test_out = new lsta_dataset{std::move(test_split)};
  });
}

lsta_status lsta_dataset_read(const char* path, lsta_dataset** out) {
  if (lsta_status s = require_arg(path && out, "lsta_dataset_read: null argument")) return s;
  return guarded([&] { *out = new lsta_dataset{lsta::read_dataset(path)}; });
}

lsta_status lsta_dataset_write(const lsta_dataset* ds, const char* path) {
  if (lsta_status s = require_arg(ds && path, "lsta_dataset_write: null argument")) return s;
  return guarded([&] { lsta::write_dataset(path, ds->data); });
}

int64_t lsta_dataset_size(const lsta_dataset* ds) {
  return ds ? static_cast<int64_t>(ds->data.samples.size()) : -1;
}

void lsta_dataset_free(lsta_dataset* ds) { delete ds; }

lsta_status lsta_train(const char* config_json, const lsta_dataset* train_set,
                       const lsta_dataset* test_set, lsta_model** model_out,
                       char** metrics_json_out) {
  if (lsta_status s = require_arg(config_json && train_set && test_set && model_out,
                                  "lsta_train: null argument"))
    return s;
  return guarded([&] {
    const lsta::FullConfig cfg = lsta::parse_config(config_json);
    lsta::TrainResult r = lsta::train(cfg, train_set->data, test_set->data);
    auto* model = new lsta_model{r.model, std::move(r.checkpoint)};
    *model_out = model;
    if (metrics_json_out) *metrics_json_out = dup_string(r.report.to_json());
  });
}

lsta_status lsta_evaluate(const lsta_model* model, const lsta_dataset* test_set,
                          char** metrics_json_out) {
  if (lsta_status s = require_arg(model && test_set && metrics_json_out,
                                  "lsta_evaluate: null argument"))
    return s;
  return guarded([&] {
    lsta::MetricsReport r = lsta::evaluate(*model->built, test_set->data);
    *metrics_json_out = dup_string(r.to_json());
  });
}

lsta_status lsta_model_save(const lsta_model* model, const char* path) {
  if (lsta_status s = require_arg(model && path, "lsta_model_save: null argument")) return s;
  return guarded([&] { lsta::write_checkpoint(path, model->checkpoint); });
}

lsta_status lsta_model_load(const char* path, lsta_model** out) {
  if (lsta_status s = require_arg(path && out, "lsta_model_load: null argument")) return s;
  return guarded([&] {
    lsta::Checkpoint ck = lsta::read_checkpoint(path);
    auto built = lsta::model_from_checkpoint(ck);
    *out = new lsta_model{std::move(built), std::move(ck)};
  });
}

lsta_status lsta_model_config(const lsta_model* model, char** config_json_out) {
  if (lsta_status s = require_arg(model && config_json_out, "lsta_model_config: null argument"))
    return s;
  return guarded([&] { *config_json_out = dup_string(model->checkpoint.config_json); });
}

void lsta_model_free(lsta_model* model) { delete model; }

lsta_status lsta_ablate(const char* config_json, const lsta_dataset* train_set,
                        const lsta_dataset* test_set, const char* out_dir, int threads,
                        char** summary_json_out) {
  if (lsta_status s = require_arg(config_json && train_set && test_set && out_dir,
                                  "lsta_ablate: null argument"))
    return s;
  return guarded([&] {
    const lsta::FullConfig cfg = lsta::parse_config(config_json);
    const int n = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    lsta::AblateResult r = lsta::ablate(cfg, train_set->data, test_set->data, out_dir, std::max(1, n));
    if (summary_json_out) *summary_json_out = dup_string(r.summary_json);
  });
}

lsta_status lsta_gradcheck(const char* variant, uint64_t seed, char** report_json_out,
                           int* pass_out) {
  if (lsta_status s = require_arg(variant != nullptr, "lsta_gradcheck: null variant")) return s;
  return guarded([&] {
    lsta::GradCheckReport r = lsta::gradcheck_variant(variant, seed);
    if (report_json_out) *report_json_out = dup_string(r.to_json());
    if (pass_out) *pass_out = r.pass ? 1 : 0;
  });
}

lsta_status lsta_export_attention(const lsta_model* model, const lsta_dataset* ds,
                                  int64_t sample_index, const char* out_dir) {
  if (lsta_status s = require_arg(model && ds && out_dir, "lsta_export_attention: null argument"))
    return s;
  return guarded([&] {
    lsta::export_attention(*model->built, ds->data, static_cast<int>(sample_index), out_dir);
  });
}

void lsta_string_free(char* s) { delete[] s; }

}  // extern "C"
