// Command-line front end. Links only the C API (lsta.h); configuration
// assembly and result formatting happen here, everything else in the library.
#include <CLI11.hpp>
#include <json.hpp>
#include <lsta.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;    // validation errors
constexpr int kExitRuntime = 2;  // failures while running

struct GlobalOpts {
  std::optional<uint64_t> seed;
  std::string config_path;
  std::string out_dir;
  std::optional<std::string> preset;
};

[[noreturn]] void die(int code, const std::string& msg) {
  std::cerr << "lsta: " << msg << "\n";
  std::exit(code);
}

int code_for(lsta_status s) { return s == LSTA_ERR_ARGUMENT ? kExitUsage : kExitRuntime; }

void check(lsta_status s) {
  if (s != LSTA_OK) die(code_for(s), lsta_last_error());
}

// preset/seed flags override the file's own values.
std::string assemble_config(const GlobalOpts& g) {
  json j = json::object();
  if (!g.config_path.empty()) {
    std::ifstream f(g.config_path);
    if (!f) die(kExitUsage, "cannot open config file '" + g.config_path + "'");
    try {
      f >> j;
    } catch (const json::parse_error& e) {
      die(kExitUsage, "config file '" + g.config_path + "': " + e.what());
    }
    if (!j.is_object()) die(kExitUsage, "config file root must be a JSON object");
  }
  if (g.preset) j["preset"] = *g.preset;
  if (g.seed) j["seed"] = *g.seed;
  return j.dump();
}

std::string owned(char* s) {
  std::string out = s ? s : "";
  lsta_string_free(s);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) die(kExitRuntime, "cannot write '" + path.string() + "'");
  f << text;
}

fs::path require_out(const GlobalOpts& g) {
  if (g.out_dir.empty()) die(kExitUsage, "this subcommand requires --out <dir>");
  fs::create_directories(g.out_dir);
  return g.out_dir;
}

struct DatasetPair {
  lsta_dataset* train = nullptr;
  lsta_dataset* test = nullptr;
  ~DatasetPair() {
    lsta_dataset_free(train);
    lsta_dataset_free(test);
  }
};

void load_data_dir(const std::string& dir, DatasetPair& ds) {
  const fs::path train_path = fs::path(dir) / "train.dat";
  const fs::path test_path = fs::path(dir) / "test.dat";
  if (!fs::exists(train_path) || !fs::exists(test_path))
    die(kExitUsage, "dataset directory '" + dir + "' must contain train.dat and test.dat");
  check(lsta_dataset_read(train_path.string().c_str(), &ds.train));
  check(lsta_dataset_read(test_path.string().c_str(), &ds.test));
}

// Derives the per-epoch and confusion CSVs next to metrics.json.
void write_metrics_files(const fs::path& dir, const std::string& metrics_json) {
  write_text(dir / "metrics.json", metrics_json);
  const json m = json::parse(metrics_json);
  {
    std::string csv = "epoch,phase,loss,train_accuracy\n";
    const auto& loss = m.at("epoch_loss");
    const auto& acc = m.at("epoch_accuracy");
    const auto& phase = m.at("phase");
    for (size_t i = 0; i < loss.size(); ++i) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%zu,%s,%.10f,%.6f\n", i + 1,
                    phase.at(i).get<std::string>().c_str(), loss.at(i).get<double>(),
                    acc.at(i).get<double>());
      csv += buf;
    }
    write_text(dir / "metrics.csv", csv);
  }
  {
    const int l = m.at("num_classes").get<int>();
    const auto& conf = m.at("confusion");
    std::string csv;
    for (int t = 0; t < l; ++t) {
      for (int p = 0; p < l; ++p) {
        if (p) csv += ",";
        csv += std::to_string(conf.at(static_cast<size_t>(t) * l + p).get<int>());
      }
      csv += "\n";
    }
    write_text(dir / "confusion.csv", csv);
  }
}

void print_summary(const std::string& metrics_json) {
  const json m = json::parse(metrics_json);
  std::printf("activity accuracy: %.2f%%\n", 100.0 * m.at("activity_accuracy").get<double>());
  std::printf("action accuracy:   %.2f%%\n", 100.0 * m.at("action_accuracy").get<double>());
  std::printf("object accuracy:   %.2f%%\n", 100.0 * m.at("object_accuracy").get<double>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LSTA: recurrent attention cell on the toy activity task"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed,-s", g.seed, "override the configuration seed");
  app.add_option("--config,-c", g.config_path, "JSON configuration file");
  app.add_option("--out,-o", g.out_dir, "output directory");
  app.add_option("--preset", g.preset, "configuration preset (desk | paper)")
      ->check(CLI::IsMember({"desk", "paper"}));

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  auto* train = app.add_subcommand("train", "train one variant");
  std::string data_dir;
  std::string variant;
  train->add_option("--data", data_dir, "directory holding train.dat/test.dat")->required();
  train->add_option("--variant", variant, "model variant (overrides the config)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path;
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", data_dir, "directory holding train.dat/test.dat")->required();
  eval->add_option("--variant", variant, "variant the checkpoint must match");
  auto* ablate = app.add_subcommand("ablate", "train and compare every ladder variant");
  int threads = 0;
  ablate->add_option("--data", data_dir, "directory holding train.dat/test.dat")->required();
  ablate->add_option("--threads", threads, "worker threads (default: hardware)");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of one variant");
  std::string gc_variant = "lsta";
  gradcheck->add_option("--variant", gc_variant, "variant to check");
  auto* exp = app.add_subcommand("export-attention", "write attention maps for one test sample");
  int64_t sample_index = 0;
  exp->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  exp->add_option("--data", data_dir, "directory holding train.dat/test.dat")->required();
  exp->add_option("--sample", sample_index, "test sample index");
  auto* report = app.add_subcommand("report", "re-render and verify a metrics file");
  std::string report_in;
  report->add_option("--in", report_in, "metrics.json or a directory containing it")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kExitUsage;
  }

  const std::string config = assemble_config(g);

  if (gen->parsed()) {
    const fs::path out = require_out(g);
    DatasetPair ds;
    check(lsta_dataset_generate(config.c_str(), &ds.train, &ds.test));
    check(lsta_dataset_write(ds.train, (out / "train.dat").string().c_str()));
    check(lsta_dataset_write(ds.test, (out / "test.dat").string().c_str()));
    std::printf("wrote %lld train / %lld test clips to %s\n",
                static_cast<long long>(lsta_dataset_size(ds.train)),
                static_cast<long long>(lsta_dataset_size(ds.test)), out.string().c_str());
    return kExitOk;
  }

  if (train->parsed()) {
    std::string cfg = config;
    if (!variant.empty()) {
      json j = json::parse(cfg);
      j["train"]["variant"] = variant;
      cfg = j.dump();
    }
    const fs::path out = require_out(g);
    DatasetPair ds;
    load_data_dir(data_dir, ds);
    lsta_model* model = nullptr;
    char* metrics = nullptr;
    check(lsta_train(cfg.c_str(), ds.train, ds.test, &model, &metrics));
    const std::string metrics_json = owned(metrics);
    check(lsta_model_save(model, (out / "checkpoint.bin").string().c_str()));
    char* model_cfg = nullptr;
    check(lsta_model_config(model, &model_cfg));
    write_text(out / "config.json", owned(model_cfg));
    lsta_model_free(model);
    write_metrics_files(out, metrics_json);
    print_summary(metrics_json);
    return kExitOk;
  }

  if (eval->parsed()) {
    DatasetPair ds;
    load_data_dir(data_dir, ds);
    lsta_model* model = nullptr;
    check(lsta_model_load(ckpt_path.c_str(), &model));
    if (!variant.empty()) {
      char* model_cfg = nullptr;
      check(lsta_model_config(model, &model_cfg));
      const json j = json::parse(owned(model_cfg));
      const std::string have = j.at("train").at("variant").get<std::string>();
      std::string want = variant;
      if (!want.empty() && want[0] == '+') want = want.substr(1);
      if (have != want) {
        lsta_model_free(model);
        die(kExitUsage, "checkpoint holds variant '" + have + "', not '" + variant + "'");
      }
    }
    char* metrics = nullptr;
    const lsta_status s = lsta_evaluate(model, ds.test, &metrics);
    lsta_model_free(model);
    check(s);
    const std::string metrics_json = owned(metrics);
    if (!g.out_dir.empty()) write_metrics_files(require_out(g), metrics_json);
    print_summary(metrics_json);
    return kExitOk;
  }

  if (ablate->parsed()) {
    const fs::path out = require_out(g);
    DatasetPair ds;
    load_data_dir(data_dir, ds);
    char* summary = nullptr;
    check(lsta_ablate(config.c_str(), ds.train, ds.test, out.string().c_str(), threads, &summary));
    const json j = json::parse(owned(summary));
    std::printf("%-28s %-10s %-10s %-10s\n", "variant", "activity", "action", "object");
    for (const auto& row : j.at("rows"))
      std::printf("%-28s %-10.2f %-10.2f %-10.2f\n", row.at("variant").get<std::string>().c_str(),
                  100.0 * row.at("activity_accuracy").get<double>(),
                  100.0 * row.at("action_accuracy").get<double>(),
                  100.0 * row.at("object_accuracy").get<double>());
    return kExitOk;
  }

  if (gradcheck->parsed()) {
    char* report_json = nullptr;
    int pass = 0;
    check(lsta_gradcheck(gc_variant.c_str(), g.seed.value_or(1), &report_json, &pass));
    const std::string text = owned(report_json);
    const json j = json::parse(text);
    for (const auto& e : j.at("tensors"))
      std::printf("%-32s max rel err %.3e  %s\n", e.at("tensor").get<std::string>().c_str(),
                  e.at("max_rel_err").get<double>(), e.at("pass").get<bool>() ? "ok" : "FAIL");
    if (!g.out_dir.empty()) write_text(require_out(g) / "gradcheck.json", text);
    if (!pass) die(kExitRuntime, "gradient check failed for variant '" + gc_variant + "'");
    std::printf("gradcheck %s: pass\n", gc_variant.c_str());
    return kExitOk;
  }

  if (exp->parsed()) {
    const fs::path out = require_out(g);
    DatasetPair ds;
    load_data_dir(data_dir, ds);
    lsta_model* model = nullptr;
    check(lsta_model_load(ckpt_path.c_str(), &model));
    const lsta_status s = lsta_export_attention(model, ds.test, sample_index, out.string().c_str());
    lsta_model_free(model);
    check(s);
    std::printf("wrote attention maps for sample %lld to %s\n",
                static_cast<long long>(sample_index), out.string().c_str());
    return kExitOk;
  }

  if (report->parsed()) {
    fs::path path = report_in;
    if (fs::is_directory(path)) path /= "metrics.json";
    std::ifstream f(path);
    if (!f) die(kExitUsage, "cannot open metrics file '" + path.string() + "'");
    json m;
    try {
      f >> m;
    } catch (const json::parse_error& e) {
      die(kExitRuntime, std::string("metrics file: ") + e.what());
    }
    // Accounting: the headline numbers must be recomputable from the matrix.
    const int l = m.at("num_classes").get<int>();
    const auto& conf = m.at("confusion");
    long total = 0, diag = 0;
    for (int t = 0; t < l; ++t)
      for (int p = 0; p < l; ++p) {
        const int v = conf.at(static_cast<size_t>(t) * l + p).get<int>();
        total += v;
        if (t == p) diag += v;
      }
    const double expected = total ? static_cast<double>(diag) / total : 0.0;
    if (std::abs(expected - m.at("activity_accuracy").get<double>()) > 1e-12)
      die(kExitRuntime, "metrics accounting check failed: confusion matrix disagrees with accuracy");
    std::printf("epochs: %zu, test clips: %ld\n", m.at("epoch_loss").size(), total);
    print_summary(m.dump());
    std::printf("accounting: confusion matrix consistent\n");
    return kExitOk;
  }

  return kExitUsage;
}
