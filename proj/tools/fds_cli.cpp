#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "fds/fds.h"

namespace {

using json = nlohmann::json;

struct CliError {
  int code;
  std::string message;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw CliError{FDS_ERR_DATA, "cannot open config " + path};
  try {
    auto j = json::parse(in);
    if (!j.is_object()) throw CliError{FDS_ERR_USAGE, path + ": config must be a JSON object"};
    for (const auto& [key, v] : j.items())
      if (key != "synth" && key != "impute" && key != "train" && key != "data" && key != "eval")
        throw CliError{FDS_ERR_USAGE, path + ": unknown section '" + key + "'"};
    return j;
  } catch (const json::exception& e) {
    throw CliError{FDS_ERR_DATA, path + ": " + e.what()};
  }
}

json section(const json& cfg, const char* name) { return cfg.contains(name) ? cfg[name] : json::object(); }

void check(fds_status s) {
  if (s != FDS_OK) throw CliError{static_cast<int>(s), fds_last_error()};
}

// Takes ownership of a string returned by the library.
std::string take(char* s) {
  std::string out = s ? s : "";
  fds_string_free(s);
  return out;
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text << '\n';
    return;
  }
  std::ofstream out(path);
  out << text << '\n';
  if (!out) throw CliError{FDS_ERR_DATA, "cannot write " + path};
}

struct RunHandle {
  fds_run* run = nullptr;
  explicit RunHandle(const std::string& dir) { check(fds_run_load(dir.c_str(), &run)); }
  ~RunHandle() { fds_run_free(run); }
  RunHandle(const RunHandle&) = delete;
  RunHandle& operator=(const RunHandle&) = delete;
};

int wiring_of_run(const std::string& run_dir) {
  std::ifstream in(run_dir + "/run.json");
  if (!in) throw CliError{FDS_ERR_DATA, "cannot open " + run_dir + "/run.json"};
  try {
    return json::parse(in).at("config").at("train").at("wiring").get<int>();
  } catch (const json::exception& e) {
    throw CliError{FDS_ERR_DATA, run_dir + "/run.json: " + e.what()};
  }
}

void set_log_level() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("fds"));
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("FDS_LOG");
  const std::string level = env ? env : "info";
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "warn") spdlog::set_level(spdlog::level::warn);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else throw CliError{FDS_ERR_USAGE, "FDS_LOG must be error, warn, info or debug (got '" + level + "')"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal flood damage mapping: synthetic data, claim labels, training and building damage maps"};
  app.require_subcommand(1);

  std::string config, out, data_dir, run_dir, labels, footprints, points, pred_dir, records, split = "test",
                                                                                             stat = "median";
  std::uint64_t seed = 0;
  std::size_t chips = 16;
  unsigned threads = 0;
  std::optional<std::size_t> k, kmin, epochs, steps;
  std::optional<double> d;
  std::optional<int> wiring;
  std::size_t min_pixels = 4;
  double var_threshold = 0.5;
  bool no_style = false;

  auto add_config = [&](CLI::App* c) { c->add_option("--config", config, "JSON config file (single source of truth)"); };
  auto add_threads = [&](CLI::App* c) {
    c->add_option("--threads", threads, "Worker cap; 0 uses all cores, results never depend on it");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic flood event");
  add_config(synth);
  synth->add_option("--seed", seed, "Event seed");
  synth->add_option("--chips", chips, "Number of chips")->check(CLI::PositiveNumber);
  synth->add_option("--out", out, "Event directory")->required();

  auto* impute = app.add_subcommand("impute", "Build building damage labels from PDE points");
  add_config(impute);
  impute->add_option("--footprints", footprints, "Footprint GeoJSON")->required();
  impute->add_option("--points", points, "PDE points CSV (id,x,y,pde)")->required();
  impute->add_option("--k", k, "Neighbours averaged by kNN imputation");
  impute->add_option("--d", d, "kNN search radius in meters");
  impute->add_option("--kmin", kmin, "Minimum neighbours within d to impute");
  impute->add_option("--out", out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model on an event");
  add_config(train);
  train->add_option("--data", data_dir, "Event directory")->required();
  train->add_option("--labels", labels, "GeoJSON with id and damage_class replacing the event truth");
  train->add_option("--seed", seed, "Training seed (overrides the config)");
  train->add_option("--wiring", wiring, "Ablation wiring 0..4")->check(CLI::Range(0, 4));
  train->add_option("--epochs", epochs, "Epochs (overrides the config)");
  train->add_option("--steps", steps, "Optimizer step cap; 0 means none (overrides the config)");
  add_threads(train);
  train->add_option("--out", out, "Run directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a trained run");
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--data", data_dir, "Event directory")->required();
  eval->add_option("--labels", labels, "GeoJSON with id and damage_class replacing the event truth");
  eval->add_option("--split", split, "train, val, test or all")->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--wiring", wiring, "Expected ablation wiring of the run 0..4")->check(CLI::Range(0, 4));
  add_threads(eval);
  eval->add_option("--out", out, "Report path (default: stdout)");

  auto* predict = app.add_subcommand("predict", "Write per-task class rasters for every chip");
  predict->add_option("--run", run_dir, "Run directory")->required();
  predict->add_option("--data", data_dir, "Event directory")->required();
  add_threads(predict);
  predict->add_option("--out", out, "Prediction directory")->required();

  auto* aggregate = app.add_subcommand("aggregate", "Aggregate predicted BDA rasters over building footprints");
  aggregate->add_option("--pred", pred_dir, "Prediction directory")->required();
  aggregate->add_option("--footprints", footprints, "Footprint GeoJSON")->required();
  aggregate->add_option("--stat", stat, "median, mean, mode or max")
      ->check(CLI::IsMember({"median", "mean", "mode", "max"}));
  aggregate->add_option("--min-pixels", min_pixels, "Buildings with fewer pixels are flagged low_coverage");
  aggregate->add_option("--var-threshold", var_threshold, "Label variance above this flags high_disagreement")
      ->check(CLI::NonNegativeNumber);
  add_threads(aggregate);
  aggregate->add_option("--out", out, "Records GeoJSON")->required();

  auto* exp = app.add_subcommand("export", "Write the styled building damage map");
  exp->add_option("--records", records, "Output of aggregate")->required();
  exp->add_option("--footprints", footprints, "Footprint GeoJSON")->required();
  exp->add_flag("--no-style", no_style, "Omit fill colours and the style rule");
  exp->add_option("--out", out, "Damage map GeoJSON")->required();

  auto* selftest = app.add_subcommand("selftest", "Run the built-in invariant checks");
  selftest->add_option("--out", out, "Report path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : FDS_ERR_USAGE;
  }

  try {
    set_log_level();
    const json cfg = read_config(config);

    if (synth->parsed()) {
      check(fds_synth(out.c_str(), seed, chips, section(cfg, "synth").dump().c_str()));
      spdlog::info("wrote {} chips to {}", chips, out);
    } else if (impute->parsed()) {
      json ic = section(cfg, "impute");
      if (k) ic["k"] = *k;
      if (d) ic["d"] = *d;
      if (kmin) ic["k_min"] = *kmin;
      char* summary = nullptr;
      check(fds_impute(footprints.c_str(), points.c_str(), ic.dump().c_str(), out.c_str(), &summary));
      spdlog::info("labels written to {}", out);
      std::cout << take(summary) << '\n';
    } else if (train->parsed()) {
      json rc = json::object();
      for (const char* s : {"train", "data", "eval"})
        if (cfg.contains(s)) rc[s] = cfg[s];
      json& tc = rc["train"];
      if (tc.is_null()) tc = json::object();
      if (train->count("--seed")) tc["seed"] = seed;
      if (wiring) tc["wiring"] = *wiring;
      if (epochs) tc["epochs"] = *epochs;
      if (steps) tc["max_steps"] = *steps;
      if (train->count("--threads")) tc["threads"] = threads;
      else if (!tc.contains("threads")) tc["threads"] = std::max(1u, std::thread::hardware_concurrency());
      spdlog::info("training on {} -> {}", data_dir, out);
      char* summary = nullptr;
      check(fds_train(data_dir.c_str(), rc.dump().c_str(), labels.empty() ? nullptr : labels.c_str(), out.c_str(),
                      &summary));
      std::cout << take(summary) << '\n';
    } else if (eval->parsed()) {
      if (wiring && *wiring != wiring_of_run(run_dir))
        throw CliError{FDS_ERR_USAGE, "run was trained with wiring " + std::to_string(wiring_of_run(run_dir)) +
                                          ", not " + std::to_string(*wiring)};
      RunHandle run(run_dir);
      char* report = nullptr;
      check(fds_run_evaluate(run.run, data_dir.c_str(), labels.empty() ? nullptr : labels.c_str(), split.c_str(),
                             threads, &report));
      write_or_print(out, take(report));
    } else if (predict->parsed()) {
      RunHandle run(run_dir);
      check(fds_run_predict(run.run, data_dir.c_str(), out.c_str(), threads));
      spdlog::info("predictions written to {}", out);
    } else if (aggregate->parsed()) {
      check(fds_aggregate(pred_dir.c_str(), footprints.c_str(), stat.c_str(), min_pixels, var_threshold, threads,
                           out.c_str()));
      spdlog::info("building records written to {}", out);
    } else if (exp->parsed()) {
      check(fds_export(records.c_str(), footprints.c_str(), no_style ? 0 : 1, out.c_str()));
      spdlog::info("damage map written to {}", out);
    } else if (selftest->parsed()) {
      int passed = 0;
      char* report = nullptr;
      check(fds_selftest(&passed, &report));
      const auto j = json::parse(take(report));
      for (const auto& c : j["checks"])
        std::cout << (c["passed"].get<bool>() ? "PASS " : "FAIL ") << c["name"].get<std::string>() << " ("
                  << c["detail"].get<std::string>() << ")\n";
      if (!out.empty()) write_or_print(out, j.dump(2));
      if (!passed) throw CliError{FDS_ERR_NUMERIC, "selftest failed"};
    }
  } catch (const CliError& e) {
    if (spdlog::default_logger()) spdlog::error("{}", e.message);
    else std::cerr << e.message << '\n';
    return e.code;
  }
  return 0;
}
