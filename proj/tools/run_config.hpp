#ifndef PREGEN_TOOLS_RUN_CONFIG_HPP
#define PREGEN_TOOLS_RUN_CONFIG_HPP

// Experiment configuration shared by every subcommand: one flat key space
// (model.*, train.*, synth.*, eval.*, paths.*, seed, threads) read from a TOML
// file given with --config and overridable with flags of the same name.

#include "pregen/model.hpp"
#include "pregen/synth.hpp"
#include "pregen/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace pregen::cli {

struct RunPaths {
  std::string data_dir = "data";
  std::string train_manifest;  // empty: <data_dir>/train/manifest.jsonl
  std::string test_manifest;   // empty: <data_dir>/test/manifest.jsonl
  std::string out_dir = "run";
  std::string checkpoint;  // empty: <out_dir>/checkpoint.pgck
};

struct EvalSettings {
  std::vector<int> ks{1, 5, 10, 50};
  std::size_t top_n = 10;
  bool exclude_self = false;
  std::string variant;  // empty: the checkpoint's own variant
};

struct RunConfig {
  std::uint64_t seed = 7;
  int threads = 0;  // 0: PREGEN_THREADS, else hardware concurrency
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  EvalSettings eval;
  RunPaths paths;
  std::vector<std::string> ablate_variants{"full", "single_layer", "no_pe", "avg_pool"};

  std::filesystem::path train_manifest() const;
  std::filesystem::path test_manifest() const;
  std::filesystem::path checkpoint() const;
  std::filesystem::path out(const std::string& name) const;

  /// Train/synth configs with the run-wide seed and thread count applied.
  TrainConfig effective_train() const;
  SynthConfig effective_synth() const;
};

/// Registers every config key on `app` plus `--config FILE`.
class ConfigOptions {
 public:
  ConfigOptions(CLI::App& app, RunConfig& config);

  /// Key -> value for every registered key, in registration order.
  nlohmann::ordered_json effective() const;

 private:
  template <typename T>
  void bind(const std::string& key, T& value, const std::string& help);

  CLI::App& app_;
  std::vector<std::pair<std::string, std::function<nlohmann::ordered_json()>>> values_;
};

/// `key = value` lines, loadable again with --config.
std::string format_config_toml(const nlohmann::ordered_json& values);

}  // namespace pregen::cli

#endif  // PREGEN_TOOLS_RUN_CONFIG_HPP
