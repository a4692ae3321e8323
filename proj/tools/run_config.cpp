#include "run_config.hpp"

#include <map>
#include <sstream>

namespace pregen::cli {

std::filesystem::path RunConfig::train_manifest() const {
  if (!paths.train_manifest.empty()) return paths.train_manifest;
  return std::filesystem::path(paths.data_dir) / "train" / "manifest.jsonl";
}

std::filesystem::path RunConfig::test_manifest() const {
  if (!paths.test_manifest.empty()) return paths.test_manifest;
  return std::filesystem::path(paths.data_dir) / "test" / "manifest.jsonl";
}

std::filesystem::path RunConfig::checkpoint() const {
  if (!paths.checkpoint.empty()) return paths.checkpoint;
  return out("checkpoint.pgck");
}

std::filesystem::path RunConfig::out(const std::string& name) const {
  return std::filesystem::path(paths.out_dir) / name;
}

TrainConfig RunConfig::effective_train() const {
  TrainConfig t = train;
  t.seed = seed;
  t.threads = threads;
  return t;
}

SynthConfig RunConfig::effective_synth() const {
  SynthConfig s = synth;
  s.seed = seed;
  return s;
}

template <typename T>
void ConfigOptions::bind(const std::string& key, T& value, const std::string& help) {
  auto* option = app_.add_option("--" + key, value, help)->capture_default_str();
  if constexpr (CLI::detail::is_mutable_container<T>::value) option->delimiter(',');
  values_.emplace_back(key, [&value] { return nlohmann::ordered_json(value); });
}

template <>
void ConfigOptions::bind(const std::string& key, Variant& value, const std::string& help) {
  const std::map<std::string, Variant> names{{"full", Variant::full},
                                             {"single_layer", Variant::single_layer},
                                             {"no_pe", Variant::no_pe},
                                             {"avg_pool", Variant::avg_pool}};
  app_.add_option("--" + key, value, help)->transform(CLI::CheckedTransformer(names))->default_str(to_string(value));
  values_.emplace_back(key, [&value] { return nlohmann::ordered_json(to_string(value)); });
}

ConfigOptions::ConfigOptions(CLI::App& app, RunConfig& c) : app_(app) {
  app.config_formatter(std::make_shared<CLI::ConfigTOML>());
  // Keys are flat and dotted; keep CLI11 from reading the dots as sections.
  app.get_config_formatter_base()->parentSeparator('\x01');
  app.set_config("--config", "", "TOML file of key = value settings; flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);

  bind("seed", c.seed, "seed for data generation, initialisation, batching and dropout");
  bind("threads", c.threads, "worker threads (0: PREGEN_THREADS or all cores)");

  bind("model.heads", c.model.heads, "attention heads");
  bind("model.encoder_depth", c.model.encoder_depth, "encoder blocks");
  bind("model.ffn_dim", c.model.ffn_dim, "encoder FFN width (0: 4 x dim)");
  bind("model.mlp_depth", c.model.mlp_depth, "linear layers in the projection head");
  bind("model.mlp_hidden", c.model.mlp_hidden, "projection head hidden width");
  bind("model.output_dim", c.model.output_dim, "embedding dimension (0: dim)");
  bind("model.dropout", c.model.dropout, "dropout probability");
  bind("model.variant", c.model.variant, "full, single_layer, no_pe or avg_pool");

  bind("train.batch_size", c.train.batch_size, "triplets per batch");
  bind("train.learning_rate", c.train.learning_rate, "AdamW learning rate");
  bind("train.weight_decay", c.train.weight_decay, "AdamW decoupled weight decay");
  bind("train.epochs", c.train.epochs, "passes over the training triplets");
  bind("train.max_steps", c.train.max_steps, "stop after this many steps (0: run all epochs)");
  bind("train.grad_clip", c.train.grad_clip, "global gradient norm limit");
  bind("train.temperature", c.train.temperature, "InfoNCE temperature");
  bind("train.beta1", c.train.beta1, "AdamW beta1");
  bind("train.beta2", c.train.beta2, "AdamW beta2");
  bind("train.eps", c.train.eps, "AdamW epsilon");
  bind("train.hard_negatives", c.train.hard_negatives, "batch triplets that share a source together");

  bind("synth.num_layers", c.synth.num_layers, "layers per stack");
  bind("synth.dim", c.synth.dim, "hidden size per layer");
  bind("synth.alphabet_size", c.synth.alphabet_size, "symbols per layer");
  bind("synth.num_concepts", c.synth.num_concepts, "source concepts");
  bind("synth.group_size", c.synth.group_size, "targets per concept");
  bind("synth.noise_sigma", c.synth.noise_sigma, "Gaussian noise added to every entry");

  bind("eval.ks", c.eval.ks, "recall cutoffs");
  bind("eval.top_n", c.eval.top_n, "ranked ids recorded per query");
  bind("eval.exclude_self", c.eval.exclude_self, "drop each query's own source from its gallery");
  bind("eval.variant", c.eval.variant, "evaluate with this variant instead of the checkpoint's");

  bind("ablate.variants", c.ablate_variants, "variants to train and compare");

  bind("paths.data_dir", c.paths.data_dir, "synthetic dataset root");
  bind("paths.train_manifest", c.paths.train_manifest, "training manifest (default <data_dir>/train)");
  bind("paths.test_manifest", c.paths.test_manifest, "evaluation manifest (default <data_dir>/test)");
  bind("paths.out_dir", c.paths.out_dir, "directory for checkpoints, plans, logs and reports");
  bind("paths.checkpoint", c.paths.checkpoint, "checkpoint file (default <out_dir>/checkpoint.pgck)");
}

nlohmann::ordered_json ConfigOptions::effective() const {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  for (const auto& [key, value] : values_) out[key] = value();
  return out;
}

std::string format_config_toml(const nlohmann::ordered_json& values) {
  std::ostringstream out;
  for (const auto& [key, value] : values.items()) out << key << " = " << value.dump() << '\n';
  return out.str();
}

}  // namespace pregen::cli
