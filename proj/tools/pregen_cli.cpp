// pregen: synthetic data, training, evaluation and gradient checks for the
// layer-stack aggregator.
//
//   pregen synth-gen --config run.toml
//   pregen train --config run.toml --train.max_steps=2000
//   pregen eval --config run.toml

#include "run_config.hpp"

#include "pregen/batching.hpp"
#include "pregen/checkpoint.hpp"
#include "pregen/feature_store.hpp"
#include "pregen/gradcheck.hpp"
#include "pregen/manifest.hpp"
#include "pregen/retrieval.hpp"
#include "pregen/synth.hpp"
#include "pregen/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

namespace {

using namespace pregen;
using cli::RunConfig;
using nlohmann::ordered_json;

struct Context {
  RunConfig config;
  ordered_json effective;
};

void echo_config(const Context& ctx) {
  std::cout << "# effective config\n" << cli::format_config_toml(ctx.effective) << std::flush;
}

void print_stats(const std::string& label, const DatasetStats& s) {
  std::cout << label << ": " << s.samples << " samples (" << s.queries << " queries, " << s.targets << " targets), "
            << s.triplets << " triplets in " << s.group_keys << " groups\n";
  std::cout << "  group sizes:";
  for (const auto& [size, count] : s.group_size_histogram) std::cout << ' ' << size << "x" << count;
  std::cout << '\n';
  for (const auto& issue : s.errors) std::cout << "  error: " << issue.sample_id << ": " << issue.message << '\n';
}

ModelConfig model_for(const RunConfig& c, const Manifest& m) {
  ModelConfig mc = c.model;
  mc.num_layers = m.num_layers;
  mc.dim = m.dim;
  validate(mc);
  return mc;
}

EvalOptions eval_options(const RunConfig& c) {
  EvalOptions o;
  o.ks = c.eval.ks;
  o.top_n = c.eval.top_n;
  o.exclude_self = c.eval.exclude_self;
  o.threads = c.threads;
  if (!c.eval.variant.empty()) o.variant_override = parse_variant(c.eval.variant);
  return o;
}

void print_step(const StepRecord& r, std::int64_t total) {
  if (r.step % 50 != 0 && r.step + 1 != total) return;
  std::fprintf(stderr, "step %6lld  batch %4zu  loss %.5f  grad_norm %.4f\n", static_cast<long long>(r.step),
               r.batch_size, r.loss, r.grad_norm);
}

std::int64_t planned_steps(const TrainConfig& tc, std::size_t triplets) {
  if (tc.max_steps > 0) return tc.max_steps;
  return static_cast<std::int64_t>((triplets + tc.batch_size - 1) / tc.batch_size) * tc.epochs;
}

int cmd_synth_gen(const Context& ctx) {
  const auto& c = ctx.config;
  const SynthConfig sc = c.effective_synth();
  validate(sc);
  bool ok = true;
  for (auto [split, path] : {std::pair{Split::train, c.train_manifest()}, std::pair{Split::test, c.test_manifest()}}) {
    const auto generated = generate_synthetic_dataset(sc, split);
    write_dataset(generated.dataset, path.parent_path(), path.filename().string());
    const auto stats = validate_dataset(load_manifest(path), path.parent_path());
    print_stats(path.string(), stats);
    ok = ok && stats.ok();
    if (split == Split::test) {
      std::vector<int> all(sc.num_layers);
      for (int l = 0; l < sc.num_layers; ++l) all[l] = l + 1;
      std::printf("  nearest-neighbour R@1 on raw stacks: all layers %.4f, last layer %.4f\n",
                  oracle_nn_recall(generated.dataset, all), oracle_nn_recall(generated.dataset, {sc.num_layers}));
    }
  }
  return ok ? 0 : 1;
}

int cmd_validate(const Context& ctx, const std::vector<std::string>& manifests) {
  std::vector<std::filesystem::path> paths(manifests.begin(), manifests.end());
  if (paths.empty()) paths = {ctx.config.train_manifest(), ctx.config.test_manifest()};
  bool ok = true;
  for (const auto& path : paths) {
    const auto stats = validate_dataset(load_manifest(path), path.parent_path());
    print_stats(path.string(), stats);
    ok = ok && stats.ok();
  }
  return ok ? 0 : 1;
}

int cmd_plan_batches(const Context& ctx) {
  const auto& c = ctx.config;
  const TrainConfig tc = c.effective_train();
  validate(tc);
  const Manifest m = load_manifest(c.train_manifest());
  const BatchPlan plan = build_batches(m.triplets, tc.batch_size, epoch_seed(tc.seed, 0), tc.hard_negatives);
  const auto path = c.out("batch_plan.txt");
  write_file_atomic(path, format_batch_plan(plan));
  std::cout << path.string() << ": " << plan.batches.size() << " batches, mode "
            << (plan.hard_negatives ? "hard" : "random") << ", " << same_group_pairs(plan, m.triplets)
            << " same-group pairs, " << plan.dropped.size() << " dropped\n";
  return 0;
}

int cmd_train(const Context& ctx) {
  const auto& c = ctx.config;
  const TrainConfig tc = c.effective_train();
  validate(tc);
  const Dataset data = load_dataset(c.train_manifest());
  const ModelConfig mc = model_for(c, data.manifest());
  const auto total = planned_steps(tc, data.manifest().triplets.size());
  const TrainResult result = train(data, mc, tc, [total](const StepRecord& r) { print_step(r, total); });

  save_checkpoint(result.params, result.model_config, c.checkpoint());
  write_file_atomic(c.out("batch_plan.txt"), format_batch_plan(result.first_plan));
  write_file_atomic(c.out("config.toml"), cli::format_config_toml(ctx.effective));
  std::string log = ordered_json{{"config", ctx.effective}}.dump() + '\n' + format_training_log(result.log);
  write_file_atomic(c.out("train_log.jsonl"), log);
  for (const auto& note : result.log.notes) std::cerr << "note: " << note << '\n';
  std::cout << "checkpoint " << c.checkpoint().string() << " after " << result.log.steps.size() << " steps, final loss "
            << (result.log.steps.empty() ? 0.0 : result.log.steps.back().loss) << '\n';
  return 0;
}

int cmd_embed(const Context& ctx) {
  const auto& c = ctx.config;
  const Checkpoint ck = load_checkpoint(c.checkpoint());
  const Dataset data = load_dataset(c.test_manifest());
  for (auto [role, name] : {std::pair{Role::query, "embeddings_query.jsonl"}, std::pair{Role::target, "embeddings_target.jsonl"}}) {
    const auto embeddings = embed_corpus(data, role, ck.params, ck.config, c.threads);
    write_file_atomic(c.out(name), format_embeddings_jsonl(embeddings));
    std::cout << c.out(name).string() << ": " << embeddings.ids.size() << " x " << embeddings.rows.cols() << '\n';
  }
  return 0;
}

int cmd_eval(const Context& ctx) {
  const auto& c = ctx.config;
  const Checkpoint ck = load_checkpoint(c.checkpoint());
  const Dataset test = load_dataset(c.test_manifest());
  const RetrievalReport report = evaluate(test, ck.params, ck.config, eval_options(c));
  const std::string table = format_report_table(report);
  write_file_atomic(c.out("report.jsonl"), format_report_jsonl(report));
  write_file_atomic(c.out("report.txt"), table);
  std::cout << table;
  return 0;
}

int cmd_ablate(const Context& ctx) {
  const auto& c = ctx.config;
  const Dataset train_data = load_dataset(c.train_manifest());
  const Dataset test = load_dataset(c.test_manifest());
  EvalOptions options = eval_options(c);
  options.ks = {1, 5, 10, 50};

  std::vector<Variant> variants;
  for (const auto& name : c.ablate_variants) variants.push_back(parse_variant(name));
  std::ostringstream table, records;
  char cell[96];
  std::snprintf(cell, sizeof(cell), "%-14s %-9s %8s %8s %8s %8s\n", "variant", "batching", "R@1", "R@5", "R@10", "R@50");
  table << cell;
  for (Variant v : variants) {
    for (bool hard : {true, false}) {
      ModelConfig mc = model_for(c, train_data.manifest());
      mc.variant = v;
      TrainConfig tc = c.effective_train();
      tc.hard_negatives = hard;
      validate(tc);
      std::cerr << "== " << to_string(v) << " / " << (hard ? "hard" : "random") << '\n';
      const auto total = planned_steps(tc, train_data.manifest().triplets.size());
      const TrainResult trained = train(train_data, mc, tc, [total](const StepRecord& r) { print_step(r, total); });
      const RetrievalReport report = evaluate(test, trained.params, trained.model_config, options);
      const auto& r = report.recall;
      std::snprintf(cell, sizeof(cell), "%-14s %-9s %8.2f %8.2f %8.2f %8.2f\n", to_string(v).c_str(),
                    hard ? "hard" : "random", 100 * r.at(1), 100 * r.at(5), 100 * r.at(10), 100 * r.at(50));
      table << cell;
      ordered_json recall = ordered_json::object();
      for (const auto& [k, value] : r) recall[std::to_string(k)] = value;
      records << ordered_json{{"variant", to_string(v)}, {"batching", hard ? "hard" : "random"}, {"recall", recall}}.dump()
              << '\n';
    }
  }
  write_file_atomic(c.out("ablation.txt"), table.str());
  write_file_atomic(c.out("ablation.jsonl"), records.str());
  std::cout << table.str();
  return 0;
}

int cmd_gradcheck(const Context& ctx, const std::string& corrupt_tensor) {
  GradcheckConfig gc;
  gc.seed = ctx.config.seed;
  gc.model.variant = ctx.config.model.variant;
  gc.corrupt_tensor = corrupt_tensor;
  const GradcheckReport report = run_gradcheck(gc);
  std::cout << format_gradcheck_report(report);
  for (const auto& t : report.tensors) {
    if (!t.passed) std::cerr << "gradient mismatch in " << t.name << '\n';
  }
  return report.passed ? 0 : 1;
}

struct Command {
  const char* name;
  const char* help;
};

constexpr Command kCommands[] = {
    {"synth-gen", "generate the synthetic train and test datasets"},
    {"validate", "check manifests and every stack they reference"},
    {"plan-batches", "export the first-epoch batch plan"},
    {"train", "train and write checkpoint, batch plan and log"},
    {"embed", "write normalised embeddings of the test corpus"},
    {"eval", "rank the test targets for every test query"},
    {"ablate", "train and evaluate each variant with hard and random batching"},
    {"gradcheck", "compare analytic gradients with finite differences"},
};

void usage(std::ostream& out) {
  out << "usage: pregen <command> [--config FILE] [--key=value ...]\n\ncommands:\n";
  for (const auto& c : kCommands) {
    char line[128];
    std::snprintf(line, sizeof(line), "  %-14s %s\n", c.name, c.help);
    out << line;
  }
  out << "\nRun 'pregen <command> --help' for the full key list.\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage(std::cerr);
    return 2;
  }
  const std::string name = argv[1];
  if (name == "-h" || name == "--help") {
    usage(std::cout);
    return 0;
  }
  const Command* command = nullptr;
  for (const auto& c : kCommands) {
    if (name == c.name) command = &c;
  }
  if (!command) {
    std::cerr << "pregen: unknown command '" << name << "'\n";
    usage(std::cerr);
    return 2;
  }

  Context ctx;
  CLI::App app{command->help, "pregen " + name};
  cli::ConfigOptions options(app, ctx.config);
  std::vector<std::string> manifests;
  std::string corrupt_tensor;
  if (name == "validate") app.add_option("manifests", manifests, "manifest files (default: train and test)");
  if (name == "gradcheck") {
    app.add_option("--corrupt-tensor", corrupt_tensor, "test hook: perturb this tensor's analytic gradient")
        ->group("");
  }
  try {
    app.parse(argc - 1, argv + 1);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  ctx.effective = options.effective();

  try {
    echo_config(ctx);
    if (name == "synth-gen") return cmd_synth_gen(ctx);
    if (name == "validate") return cmd_validate(ctx, manifests);
    if (name == "plan-batches") return cmd_plan_batches(ctx);
    if (name == "train") return cmd_train(ctx);
    if (name == "embed") return cmd_embed(ctx);
    if (name == "eval") return cmd_eval(ctx);
    if (name == "ablate") return cmd_ablate(ctx);
    return cmd_gradcheck(ctx, corrupt_tensor);
  } catch (const std::exception& e) {
    std::cerr << "pregen " << name << ": error: " << e.what() << '\n';
    return 1;
  }
}
