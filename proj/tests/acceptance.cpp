// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
//   pregen_acceptance            all criteria
//   pregen_acceptance retrieval  only criteria whose name contains "retrieval"

#include "pregen/batching.hpp"
#include "pregen/checkpoint.hpp"
#include "pregen/feature_store.hpp"
#include "pregen/gradcheck.hpp"
#include "pregen/loss.hpp"
#include "pregen/retrieval.hpp"
#include "pregen/synth.hpp"
#include "pregen/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

using namespace pregen;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

// Every report produced during the run, for the monotonicity check.
std::vector<RetrievalReport> g_reports;

bool monotone(const RetrievalReport& r) {
  double prev = 0.0;
  for (const auto& [k, value] : r.recall) {
    if (value < prev) return false;
    prev = value;
  }
  return true;
}

// ---- synthetic ablation fixture -------------------------------------------

constexpr int kSeeds = 5;

SynthConfig fixture(std::uint64_t seed) {
  SynthConfig s;  // L=4, A=4, C=64, g=3, sigma=0.05, d=32
  s.seed = seed;
  return s;
}

ModelConfig fixture_model(Variant variant) {
  ModelConfig m;
  m.num_layers = 4;
  m.dim = 32;
  m.mlp_hidden = 64;
  m.variant = variant;
  return m;
}

TrainConfig fixture_train(std::uint64_t seed, bool hard) {
  TrainConfig t;
  t.batch_size = 32;
  t.max_steps = 2000;
  t.learning_rate = 1e-3;
  t.hard_negatives = hard;
  t.seed = seed;
  return t;
}

struct SeedRun {
  double full_hard = 0.0;
  double single_hard = 0.0;
  double full_random = 0.0;
};

std::vector<SeedRun> g_runs;
double g_ablation_seconds = 0.0;

double train_and_eval(const Dataset& train_data, const Dataset& test, Variant variant, std::uint64_t seed, bool hard) {
  const auto result = train(train_data, fixture_model(variant), fixture_train(seed, hard));
  auto report = evaluate(test, result.params, result.model_config);
  const double r1 = report.recall.at(1);
  g_reports.push_back(std::move(report));
  return r1;
}

void run_ablation_fixture() {
  if (!g_runs.empty()) return;
  const auto start = Clock::now();
  for (int s = 1; s <= kSeeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(s);
    const auto train_data = generate_synthetic_dataset(fixture(seed), Split::train).dataset;
    const auto test = generate_synthetic_dataset(fixture(seed), Split::test).dataset;
    SeedRun run;
    run.full_hard = train_and_eval(train_data, test, Variant::full, seed, true);
    run.single_hard = train_and_eval(train_data, test, Variant::single_layer, seed, true);
    run.full_random = train_and_eval(train_data, test, Variant::full, seed, false);
    std::fprintf(stderr, "  seed %d: R@1 full/hard %.4f  single_layer/hard %.4f  full/random %.4f\n", s, run.full_hard,
                 run.single_hard, run.full_random);
    g_runs.push_back(run);
  }
  g_ablation_seconds = seconds_since(start);
}

// ---- criteria ---------------------------------------------------------------

Outcome gradient_oracle() {
  const auto start = Clock::now();
  GradcheckConfig c;  // L=6, d=16, heads 4, B=4, double
  c.model.num_layers = 6;
  c.model.dim = 16;
  c.model.heads = 4;
  c.batch_size = 4;
  c.tolerance = 1e-4;
  const auto report = run_gradcheck(c);
  const double elapsed = seconds_since(start);
  std::string worst;
  double worst_error = -1.0;
  for (const auto& t : report.tensors) {
    if (t.rel_error > worst_error) {
      worst_error = t.rel_error;
      worst = t.name;
    }
  }
  return {report.passed && report.worst_rel_error <= 1e-4 && elapsed < 60.0,
          fmt("%zu tensors, worst rel %.2e (%s), %.1f s", report.tensors.size(), report.worst_rel_error,
              worst.c_str(), elapsed)};
}

Outcome loss_closed_forms() {
  const double b1 = info_nce<double>(Matrix<double>::Constant(1, 1, 0.7), 0.05).loss;
  const double constant = info_nce<double>(Matrix<double>::Constant(4, 4, 0.3), 0.05).loss;
  const double identity = info_nce<double>(Matrix<double>::Identity(2, 2), 1.0).loss;
  // Each row/column of I: -log(e / (e + 1)) = log(1 + 1/e).
  const double identity_expected = std::log1p(std::exp(-1.0));
  const bool ok = b1 == 0.0 && std::abs(constant - std::log(4.0)) <= 1e-6 && std::abs(identity - 0.313262) <= 1e-6 &&
                  std::abs(identity - identity_expected) <= 1e-12;
  return {ok, fmt("B=1 %.1f, constant B=4 %.6f (ln 4 = %.6f), identity B=2 %.6f", b1, constant, std::log(4.0),
                  identity)};
}

Outcome multi_vs_single_layer() {
  run_ablation_fixture();
  int full_ok = 0, single_ok = 0, both = 0;
  std::string cells;
  for (const auto& r : g_runs) {
    full_ok += r.full_hard >= 0.90;
    single_ok += r.single_hard <= 0.50;
    both += r.full_hard >= 0.90 && r.single_hard <= 0.50;
    cells += fmt(" %.3f/%.3f", r.full_hard, r.single_hard);
  }
  return {both >= 4 && g_ablation_seconds < 600.0,
          fmt("full>=0.90 in %d/5, single<=0.50 in %d/5, both in %d/5; R@1 full/single:%s; %.0f s for 15 runs",
              full_ok, single_ok, both, cells.c_str(), g_ablation_seconds)};
}

Outcome hard_negative_batching() {
  run_ablation_fixture();
  int wins = 0;
  std::string cells;
  for (const auto& r : g_runs) {
    wins += r.full_hard >= r.full_random;
    cells += fmt(" %.3f/%.3f", r.full_hard, r.full_random);
  }

  const auto triplets = generate_synthetic_dataset(fixture(1)).dataset.manifest().triplets;
  double random_mean = 0.0;
  std::size_t hard_min = SIZE_MAX;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    random_mean += static_cast<double>(same_group_pairs(build_batches(triplets, 32, seed, false), triplets));
    hard_min = std::min(hard_min, same_group_pairs(build_batches(triplets, 32, seed, true), triplets));
  }
  random_mean /= 20.0;
  return {wins >= 4 && static_cast<double>(hard_min) > random_mean,
          fmt("hard>=random R@1 in %d/5 (hard/random:%s); same-group pairs hard min %zu vs random mean %.2f over 20 "
              "seeds",
              wins, cells.c_str(), hard_min, random_mean)};
}

Outcome permutation_invariance() {
  SynthConfig sc = fixture(3);
  sc.noise_sigma = 0.0;
  const auto data = generate_synthetic_dataset(sc).dataset;
  const auto no_pe = fixture_model(Variant::no_pe).resolved();
  const auto full = fixture_model(Variant::full).resolved();
  const auto params = init_params<double>(full, 21);

  std::vector<int> order(4);
  std::iota(order.begin(), order.end(), 0);
  double worst_no_pe = 0.0, smallest_full = INFINITY;
  for (std::size_t i = 0; i < data.stacks().size(); i += 37) {
    const Matrix<double> x = data.stacks()[i].data.cast<double>();
    const Vector<double> base_no_pe = forward(x, params, no_pe, Mode::eval);
    const Vector<double> base_full = forward(x, params, full, Mode::eval);
    std::vector<int> perm = order;
    while (std::next_permutation(perm.begin(), perm.end())) {
      Matrix<double> permuted(x.rows(), x.cols());
      for (int r = 0; r < 4; ++r) permuted.row(r) = x.row(perm[r]);
      const Vector<double> e = forward(permuted, params, no_pe, Mode::eval);
      worst_no_pe = std::max(worst_no_pe, (e - base_no_pe).norm() / base_no_pe.norm());
      smallest_full = std::min(smallest_full, (forward(permuted, params, full, Mode::eval) - base_full).norm());
    }
  }
  return {worst_no_pe <= 1e-5 && smallest_full > 1e-3,
          fmt("23 permutations x 11 stacks: no_pe worst rel change %.2e, full smallest change %.2e", worst_no_pe,
              smallest_full)};
}

// Rows of raw (unnormalised) embeddings, double.
Matrix<double> raw_embeddings(const Dataset& data, Role role, const ModelParams<float>& params, const ModelConfig& c,
                              std::vector<std::string>& ids) {
  std::vector<Vector<double>> rows;
  for (std::size_t i = 0; i < data.manifest().samples.size(); ++i) {
    if (data.manifest().samples[i].role != role) continue;
    ids.push_back(data.manifest().samples[i].sample_id);
    const Matrix<float> x = data.stacks()[i].data;
    rows.push_back(forward(x, params, c, Mode::eval).cast<double>());
  }
  Matrix<double> out(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return out;
}

EmbeddingMatrix normalised(const std::vector<std::string>& ids, const Matrix<double>& raw, double scale) {
  EmbeddingMatrix e{ids, raw * scale};
  for (Eigen::Index i = 0; i < e.rows.rows(); ++i) e.rows.row(i) /= e.rows.row(i).norm();
  return e;
}

Outcome retrieval_correctness() {
  // 250 concepts x 4 targets: 1000 queries, 1000 targets.
  SynthConfig sc;
  sc.num_layers = 5;
  sc.dim = 16;
  sc.alphabet_size = 5;
  sc.num_concepts = 250;
  sc.group_size = 4;
  sc.noise_sigma = 0.3;
  const auto data = generate_synthetic_dataset(sc, Split::test).dataset;
  ModelConfig mc;
  mc.num_layers = 5;
  mc.dim = 16;
  mc.heads = 4;
  mc.mlp_hidden = 64;
  mc = mc.resolved();
  const auto params = init_params<float>(mc, 5);
  EvalOptions options;
  options.ks = {1, 5, 10, 50, 100, 500, 1000};
  const auto report = evaluate(data, params, mc, options);
  g_reports.push_back(report);

  // Brute force: cosine of raw embeddings, a.b / (|a| |b|), all in double.
  std::vector<std::string> qids, tids;
  const Matrix<double> q = raw_embeddings(data, Role::query, params, mc, qids);
  const Matrix<double> t = raw_embeddings(data, Role::target, params, mc, tids);
  const Vector<double> qn = q.rowwise().norm(), tn = t.rowwise().norm();
  std::map<std::string, Eigen::Index> qpos, tpos;
  for (std::size_t i = 0; i < qids.size(); ++i) qpos[qids[i]] = static_cast<Eigen::Index>(i);
  for (std::size_t i = 0; i < tids.size(); ++i) tpos[tids[i]] = static_cast<Eigen::Index>(i);
  const auto& triplets = data.manifest().triplets;
  std::vector<std::size_t> ranks;
  std::size_t rank_mismatches = 0;
  for (std::size_t n = 0; n < triplets.size(); ++n) {
    const Eigen::Index qi = qpos.at(triplets[n].query_id), gt = tpos.at(triplets[n].target_id);
    auto cosine = [&](Eigen::Index j) { return q.row(qi).dot(t.row(j)) / (qn(qi) * tn(j)); };
    const double own = cosine(gt);
    std::size_t ahead = 0;
    for (Eigen::Index j = 0; j < t.rows(); ++j) {
      const double s = cosine(j);
      if (s > own || (s == own && tids[static_cast<std::size_t>(j)] < tids[static_cast<std::size_t>(gt)])) ++ahead;
    }
    ranks.push_back(ahead + 1);
    rank_mismatches += report.queries[n].rank != ahead + 1;
  }
  std::size_t recall_mismatches = 0;
  for (int k : options.ks) {
    std::size_t hits = 0;
    for (auto r : ranks) hits += r <= static_cast<std::size_t>(k);
    recall_mismatches += report.recall.at(k) != static_cast<double>(hits) / static_cast<double>(ranks.size());
  }

  // Uniform positive scaling of raw embeddings, through the embedding path and through the model's head.
  std::size_t scale_mismatches = 0;
  for (double c : {1.0, 1e-3, 0.37, 3.7, 1e3}) {
    const auto scaled = evaluate_embeddings(data.manifest(), normalised(qids, q, c), normalised(tids, t, c), options);
    scale_mismatches += !(scaled == report);
  }
  for (float c : {0.25f, 4.0f}) {
    auto p = params;
    p.head.back().weight *= c;
    p.head.back().bias *= c;
    scale_mismatches += !(evaluate(data, p, mc, options) == report);
  }

  std::size_t non_monotone = 0;
  for (const auto& r : g_reports) non_monotone += !monotone(r);

  return {triplets.size() == 1000 && report.num_targets == 1000 && rank_mismatches == 0 && recall_mismatches == 0 &&
              scale_mismatches == 0 && non_monotone == 0,
          fmt("1000 x 1000: %zu rank / %zu recall mismatches vs brute force (R@1 %.3f, R@50 %.3f); %zu of 7 "
              "rescalings differ; %zu of %zu reports non-monotone",
              rank_mismatches, recall_mismatches, report.recall.at(1), report.recall.at(50), scale_mismatches,
              non_monotone, g_reports.size())};
}

std::string read_text(const std::filesystem::path& p) {
  const auto bytes = read_file_bytes(p);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename E, typename K>
bool rejects(const std::function<void()>& f, K kind) {
  try {
    f();
  } catch (const E& e) {
    return e.kind() == kind;
  }
  return false;
}

Outcome determinism_and_formats() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  const auto root = std::filesystem::temp_directory_path() / ("pregen-acceptance-" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(root);

  // Datasets: two generations, every file byte-identical.
  SynthConfig sc = fixture(9);
  sc.num_concepts = 16;
  std::size_t files = 0, differing = 0;
  for (const char* run : {"a", "b"}) {
    for (Split split : {Split::train, Split::test}) {
      write_dataset(generate_synthetic_dataset(sc, split).dataset, root / run / to_string(split));
    }
  }
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    differing += read_text(entry.path()) != read_text(root / "b" / std::filesystem::relative(entry.path(), root / "a"));
  }
  expect(files > 0 && differing == 0, "datasets");

  const Dataset train_data = load_dataset(root / "a/train/manifest.jsonl");
  const Dataset test = load_dataset(root / "a/test/manifest.jsonl");
  const auto& triplets = train_data.manifest().triplets;

  // Batch plans, both modes, plus text round trip.
  for (bool hard : {true, false}) {
    const auto a = format_batch_plan(build_batches(triplets, 8, 4, hard));
    expect(a == format_batch_plan(build_batches(triplets, 8, 4, hard)), "batch plan");
    std::istringstream in(a);
    expect(format_batch_plan(parse_batch_plan(in)) == a, "batch plan round trip");
  }

  // Checkpoints and reports from two training runs.
  TrainConfig tc = fixture_train(9, true);
  tc.batch_size = 8;
  tc.max_steps = 40;
  ModelConfig mc = fixture_model(Variant::full);
  mc.mlp_hidden = 32;
  const auto first = train(train_data, mc, tc);
  const auto second = train(train_data, mc, tc);
  const auto ck = encode_checkpoint(first.params, first.model_config);
  expect(ck == encode_checkpoint(second.params, second.model_config), "checkpoint");
  const auto report_a = format_report_jsonl(evaluate(test, first.params, first.model_config));
  const auto report_b = format_report_jsonl(evaluate(test, second.params, second.model_config));
  expect(report_a == report_b, "eval report");

  // Round trips.
  const Checkpoint back = decode_checkpoint(ck, &first.model_config);
  expect(encode_checkpoint(back.params, back.config) == ck, "checkpoint round trip");
  save_checkpoint(first.params, first.model_config, root / "model.pgck");
  expect(read_file_bytes(root / "model.pgck") == ck, "checkpoint file");
  const LayerStack& stack = train_data.stacks().front();
  const auto stack_bytes = encode_stack(stack);
  const LayerStack stack_back = read_stack(stack_bytes);
  expect(stack_back.sample_id == stack.sample_id && stack_back.data == stack.data &&
             encode_stack(stack_back) == stack_bytes,
         "stack round trip");

  // Corruption.
  using SK = StackFormatError::Kind;
  using CK = CheckpointError::Kind;
  auto flipped = ck;
  flipped[ck.size() / 2] ^= std::byte{0x01};
  expect(rejects<CheckpointError>([&] { decode_checkpoint(flipped); }, CK::checksum), "checkpoint bit flip");
  expect(rejects<CheckpointError>([&] { decode_checkpoint(std::span(ck.data(), ck.size() - 3)); }, CK::truncated),
         "checkpoint truncation");
  auto bad_magic = ck;
  bad_magic[0] = std::byte{'X'};
  expect(rejects<CheckpointError>([&] { decode_checkpoint(bad_magic); }, CK::bad_magic), "checkpoint magic");
  ModelConfig other = first.model_config;
  other.mlp_hidden = 16;
  expect(rejects<CheckpointError>([&] { decode_checkpoint(ck, &other); }, CK::shape), "checkpoint shape");

  auto bad_stack = stack_bytes;
  bad_stack[1] = std::byte{'Z'};
  expect(rejects<StackFormatError>([&] { read_stack(bad_stack); }, SK::bad_magic), "stack magic");
  expect(rejects<StackFormatError>([&] { read_stack(std::span(stack_bytes.data(), stack_bytes.size() - 4)); },
                                   SK::truncated),
         "stack truncation");
  auto nan_stack = stack_bytes;
  const float nan = NAN;
  std::memcpy(nan_stack.data() + nan_stack.size() - 4, &nan, 4);
  expect(rejects<StackFormatError>([&] { read_stack(nan_stack); }, SK::non_finite), "stack NaN");
  auto version = stack_bytes;
  version[4] = std::byte{9};
  expect(rejects<StackFormatError>([&] { read_stack(version); }, SK::unsupported_version), "stack version");

  std::filesystem::remove_all(root);
  std::string detail = fmt("%zu dataset files, plans, checkpoint, report byte-identical; round trips bit-exact; 8 "
                           "corruptions rejected",
                           files);
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " [" + f + "]";
  }
  return {failures.empty(), detail};
}

struct Criterion {
  const char* name;
  Outcome (*run)();
};

constexpr Criterion kCriteria[] = {
    {"gradient-oracle", gradient_oracle},
    {"loss-closed-forms", loss_closed_forms},
    {"permutation-invariance", permutation_invariance},
    {"multi-vs-single-layer", multi_vs_single_layer},
    {"hard-negative-batching", hard_negative_batching},
    {"retrieval-correctness", retrieval_correctness},
    {"determinism-and-formats", determinism_and_formats},
};

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  int failed = 0, ran = 0;
  for (const auto& c : kCriteria) {
    if (!filter.empty() && std::string(c.name).find(filter) == std::string::npos) continue;
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    ++ran;
    failed += !outcome.passed;
    std::cout << (outcome.passed ? "PASS " : "FAIL ") << c.name << ": " << outcome.detail << std::endl;
  }
  std::cout << (ran - failed) << "/" << ran << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
