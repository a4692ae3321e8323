#ifndef PREGEN_TRAIN_HPP
#define PREGEN_TRAIN_HPP

#include "pregen/batching.hpp"
#include "pregen/loss.hpp"
#include "pregen/manifest.hpp"
#include "pregen/model.hpp"
#include "pregen/optim.hpp"
#include "pregen/parallel.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace pregen {

struct TrainConfig {
  std::size_t batch_size = 1024;
  double learning_rate = 5e-5;
  double weight_decay = 0.05;
  int epochs = 1;
  std::int64_t max_steps = 0;  // > 0: train exactly this many steps, cycling epochs
  double grad_clip = 1.0;
  double temperature = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool hard_negatives = true;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: default_thread_count()
};

void validate(const TrainConfig& config);
AdamWConfig adamw_config(const TrainConfig& config);
/// Planner seed for a given epoch; epoch 0 uses the run seed itself.
std::uint64_t epoch_seed(std::uint64_t seed, int epoch);

/// Dropout streams are keyed by (seed, step, tower, position in batch).
struct DropoutKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

/// Symmetric InfoNCE over one batch: every query and target stack goes through
/// the same params, S holds their cosines. When `grads` is non-null the
/// parameter gradients are accumulated into it; `grad_queries` and
/// `grad_targets`, when non-null, receive the gradients wrt the input stacks.
/// Results do not depend on `threads`.
template <typename Scalar>
Scalar batch_loss(const std::vector<const Matrix<Scalar>*>& queries, const std::vector<const Matrix<Scalar>*>& targets,
                  const ModelParams<Scalar>& params, const ModelConfig& config, double temperature, Mode mode,
                  DropoutKey key, ModelParams<Scalar>* grads = nullptr,
                  std::vector<Matrix<Scalar>>* grad_queries = nullptr,
                  std::vector<Matrix<Scalar>>* grad_targets = nullptr, int threads = 1);

struct StepRecord {
  std::int64_t step = 0;
  std::size_t batch_size = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double wall_seconds = 0.0;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<std::string> notes;
};

std::string format_training_log(const TrainingLog& log);

struct TrainResult {
  ModelConfig model_config;
  ModelParams<float> params;
  TrainingLog log;
  BatchPlan first_plan;
};

/// Trains from init_params(model_config, train_config.seed). Deterministic given the configs.
TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& train_config,
                  const std::function<void(const StepRecord&)>& on_step = {});

// ---------------------------------------------------------------------------

template <typename Scalar>
Scalar batch_loss(const std::vector<const Matrix<Scalar>*>& queries, const std::vector<const Matrix<Scalar>*>& targets,
                  const ModelParams<Scalar>& params, const ModelConfig& config, double temperature, Mode mode,
                  DropoutKey key, ModelParams<Scalar>* grads, std::vector<Matrix<Scalar>>* grad_queries,
                  std::vector<Matrix<Scalar>>* grad_targets, int threads) {
  const std::size_t batch = queries.size();
  if (batch == 0 || targets.size() != batch) throw Error("batch_loss: need equally many queries and targets");
  const std::size_t samples = 2 * batch;
  const bool need_grads = grads || grad_queries || grad_targets;

  auto input = [&](std::size_t s) -> const Matrix<Scalar>& { return s < batch ? *queries[s] : *targets[s - batch]; };
  std::vector<Vector<Scalar>> embeddings(samples);
  std::vector<ForwardCache<Scalar>> caches(need_grads ? samples : 0);
  parallel_for(samples, threads, [&](std::size_t s) {
    std::seed_seq seed{key.seed, key.step, static_cast<std::uint64_t>(s / batch), static_cast<std::uint64_t>(s % batch)};
    std::mt19937_64 rng(seed);
    embeddings[s] = forward(input(s), params, config, mode, &rng, need_grads ? &caches[s] : nullptr);
  });

  const Eigen::Index out_dim = embeddings.front().size();
  Matrix<Scalar> q(batch, out_dim), t(batch, out_dim);
  for (std::size_t i = 0; i < batch; ++i) {
    q.row(i) = embeddings[i].transpose();
    t.row(i) = embeddings[batch + i].transpose();
  }
  const auto objective = info_nce(similarity_matrix(q, t), temperature);
  if (!need_grads) return objective.loss;

  Matrix<Scalar> dq, dt;
  similarity_backward(objective.grad, q, t, dq, dt);

  // Fixed-size chunks summed in index order keep results independent of the thread count.
  constexpr std::size_t kChunk = 8;
  const std::size_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<ModelParams<Scalar>> partial(grads ? chunks : 0);
  if (grad_queries) grad_queries->assign(batch, Matrix<Scalar>());
  if (grad_targets) grad_targets->assign(batch, Matrix<Scalar>());
  parallel_for(chunks, threads, [&](std::size_t c) {
    ModelParams<Scalar> local = zeros_like(params);
    for (std::size_t s = c * kChunk; s < std::min(samples, (c + 1) * kChunk); ++s) {
      const bool is_query = s < batch;
      const std::size_t i = is_query ? s : s - batch;
      const Vector<Scalar> de = (is_query ? dq.row(i) : dt.row(i)).transpose();
      std::vector<Matrix<Scalar>>* sink = is_query ? grad_queries : grad_targets;
      backward(caches[s], de, params, config, local, sink ? &(*sink)[i] : nullptr);
    }
    if (grads) partial[c] = std::move(local);
  });
  if (grads) {
    auto total = tensors(*grads);
    for (const auto& part : partial) {
      const auto pt = tensors(part);
      for (std::size_t k = 0; k < total.size(); ++k) total[k].value += pt[k].value;
    }
  }
  return objective.loss;
}

}  // namespace pregen

#endif  // PREGEN_TRAIN_HPP
