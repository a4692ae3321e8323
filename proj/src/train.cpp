#include "pregen/train.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <set>
#include <sstream>

namespace pregen {

void validate(const TrainConfig& c) {
  if (c.batch_size < 2) throw Error("train.batch_size must be >= 2");
  if (!(c.learning_rate > 0.0)) throw Error("train.learning_rate must be > 0");
  if (!(c.weight_decay >= 0.0)) throw Error("train.weight_decay must be >= 0");
  if (c.epochs < 1 && c.max_steps <= 0) throw Error("train.epochs must be >= 1 when train.max_steps is unset");
  if (!(c.grad_clip > 0.0)) throw Error("train.grad_clip must be > 0");
  if (!(c.temperature > 0.0)) throw Error("train.temperature must be > 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw Error("train.beta1 must be in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw Error("train.beta2 must be in [0, 1)");
  if (!(c.eps > 0.0)) throw Error("train.eps must be > 0");
}

AdamWConfig adamw_config(const TrainConfig& c) {
  return {c.learning_rate, c.weight_decay, c.beta1, c.beta2, c.eps};
}

std::uint64_t epoch_seed(std::uint64_t seed, int epoch) {
  return seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(epoch);
}

std::string format_training_log(const TrainingLog& log) {
  std::ostringstream out;
  for (const auto& note : log.notes) out << nlohmann::ordered_json{{"note", note}}.dump() << '\n';
  for (const auto& s : log.steps) {
    out << nlohmann::ordered_json{{"step", s.step},
                                  {"batch_size", s.batch_size},
                                  {"loss", s.loss},
                                  {"grad_norm", s.grad_norm},
                                  {"wall_time", s.wall_seconds}}
               .dump()
        << '\n';
  }
  return out.str();
}

TrainResult train(const Dataset& data, const ModelConfig& model_config, const TrainConfig& tc,
                  const std::function<void(const StepRecord&)>& on_step) {
  validate(model_config);
  validate(tc);
  const auto& m = data.manifest();
  const ModelConfig mc = model_config.resolved();
  if (m.num_layers != mc.num_layers || m.dim != mc.dim) {
    throw Error("train: dataset stacks are " + std::to_string(m.num_layers) + "x" + std::to_string(m.dim) +
                ", model expects " + std::to_string(mc.num_layers) + "x" + std::to_string(mc.dim));
  }
  if (m.triplets.size() < 2) throw Error("train: need at least 2 training triplets");
  const int threads = tc.threads > 0 ? tc.threads : default_thread_count();

  std::vector<Matrix<float>> inputs;
  inputs.reserve(data.stacks().size());
  for (const auto& s : data.stacks()) inputs.emplace_back(s.data);
  std::vector<std::size_t> query_of, target_of;
  for (const auto& t : m.triplets) {
    query_of.push_back(data.index_of(t.query_id));
    target_of.push_back(data.index_of(t.target_id));
  }

  TrainResult result;
  result.model_config = mc;
  result.params = init_params<float>(mc, tc.seed);
  auto state = init_optimizer(result.params);
  const auto adamw = adamw_config(tc);
  const auto start = std::chrono::steady_clock::now();

  std::int64_t step = 0;
  for (int epoch = 0;; ++epoch) {
    if (tc.max_steps <= 0 && epoch >= tc.epochs) break;
    const auto plan = build_batches(m.triplets, tc.batch_size, epoch_seed(tc.seed, epoch), tc.hard_negatives);
    if (epoch == 0) result.first_plan = plan;
    for (auto i : plan.dropped) {
      result.log.notes.push_back("epoch " + std::to_string(epoch) + ": dropped singleton batch (triplet " +
                                 std::to_string(i) + ")");
    }
    for (const auto& batch : plan.batches) {
      if (tc.max_steps > 0 && step >= tc.max_steps) break;
      std::vector<const Matrix<float>*> queries, targets;
      std::set<std::size_t> seen_targets;
      for (auto i : batch) {
        queries.push_back(&inputs[query_of[i]]);
        targets.push_back(&inputs[target_of[i]]);
        if (!seen_targets.insert(target_of[i]).second) {
          result.log.notes.push_back("step " + std::to_string(step) + ": target '" + m.triplets[i].target_id +
                                     "' appears twice in the batch");
        }
      }
      ModelParams<float> grads = zeros_like(result.params);
      const float loss = batch_loss<float>(queries, targets, result.params, mc, tc.temperature, Mode::train,
                                    DropoutKey{tc.seed, static_cast<std::uint64_t>(step)}, &grads, nullptr, nullptr,
                                    threads);
      if (!std::isfinite(loss)) throw Error("train: non-finite loss at step " + std::to_string(step));
      const double norm = clip_grad_norm(grads, tc.grad_clip);
      adamw_step(result.params, grads, state, adamw);

      StepRecord rec;
      rec.step = step;
      rec.batch_size = batch.size();
      rec.loss = loss;
      rec.grad_norm = norm;
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.log.steps.push_back(rec);
      if (on_step) on_step(rec);
      ++step;
    }
    if (tc.max_steps > 0 && step >= tc.max_steps) break;
  }
  return result;
}

}  // namespace pregen
