#ifndef PREGEN_OPTIM_HPP
#define PREGEN_OPTIM_HPP

#include "pregen/model.hpp"

#include <cmath>
#include <cstdint>

namespace pregen {

struct AdamWConfig {
  double learning_rate = 5e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
struct OptimizerState {
  ModelParams<Scalar> first_moment;
  ModelParams<Scalar> second_moment;
  std::int64_t step = 0;
};

template <typename Scalar>
OptimizerState<Scalar> init_optimizer(const ModelParams<Scalar>& params) {
  return {zeros_like(params), zeros_like(params), 0};
}

/// L2 norm over every gradient entry, accumulated in double in canonical tensor order.
template <typename Scalar>
double global_grad_norm(const ModelParams<Scalar>& grads) {
  double sum = 0.0;
  for (const auto& t : tensors(grads)) sum += t.value.template cast<double>().squaredNorm();
  return std::sqrt(sum);
}

/// Rescales all gradients so their global norm is at most `max_norm`. Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(ModelParams<Scalar>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (!std::isfinite(norm)) throw Error("clip_grad_norm: non-finite gradient norm");
  if (norm > max_norm) {
    const Scalar scale = static_cast<Scalar>(max_norm / norm);
    for (auto& t : tensors(grads)) t.value *= scale;
  }
  return norm;
}

/// AdamW with decoupled weight decay: theta -= lr*wd*theta + lr * m_hat / (sqrt(v_hat) + eps).
template <typename Scalar>
void adamw_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, OptimizerState<Scalar>& state,
                const AdamWConfig& config) {
  auto p = tensors(params);
  const auto g = tensors(grads);
  auto m = tensors(state.first_moment);
  auto v = tensors(state.second_moment);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
    throw Error("adamw_step: parameter, gradient and state tensor counts differ");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].value.rows() != g[i].value.rows() || p[i].value.cols() != g[i].value.cols() ||
        p[i].value.rows() != m[i].value.rows() || p[i].value.cols() != m[i].value.cols()) {
      throw Error("adamw_step: shape mismatch at tensor '" + p[i].name + "'");
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar b1 = static_cast<Scalar>(config.beta1);
  const Scalar b2 = static_cast<Scalar>(config.beta2);
  const Scalar correction1 = static_cast<Scalar>(1.0 - std::pow(config.beta1, t));
  const Scalar correction2 = static_cast<Scalar>(1.0 - std::pow(config.beta2, t));
  const Scalar lr = static_cast<Scalar>(config.learning_rate);
  const Scalar decay = static_cast<Scalar>(1.0 - config.learning_rate * config.weight_decay);
  const Scalar eps = static_cast<Scalar>(config.eps);

  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& theta = p[i].value;
    const auto& grad = g[i].value;
    m[i].value = b1 * m[i].value + (Scalar(1) - b1) * grad;
    v[i].value = b2 * v[i].value + (Scalar(1) - b2) * grad.cwiseAbs2();
    const auto m_hat = (m[i].value.array() / correction1).eval();
    const auto v_hat = (v[i].value.array() / correction2).eval();
    theta.array() = theta.array() * decay - lr * m_hat / (v_hat.sqrt() + eps);
  }
}

}  // namespace pregen

#endif  // PREGEN_OPTIM_HPP
