#include "pregen/gradcheck.hpp"

#include "pregen/train.hpp"

#include <cstdio>
#include <random>
#include <sstream>

namespace pregen {

namespace {

// Below this norm both gradients count as zero: finite differences of an exactly
// flat direction only return rounding noise (about 1e-11 here), so a ratio is meaningless.
constexpr double kZeroGradient = 1e-8;

TensorCheck compare(std::string name, const Eigen::Ref<const Matrix<double>>& analytic,
                    const Eigen::Ref<const Matrix<double>>& numeric, double tolerance) {
  TensorCheck c;
  c.name = std::move(name);
  c.size = static_cast<std::size_t>(analytic.size());
  const double scale = std::max(analytic.norm(), numeric.norm());
  c.max_abs_error = (analytic - numeric).cwiseAbs().maxCoeff();
  c.vanishing = scale < kZeroGradient;
  c.rel_error = c.vanishing ? 0.0 : (analytic - numeric).norm() / scale;
  c.passed = c.rel_error <= tolerance;
  return c;
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& config) {
  validate(config.model);
  const ModelConfig mc = config.model.resolved();
  const std::size_t batch = config.batch_size;
  if (batch < 1) throw Error("gradcheck: batch size must be >= 1");

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  ModelParams<double> params = init_params<double>(mc, config.seed);
  // Move norms and biases off their init values so every term is exercised.
  for (auto& t : tensors(params)) {
    if (t.value.cols() == 1 && t.name != "cls") {
      for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value(i) += 0.1 * normal(rng);
    }
  }
  std::vector<Matrix<double>> query_stacks(batch), target_stacks(batch);
  for (auto* set : {&query_stacks, &target_stacks}) {
    for (auto& m : *set) m = Matrix<double>::NullaryExpr(mc.num_layers, mc.dim, [&] { return normal(rng); });
  }
  std::vector<const Matrix<double>*> queries, targets;
  for (std::size_t i = 0; i < batch; ++i) {
    queries.push_back(&query_stacks[i]);
    targets.push_back(&target_stacks[i]);
  }
  const DropoutKey key{config.seed, 0};
  auto objective = [&] {
    return batch_loss<double>(queries, targets, params, mc, config.temperature, Mode::train, key);
  };

  ModelParams<double> grads = zeros_like(params);
  std::vector<Matrix<double>> grad_queries, grad_targets;
  batch_loss<double>(queries, targets, params, mc, config.temperature, Mode::train, key, &grads, &grad_queries,
                     &grad_targets);

  auto corrupt = [&](const std::string& name, Eigen::Ref<Matrix<double>> g) {
    if (name != config.corrupt_tensor) return;
    g *= 1.1;
    g(0, 0) += 1e-3;
  };

  GradcheckReport report;
  report.tolerance = config.tolerance;
  const double h = config.step;
  auto param_list = tensors(params);
  auto grad_list = tensors(grads);
  for (std::size_t k = 0; k < param_list.size(); ++k) {
    auto& theta = param_list[k].value;
    Matrix<double> numeric(theta.rows(), theta.cols());
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double saved = theta.data()[i];
      theta.data()[i] = saved + h;
      const double plus = objective();
      theta.data()[i] = saved - h;
      const double minus = objective();
      theta.data()[i] = saved;
      numeric.data()[i] = (plus - minus) / (2.0 * h);
    }
    Matrix<double> analytic = grad_list[k].value;
    corrupt(param_list[k].name, analytic);
    report.tensors.push_back(compare(param_list[k].name, analytic, numeric, config.tolerance));
  }

  if (config.check_inputs) {
    auto check_inputs = [&](const std::string& name, std::vector<Matrix<double>>& stacks,
                            const std::vector<Matrix<double>>& analytic_rows) {
      Matrix<double> analytic(static_cast<Eigen::Index>(batch) * mc.num_layers, mc.dim);
      Matrix<double> numeric(analytic.rows(), analytic.cols());
      for (std::size_t b = 0; b < batch; ++b) {
        analytic.middleRows(static_cast<Eigen::Index>(b) * mc.num_layers, mc.num_layers) = analytic_rows[b];
        for (Eigen::Index i = 0; i < stacks[b].size(); ++i) {
          const double saved = stacks[b].data()[i];
          stacks[b].data()[i] = saved + h;
          const double plus = objective();
          stacks[b].data()[i] = saved - h;
          const double minus = objective();
          stacks[b].data()[i] = saved;
          const Eigen::Index r = i % mc.num_layers;
          const Eigen::Index c = i / mc.num_layers;
          numeric(static_cast<Eigen::Index>(b) * mc.num_layers + r, c) = (plus - minus) / (2.0 * h);
        }
      }
      corrupt(name, analytic);
      report.tensors.push_back(compare(name, analytic, numeric, config.tolerance));
    };
    check_inputs("input.queries", query_stacks, grad_queries);
    check_inputs("input.targets", target_stacks, grad_targets);
  }

  report.passed = true;
  for (const auto& t : report.tensors) {
    report.worst_rel_error = std::max(report.worst_rel_error, t.rel_error);
    report.passed = report.passed && t.passed;
  }
  return report;
}

std::string format_gradcheck_report(const GradcheckReport& report) {
  std::ostringstream out;
  char line[256];
  for (const auto& t : report.tensors) {
    std::snprintf(line, sizeof(line), "%-28s %7zu  rel %.3e  abs %.3e  %s\n", t.name.c_str(), t.size, t.rel_error,
                  t.max_abs_error, t.passed ? (t.vanishing ? "ok (zero)" : "ok") : "FAIL");
    out << line;
  }
  std::snprintf(line, sizeof(line), "worst relative error %.3e (tolerance %.1e): %s\n", report.worst_rel_error,
                report.tolerance, report.passed ? "PASS" : "FAIL");
  out << line;
  return out.str();
}

}  // namespace pregen
