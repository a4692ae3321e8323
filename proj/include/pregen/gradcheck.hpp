#ifndef PREGEN_GRADCHECK_HPP
#define PREGEN_GRADCHECK_HPP

#include "pregen/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pregen {

struct GradcheckConfig {
  ModelConfig model = default_model();
  std::size_t batch_size = 4;
  double temperature = 0.05;
  double step = 1e-4;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  bool check_inputs = true;
  /// Test hook: perturb the analytic gradient of this tensor before comparing.
  std::string corrupt_tensor;

  static ModelConfig default_model() {
    ModelConfig c;
    c.num_layers = 6;
    c.dim = 16;
    c.heads = 4;
    c.mlp_hidden = 32;
    c.output_dim = 8;
    return c;
  }
};

struct TensorCheck {
  std::string name;
  std::size_t size = 0;
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0.0;
  bool vanishing = false;  // both gradients below the zero threshold, e.g. key biases under softmax
  bool passed = false;
};

struct GradcheckReport {
  std::vector<TensorCheck> tensors;  // every parameter tensor, then "input.queries" / "input.targets"
  double worst_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Central finite differences of the full batch objective (stacks -> encoder ->
/// head -> cosine -> symmetric InfoNCE) in double, with dropout masks replayed.
GradcheckReport run_gradcheck(const GradcheckConfig& config);

std::string format_gradcheck_report(const GradcheckReport& report);

}  // namespace pregen

#endif  // PREGEN_GRADCHECK_HPP
