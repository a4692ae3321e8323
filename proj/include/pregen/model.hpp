#ifndef PREGEN_MODEL_HPP
#define PREGEN_MODEL_HPP

// Layer-stack aggregator: a learnable CLS token is prepended to the L layer
// rows, sinusoidal encodings mark layer order (CLS at position 0, layer l at
// position l), a pre-LN Transformer encoder attends over the sequence and an
// MLP head projects the CLS output to the retrieval embedding.
//
// Everything is templated on the scalar type: training runs in float, the
// finite-difference gradient checks run the same code in double.

#include "pregen/types.hpp"

#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace pregen {

enum class Variant {
  full,          // CLS + PE + encoder + head
  single_layer,  // head applied to the last layer row only
  no_pe,         // full without positional encodings
  avg_pool,      // mean of encoder outputs over layer tokens, no CLS token
};

std::string to_string(Variant variant);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  int num_layers = 0;
  int dim = 0;
  int heads = 8;
  int encoder_depth = 1;
  int ffn_dim = 0;  // 0 means 4 * dim
  int mlp_depth = 2;
  int mlp_hidden = 14336;
  int output_dim = 0;  // 0 means dim
  double dropout = 0.1;
  Variant variant = Variant::full;

  /// Copy with the automatic sizes filled in.
  ModelConfig resolved() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Throws Error naming the offending field.
void validate(const ModelConfig& config);

enum class Mode { train, eval };

template <typename Scalar>
struct LayerNormParams {
  Vector<Scalar> gamma;
  Vector<Scalar> beta;
};

/// y = x * weight + bias, with weight stored as (in x out).
template <typename Scalar>
struct LinearParams {
  Matrix<Scalar> weight;
  Vector<Scalar> bias;
};

template <typename Scalar>
struct EncoderBlockParams {
  LayerNormParams<Scalar> attn_norm;
  LinearParams<Scalar> query, key, value, attn_out;
  LayerNormParams<Scalar> ffn_norm;
  LinearParams<Scalar> ffn_in, ffn_out;
};

template <typename Scalar>
struct ModelParams {
  Vector<Scalar> cls;
  std::vector<EncoderBlockParams<Scalar>> blocks;
  LayerNormParams<Scalar> final_norm;
  std::vector<LinearParams<Scalar>> head;

  template <typename Other>
  ModelParams<Other> cast() const;
};

/// Named, mutable view of one parameter tensor.
template <typename Scalar>
struct TensorRef {
  std::string name;
  Eigen::Map<Matrix<Scalar>> value;
};

template <typename Scalar>
struct ConstTensorRef {
  std::string name;
  Eigen::Map<const Matrix<Scalar>> value;
};

/// Every parameter tensor in a fixed canonical order.
template <typename Scalar>
std::vector<TensorRef<Scalar>> tensors(ModelParams<Scalar>& params);
template <typename Scalar>
std::vector<ConstTensorRef<Scalar>> tensors(const ModelParams<Scalar>& params);

struct TensorShape {
  std::string name;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
};

/// Expected tensor names and shapes for `config`, in canonical order.
std::vector<TensorShape> parameter_shapes(const ModelConfig& config);

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& params);

/// Glorot-uniform weights, zero biases, unit layernorm scales, cls ~ N(0, 0.02^2).
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws Error naming the first tensor whose shape disagrees with `config`.
template <typename Scalar>
void check_shapes(const ModelParams<Scalar>& params, const ModelConfig& config);

template <typename Scalar>
RowVector<Scalar> sinusoidal_pe(int position, int dim);

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& stage) : Error("non-finite values after " + stage), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> normalized;
  Vector<Scalar> inv_std;
};

template <typename Scalar>
struct EncoderBlockCache {
  LayerNormCache<Scalar> attn_norm;
  Matrix<Scalar> attn_in, q, k, v;
  std::vector<Matrix<Scalar>> probs;       // per head, before dropout
  std::vector<Matrix<Scalar>> probs_mask;  // per head; empty without dropout
  Matrix<Scalar> context;
  Matrix<Scalar> attn_mask;  // residual-branch dropout; empty without dropout
  LayerNormCache<Scalar> ffn_norm;
  Matrix<Scalar> ffn_in, ffn_pre, ffn_act;
  Matrix<Scalar> ffn_mask;
};

/// Activations recorded by forward() for an exact backward pass.
template <typename Scalar>
struct ForwardCache {
  Variant variant = Variant::full;
  Eigen::Index num_layers = 0;
  Eigen::Index dim = 0;
  std::vector<EncoderBlockCache<Scalar>> blocks;
  LayerNormCache<Scalar> final_norm;
  std::vector<RowVector<Scalar>> head_in;   // input of head layer k
  std::vector<RowVector<Scalar>> head_pre;  // pre-activation of head layer k
};

/// Embedding of one L x d stack. Dropout is active only in train mode, which
/// then requires `rng` when config.dropout > 0. No L2 normalization.
template <typename Scalar>
Vector<Scalar> forward(const Matrix<Scalar>& stack, const ModelParams<Scalar>& params, const ModelConfig& config,
                       Mode mode, std::mt19937_64* rng = nullptr, ForwardCache<Scalar>* cache = nullptr);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(embedding).
/// When `grad_stack` is non-null it receives d(loss)/d(stack).
template <typename Scalar>
void backward(const ForwardCache<Scalar>& cache, const Vector<Scalar>& grad_embedding,
              const ModelParams<Scalar>& params, const ModelConfig& config, ModelParams<Scalar>& grads,
              Matrix<Scalar>* grad_stack = nullptr);

}  // namespace pregen

#include "pregen/model_impl.hpp"

#endif  // PREGEN_MODEL_HPP
