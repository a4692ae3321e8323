#ifndef PREGEN_MODEL_IMPL_HPP
#define PREGEN_MODEL_IMPL_HPP

// Template definitions for model.hpp; include model.hpp instead.

#include <algorithm>
#include <numbers>

namespace pregen {

namespace detail {

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& m, const std::string& stage) {
  if (!m.allFinite()) throw NonFiniteError(stage);
}

template <typename Scalar>
Scalar gelu_scalar(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_grad_scalar(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) / std::sqrt(Scalar(2) * std::numbers::pi_v<Scalar>);
  return cdf + x * pdf;
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu_scalar(v); });
}

template <typename Derived>
auto gelu_grad(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu_grad_scalar(v); });
}

template <typename Scalar>
Matrix<Scalar> linear(const Matrix<Scalar>& x, const LinearParams<Scalar>& p) {
  Matrix<Scalar> y = x * p.weight;
  y.rowwise() += p.bias.transpose();
  return y;
}

// Returns dx; accumulates dW and db.
template <typename Scalar>
Matrix<Scalar> linear_backward(const Matrix<Scalar>& dy, const Matrix<Scalar>& x, const LinearParams<Scalar>& p,
                               LinearParams<Scalar>& g) {
  g.weight.noalias() += x.transpose() * dy;
  g.bias += dy.colwise().sum().transpose();
  return dy * p.weight.transpose();
}

template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const LayerNormParams<Scalar>& p, LayerNormCache<Scalar>& cache) {
  constexpr Scalar kEps = Scalar(1e-5);
  cache.normalized.resize(x.rows(), x.cols());
  cache.inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).eval();
    const Scalar var = centered.square().mean();
    cache.inv_std(r) = Scalar(1) / std::sqrt(var + kEps);
    cache.normalized.row(r) = centered * cache.inv_std(r);
  }
  Matrix<Scalar> y = cache.normalized.array().rowwise() * p.gamma.transpose().array();
  y.rowwise() += p.beta.transpose();
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const Matrix<Scalar>& dy, const LayerNormCache<Scalar>& c,
                                   const LayerNormParams<Scalar>& p, LayerNormParams<Scalar>& g) {
  g.gamma += (dy.array() * c.normalized.array()).colwise().sum().matrix().transpose();
  g.beta += dy.colwise().sum().transpose();
  const Matrix<Scalar> dxhat = dy.array().rowwise() * p.gamma.transpose().array();
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_d = dxhat.row(r).mean();
    const Scalar mean_dx = dxhat.row(r).cwiseProduct(c.normalized.row(r)).mean();
    dx.row(r) = c.inv_std(r) * (dxhat.row(r).array() - mean_d - c.normalized.row(r).array() * mean_dx).matrix();
  }
  return dx;
}

template <typename Scalar>
Matrix<Scalar> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const Scalar keep_scale = Scalar(1.0 / (1.0 - p));
  Matrix<Scalar> mask(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) mask(i, j) = uniform(rng) < p ? Scalar(0) : keep_scale;
  }
  return mask;
}

template <typename Scalar>
void softmax_rows(Matrix<Scalar>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    m.row(r).array() -= m.row(r).maxCoeff();
    m.row(r) = m.row(r).array().exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

template <typename Scalar>
Matrix<Scalar> block_forward(const Matrix<Scalar>& x, const EncoderBlockParams<Scalar>& p, int heads, double dropout,
                             std::mt19937_64* rng, EncoderBlockCache<Scalar>& c) {
  const Eigen::Index tokens = x.rows();
  const Eigen::Index dim = x.cols();
  const Eigen::Index head_dim = dim / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));
  const bool drop = rng != nullptr;

  c.attn_in = layer_norm(x, p.attn_norm, c.attn_norm);
  c.q = linear(c.attn_in, p.query);
  c.k = linear(c.attn_in, p.key);
  c.v = linear(c.attn_in, p.value);
  c.probs.assign(heads, Matrix<Scalar>());
  c.probs_mask.assign(drop ? heads : 0, Matrix<Scalar>());
  c.context.resize(tokens, dim);
  for (int h = 0; h < heads; ++h) {
    const auto qh = c.q.middleCols(h * head_dim, head_dim);
    const auto kh = c.k.middleCols(h * head_dim, head_dim);
    const auto vh = c.v.middleCols(h * head_dim, head_dim);
    Matrix<Scalar> probs = (qh * kh.transpose()) * scale;
    softmax_rows(probs);
    if (drop) {
      c.probs_mask[h] = dropout_mask<Scalar>(tokens, tokens, dropout, *rng);
      c.context.middleCols(h * head_dim, head_dim).noalias() = probs.cwiseProduct(c.probs_mask[h]) * vh;
    } else {
      c.context.middleCols(h * head_dim, head_dim).noalias() = probs * vh;
    }
    c.probs[h] = std::move(probs);
  }
  Matrix<Scalar> attn = linear(c.context, p.attn_out);
  if (drop) {
    c.attn_mask = dropout_mask<Scalar>(tokens, dim, dropout, *rng);
    attn = attn.cwiseProduct(c.attn_mask);
  } else {
    c.attn_mask.resize(0, 0);
  }
  const Matrix<Scalar> x1 = x + attn;

  c.ffn_in = layer_norm(x1, p.ffn_norm, c.ffn_norm);
  c.ffn_pre = linear(c.ffn_in, p.ffn_in);
  c.ffn_act = gelu(c.ffn_pre);
  Matrix<Scalar> ffn = linear(c.ffn_act, p.ffn_out);
  if (drop) {
    c.ffn_mask = dropout_mask<Scalar>(tokens, dim, dropout, *rng);
    ffn = ffn.cwiseProduct(c.ffn_mask);
  } else {
    c.ffn_mask.resize(0, 0);
  }
  return x1 + ffn;
}

template <typename Scalar>
Matrix<Scalar> block_backward(const Matrix<Scalar>& dout, const EncoderBlockCache<Scalar>& c,
                              const EncoderBlockParams<Scalar>& p, int heads, EncoderBlockParams<Scalar>& g) {
  const Eigen::Index dim = dout.cols();
  const Eigen::Index head_dim = dim / heads;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_dim));

  // FFN branch.
  Matrix<Scalar> dx1 = dout;
  Matrix<Scalar> dffn = dout;
  if (c.ffn_mask.size()) dffn.array() *= c.ffn_mask.array();
  Matrix<Scalar> dact = linear_backward(dffn, c.ffn_act, p.ffn_out, g.ffn_out);
  const Matrix<Scalar> dpre = dact.cwiseProduct(gelu_grad(c.ffn_pre));
  const Matrix<Scalar> dffn_in = linear_backward(dpre, c.ffn_in, p.ffn_in, g.ffn_in);
  dx1 += layer_norm_backward(dffn_in, c.ffn_norm, p.ffn_norm, g.ffn_norm);

  // Attention branch.
  Matrix<Scalar> dattn = dx1;
  if (c.attn_mask.size()) dattn.array() *= c.attn_mask.array();
  const Matrix<Scalar> dcontext = linear_backward(dattn, c.context, p.attn_out, g.attn_out);
  Matrix<Scalar> dq(dout.rows(), dim), dk(dout.rows(), dim), dv(dout.rows(), dim);
  for (int h = 0; h < heads; ++h) {
    const auto dctx = dcontext.middleCols(h * head_dim, head_dim);
    const auto qh = c.q.middleCols(h * head_dim, head_dim);
    const auto kh = c.k.middleCols(h * head_dim, head_dim);
    const auto vh = c.v.middleCols(h * head_dim, head_dim);
    const Matrix<Scalar>& probs = c.probs[h];
    const bool masked = !c.probs_mask.empty();
    Matrix<Scalar> used = probs;
    if (masked) used.array() *= c.probs_mask[h].array();

    dv.middleCols(h * head_dim, head_dim).noalias() = used.transpose() * dctx;
    Matrix<Scalar> dprobs = dctx * vh.transpose();
    if (masked) dprobs = dprobs.cwiseProduct(c.probs_mask[h]);
    const Vector<Scalar> row_dot = dprobs.cwiseProduct(probs).rowwise().sum();
    const Matrix<Scalar> dscores = probs.cwiseProduct(dprobs.colwise() - row_dot) * scale;
    dq.middleCols(h * head_dim, head_dim).noalias() = dscores * kh;
    dk.middleCols(h * head_dim, head_dim).noalias() = dscores.transpose() * qh;
  }
  Matrix<Scalar> dattn_in = linear_backward(dq, c.attn_in, p.query, g.query);
  dattn_in += linear_backward(dk, c.attn_in, p.key, g.key);
  dattn_in += linear_backward(dv, c.attn_in, p.value, g.value);
  return dx1 + layer_norm_backward(dattn_in, c.attn_norm, p.attn_norm, g.attn_norm);
}

template <typename P, typename Out>
void collect_tensors(P& params, Out& out) {
  auto add = [&out](std::string name, auto& t) { out.push_back({std::move(name), {t.data(), t.rows(), t.cols()}}); };
  auto add_norm = [&add](const std::string& prefix, auto& n) {
    add(prefix + ".gamma", n.gamma);
    add(prefix + ".beta", n.beta);
  };
  auto add_linear = [&add](const std::string& prefix, auto& l) {
    add(prefix + ".weight", l.weight);
    add(prefix + ".bias", l.bias);
  };
  add("cls", params.cls);
  for (std::size_t i = 0; i < params.blocks.size(); ++i) {
    const std::string prefix = "encoder." + std::to_string(i);
    auto& b = params.blocks[i];
    add_norm(prefix + ".attn_norm", b.attn_norm);
    add_linear(prefix + ".query", b.query);
    add_linear(prefix + ".key", b.key);
    add_linear(prefix + ".value", b.value);
    add_linear(prefix + ".attn_out", b.attn_out);
    add_norm(prefix + ".ffn_norm", b.ffn_norm);
    add_linear(prefix + ".ffn_in", b.ffn_in);
    add_linear(prefix + ".ffn_out", b.ffn_out);
  }
  add_norm("final_norm", params.final_norm);
  for (std::size_t k = 0; k < params.head.size(); ++k) add_linear("head." + std::to_string(k), params.head[k]);
}

}  // namespace detail

template <typename Scalar>
std::vector<TensorRef<Scalar>> tensors(ModelParams<Scalar>& params) {
  std::vector<TensorRef<Scalar>> out;
  detail::collect_tensors(params, out);
  return out;
}

template <typename Scalar>
std::vector<ConstTensorRef<Scalar>> tensors(const ModelParams<Scalar>& params) {
  std::vector<ConstTensorRef<Scalar>> out;
  detail::collect_tensors(params, out);
  return out;
}

template <typename Scalar>
template <typename Other>
ModelParams<Other> ModelParams<Scalar>::cast() const {
  auto cast_norm = [](const LayerNormParams<Scalar>& n) {
    return LayerNormParams<Other>{n.gamma.template cast<Other>(), n.beta.template cast<Other>()};
  };
  auto cast_linear = [](const LinearParams<Scalar>& l) {
    return LinearParams<Other>{l.weight.template cast<Other>(), l.bias.template cast<Other>()};
  };
  ModelParams<Other> out;
  out.cls = cls.template cast<Other>();
  for (const auto& b : blocks) {
    out.blocks.push_back({cast_norm(b.attn_norm), cast_linear(b.query), cast_linear(b.key), cast_linear(b.value),
                          cast_linear(b.attn_out), cast_norm(b.ffn_norm), cast_linear(b.ffn_in),
                          cast_linear(b.ffn_out)});
  }
  out.final_norm = cast_norm(final_norm);
  for (const auto& l : head) out.head.push_back(cast_linear(l));
  return out;
}

template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& params) {
  ModelParams<Scalar> out = params;
  for (auto& t : tensors(out)) t.value.setZero();
  return out;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  const ModelConfig c = config.resolved();
  std::mt19937_64 rng(seed);

  auto norm = [&] {
    return LayerNormParams<Scalar>{Vector<Scalar>::Ones(c.dim), Vector<Scalar>::Zero(c.dim)};
  };
  auto glorot = [&](int in, int out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    LinearParams<Scalar> l{Matrix<Scalar>(in, out), Vector<Scalar>::Zero(out)};
    for (int j = 0; j < out; ++j) {
      for (int i = 0; i < in; ++i) l.weight(i, j) = static_cast<Scalar>(uniform(rng));
    }
    return l;
  };

  ModelParams<Scalar> p;
  std::normal_distribution<double> normal(0.0, 0.02);
  p.cls.resize(c.dim);
  for (int j = 0; j < c.dim; ++j) p.cls(j) = static_cast<Scalar>(normal(rng));
  for (int b = 0; b < c.encoder_depth; ++b) {
    EncoderBlockParams<Scalar> block;
    block.attn_norm = norm();
    block.query = glorot(c.dim, c.dim);
    block.key = glorot(c.dim, c.dim);
    block.value = glorot(c.dim, c.dim);
    block.attn_out = glorot(c.dim, c.dim);
    block.ffn_norm = norm();
    block.ffn_in = glorot(c.dim, c.ffn_dim);
    block.ffn_out = glorot(c.ffn_dim, c.dim);
    p.blocks.push_back(std::move(block));
  }
  p.final_norm = norm();
  int in = c.dim;
  for (int k = 0; k < c.mlp_depth; ++k) {
    const int out = k + 1 == c.mlp_depth ? c.output_dim : c.mlp_hidden;
    p.head.push_back(glorot(in, out));
    in = out;
  }
  return p;
}

template <typename Scalar>
void check_shapes(const ModelParams<Scalar>& params, const ModelConfig& config) {
  const auto expected = parameter_shapes(config);
  const auto actual = tensors(params);
  if (expected.size() != actual.size()) {
    throw Error("model has " + std::to_string(actual.size()) + " tensors, config expects " +
                std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = expected[i];
    const auto& a = actual[i];
    if (e.name != a.name || e.rows != a.value.rows() || e.cols != a.value.cols()) {
      throw Error("tensor '" + e.name + "' expected shape " + std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                  ", got '" + a.name + "' " + std::to_string(a.value.rows()) + "x" + std::to_string(a.value.cols()));
    }
  }
}

template <typename Scalar>
RowVector<Scalar> sinusoidal_pe(int position, int dim) {
  if (dim < 2 || dim % 2 != 0) throw Error("sinusoidal_pe: dim " + std::to_string(dim) + " must be even");
  if (position < 0) throw Error("sinusoidal_pe: negative position");
  RowVector<Scalar> pe(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double angle = position / std::pow(10000.0, 2.0 * i / dim);
    pe(2 * i) = static_cast<Scalar>(std::sin(angle));
    pe(2 * i + 1) = static_cast<Scalar>(std::cos(angle));
  }
  return pe;
}

template <typename Scalar>
Vector<Scalar> forward(const Matrix<Scalar>& stack, const ModelParams<Scalar>& params, const ModelConfig& config,
                       Mode mode, std::mt19937_64* rng, ForwardCache<Scalar>* cache) {
  const ModelConfig c = config.resolved();
  if (stack.rows() != c.num_layers || stack.cols() != c.dim) {
    throw Error("forward: stack is " + std::to_string(stack.rows()) + "x" + std::to_string(stack.cols()) +
                ", model expects " + std::to_string(c.num_layers) + "x" + std::to_string(c.dim));
  }
  const bool drop = mode == Mode::train && c.dropout > 0.0;
  if (drop && rng == nullptr) throw Error("forward: train mode with dropout needs an rng");
  std::mt19937_64* drop_rng = drop ? rng : nullptr;

  ForwardCache<Scalar> local;
  ForwardCache<Scalar>& fc = cache ? *cache : local;
  fc.variant = c.variant;
  fc.num_layers = c.num_layers;
  fc.dim = c.dim;
  fc.blocks.clear();
  fc.head_in.clear();
  fc.head_pre.clear();

  RowVector<Scalar> pooled;
  if (c.variant == Variant::single_layer) {
    pooled = stack.row(c.num_layers - 1);
  } else {
    const bool with_cls = c.variant != Variant::avg_pool;
    const bool with_pe = c.variant != Variant::no_pe;
    const Eigen::Index offset = with_cls ? 1 : 0;
    Matrix<Scalar> x(c.num_layers + offset, c.dim);
    if (with_cls) x.row(0) = params.cls.transpose();
    x.bottomRows(c.num_layers) = stack;
    if (with_pe) {
      if (with_cls) x.row(0) += sinusoidal_pe<Scalar>(0, c.dim);
      for (int l = 1; l <= c.num_layers; ++l) x.row(offset + l - 1) += sinusoidal_pe<Scalar>(l, c.dim);
    }
    fc.blocks.resize(params.blocks.size());
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
      x = detail::block_forward(x, params.blocks[b], c.heads, c.dropout, drop_rng, fc.blocks[b]);
      detail::check_finite(x, "encoder block " + std::to_string(b));
    }
    const Matrix<Scalar> z = detail::layer_norm(x, params.final_norm, fc.final_norm);
    pooled = with_cls ? RowVector<Scalar>(z.row(0)) : RowVector<Scalar>(z.colwise().mean());
  }

  RowVector<Scalar> h = pooled;
  for (std::size_t k = 0; k < params.head.size(); ++k) {
    fc.head_in.push_back(h);
    RowVector<Scalar> a = h * params.head[k].weight + params.head[k].bias.transpose();
    fc.head_pre.push_back(a);
    h = k + 1 == params.head.size() ? a : RowVector<Scalar>(detail::gelu(a));
  }
  detail::check_finite(h, "projection head");
  return h.transpose();
}

template <typename Scalar>
void backward(const ForwardCache<Scalar>& cache, const Vector<Scalar>& grad_embedding,
              const ModelParams<Scalar>& params, const ModelConfig& config, ModelParams<Scalar>& grads,
              Matrix<Scalar>* grad_stack) {
  const ModelConfig c = config.resolved();
  if (cache.variant != c.variant || cache.num_layers != c.num_layers || cache.dim != c.dim ||
      cache.head_in.size() != params.head.size() ||
      (c.variant != Variant::single_layer && cache.blocks.size() != params.blocks.size())) {
    throw Error("backward: cache does not match the model configuration");
  }
  if (grad_embedding.size() != params.head.back().bias.size()) {
    throw Error("backward: gradient has dimension " + std::to_string(grad_embedding.size()) + ", embedding has " +
                std::to_string(params.head.back().bias.size()));
  }

  RowVector<Scalar> dh = grad_embedding.transpose();
  for (std::size_t k = params.head.size(); k-- > 0;) {
    if (k + 1 != params.head.size()) dh = dh.cwiseProduct(detail::gelu_grad(cache.head_pre[k]));
    grads.head[k].weight.noalias() += cache.head_in[k].transpose() * dh;
    grads.head[k].bias += dh.transpose();
    dh = dh * params.head[k].weight.transpose();
  }

  if (c.variant == Variant::single_layer) {
    if (grad_stack) {
      grad_stack->setZero(c.num_layers, c.dim);
      grad_stack->row(c.num_layers - 1) = dh;
    }
    return;
  }

  const bool with_cls = c.variant != Variant::avg_pool;
  const Eigen::Index offset = with_cls ? 1 : 0;
  const Eigen::Index tokens = c.num_layers + offset;
  Matrix<Scalar> dz = Matrix<Scalar>::Zero(tokens, c.dim);
  if (with_cls) {
    dz.row(0) = dh;
  } else {
    dz.rowwise() = dh / static_cast<Scalar>(tokens);
  }
  Matrix<Scalar> dx = detail::layer_norm_backward(dz, cache.final_norm, params.final_norm, grads.final_norm);
  for (std::size_t b = params.blocks.size(); b-- > 0;) {
    dx = detail::block_backward(dx, cache.blocks[b], params.blocks[b], c.heads, grads.blocks[b]);
  }
  if (with_cls) grads.cls += dx.row(0).transpose();
  if (grad_stack) *grad_stack = dx.bottomRows(c.num_layers);
}

}  // namespace pregen

#endif  // PREGEN_MODEL_IMPL_HPP
