#include "pregen/model.hpp"

namespace pregen {

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::full:
      return "full";
    case Variant::single_layer:
      return "single_layer";
    case Variant::no_pe:
      return "no_pe";
    case Variant::avg_pool:
      return "avg_pool";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (auto v : {Variant::full, Variant::single_layer, Variant::no_pe, Variant::avg_pool}) {
    if (name == to_string(v)) return v;
  }
  throw Error("unknown model variant '" + std::string(name) + "' (expected full, single_layer, no_pe or avg_pool)");
}

ModelConfig ModelConfig::resolved() const {
  ModelConfig c = *this;
  if (c.ffn_dim == 0) c.ffn_dim = 4 * c.dim;
  if (c.output_dim == 0) c.output_dim = c.dim;
  return c;
}

void validate(const ModelConfig& config) {
  const ModelConfig c = config.resolved();
  if (c.num_layers < 1) throw Error("model.num_layers must be >= 1");
  if (c.dim < 2 || c.dim % 2 != 0) throw Error("model.dim must be even and >= 2");
  if (c.heads < 1 || c.dim % c.heads != 0) {
    throw Error("model.heads (" + std::to_string(c.heads) + ") must divide model.dim (" + std::to_string(c.dim) + ")");
  }
  if (c.encoder_depth < 1) throw Error("model.encoder_depth must be >= 1");
  if (c.ffn_dim < 1) throw Error("model.ffn_dim must be >= 1");
  if (c.mlp_depth < 1) throw Error("model.mlp_depth must be >= 1");
  if (c.mlp_hidden < 1) throw Error("model.mlp_hidden must be >= 1");
  if (c.output_dim < 2) throw Error("model.output_dim must be >= 2");
  if (!(c.dropout >= 0.0 && c.dropout < 1.0)) throw Error("model.dropout must be in [0, 1)");
}

std::vector<TensorShape> parameter_shapes(const ModelConfig& config) {
  const ModelConfig c = config.resolved();
  std::vector<TensorShape> out;
  auto norm = [&](const std::string& prefix) {
    out.push_back({prefix + ".gamma", c.dim, 1});
    out.push_back({prefix + ".beta", c.dim, 1});
  };
  auto linear = [&](const std::string& prefix, int in, int outs) {
    out.push_back({prefix + ".weight", in, outs});
    out.push_back({prefix + ".bias", outs, 1});
  };
  out.push_back({"cls", c.dim, 1});
  for (int b = 0; b < c.encoder_depth; ++b) {
    const std::string prefix = "encoder." + std::to_string(b);
    norm(prefix + ".attn_norm");
    linear(prefix + ".query", c.dim, c.dim);
    linear(prefix + ".key", c.dim, c.dim);
    linear(prefix + ".value", c.dim, c.dim);
    linear(prefix + ".attn_out", c.dim, c.dim);
    norm(prefix + ".ffn_norm");
    linear(prefix + ".ffn_in", c.dim, c.ffn_dim);
    linear(prefix + ".ffn_out", c.ffn_dim, c.dim);
  }
  norm("final_norm");
  int in = c.dim;
  for (int k = 0; k < c.mlp_depth; ++k) {
    const int outs = k + 1 == c.mlp_depth ? c.output_dim : c.mlp_hidden;
    linear("head." + std::to_string(k), in, outs);
    in = outs;
  }
  return out;
}

}  // namespace pregen
