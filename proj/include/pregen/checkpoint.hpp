#ifndef PREGEN_CHECKPOINT_HPP
#define PREGEN_CHECKPOINT_HPP

// Checkpoint layout, little-endian:
//   "PGCK" | u16 version = 1 | u16 reserved = 0
//   config: u32 num_layers, dim, heads, encoder_depth, ffn_dim, mlp_depth,
//           mlp_hidden, output_dim | f64 dropout | u32 variant
//   u32 tensor count, then per tensor:
//     u32 name length | name (UTF-8) | u32 rows | u32 cols | rows*cols f32, row-major
//   u64 CRC-64/XZ of every preceding byte

#include "pregen/model.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace pregen {

class CheckpointError : public Error {
 public:
  enum class Kind { bad_magic, unsupported_version, truncated, checksum, shape };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  ModelConfig config;
  ModelParams<float> params;
};

std::vector<std::byte> encode_checkpoint(const ModelParams<float>& params, const ModelConfig& config);
/// When `expected` is given, tensor shapes must match it; the error names the first mismatching tensor.
Checkpoint decode_checkpoint(std::span<const std::byte> bytes, const ModelConfig* expected = nullptr);

void save_checkpoint(const ModelParams<float>& params, const ModelConfig& config, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace pregen

#endif  // PREGEN_CHECKPOINT_HPP
