#ifndef PREGEN_FEATURE_STORE_HPP
#define PREGEN_FEATURE_STORE_HPP

// Binary layer-stack dumps (.pgstack).
//
// Layout, all integers little-endian:
//   "PGEN" | u16 version = 1 | u16 reserved = 0 | u32 L | u32 d
//   | u32 id_len | id bytes (UTF-8) | L*d f32, row-major, layer 1..L

#include "pregen/types.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pregen {

inline constexpr std::uint16_t kStackFormatVersion = 1;

/// Final-token hidden states of one sample, one row per VLM layer.
struct LayerStack {
  std::string sample_id;
  StackMatrix data;  // L x d

  int num_layers() const { return static_cast<int>(data.rows()); }
  int dim() const { return static_cast<int>(data.cols()); }
};

class StackFormatError : public Error {
 public:
  enum class Kind { invalid_stack, bad_magic, unsupported_version, truncated, trailing_bytes, non_finite, io };

  StackFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Throws StackFormatError(invalid_stack or non_finite) if `stack` breaks an invariant.
void check_stack(const LayerStack& stack);

std::size_t encoded_stack_size(int num_layers, int dim, std::size_t id_bytes);

/// Serializes `stack`; nothing is written if the stack is invalid.
void write_stack(const LayerStack& stack, std::ostream& out);
std::vector<std::byte> encode_stack(const LayerStack& stack);

LayerStack read_stack(std::span<const std::byte> bytes);
LayerStack read_stack(std::istream& in);

void save_stack(const LayerStack& stack, const std::filesystem::path& path);
LayerStack load_stack(const std::filesystem::path& path);

// Whole-file helpers shared by the other on-disk formats.
std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
/// Writes to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace pregen

#endif  // PREGEN_FEATURE_STORE_HPP
