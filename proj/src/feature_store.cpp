#include "pregen/feature_store.hpp"

#include "byte_io.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace pregen {

namespace {

constexpr std::string_view kMagic = "PGEN";
constexpr std::size_t kHeaderBytes = 4 + 2 + 2 + 4 + 4 + 4;

}  // namespace

void check_stack(const LayerStack& stack) {
  using Kind = StackFormatError::Kind;
  if (stack.num_layers() < 1) {
    throw StackFormatError(Kind::invalid_stack, "stack '" + stack.sample_id + "': needs at least one layer");
  }
  if (stack.dim() < 2 || stack.dim() % 2 != 0) {
    throw StackFormatError(Kind::invalid_stack, "stack '" + stack.sample_id + "': dim " +
                                                    std::to_string(stack.dim()) + " must be even and >= 2");
  }
  for (Eigen::Index l = 0; l < stack.data.rows(); ++l) {
    for (Eigen::Index j = 0; j < stack.data.cols(); ++j) {
      if (!std::isfinite(stack.data(l, j))) {
        throw StackFormatError(Kind::non_finite, "stack '" + stack.sample_id + "': non-finite value at layer " +
                                                     std::to_string(l + 1) + ", column " + std::to_string(j));
      }
    }
  }
}

std::size_t encoded_stack_size(int num_layers, int dim, std::size_t id_bytes) {
  return kHeaderBytes + id_bytes + 4 * static_cast<std::size_t>(num_layers) * static_cast<std::size_t>(dim);
}

std::vector<std::byte> encode_stack(const LayerStack& stack) {
  check_stack(stack);
  detail::ByteWriter w;
  w.buffer().reserve(encoded_stack_size(stack.num_layers(), stack.dim(), stack.sample_id.size()));
  w.bytes(kMagic);
  w.u16(kStackFormatVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(stack.num_layers()));
  w.u32(static_cast<std::uint32_t>(stack.dim()));
  w.string(stack.sample_id);
  const float* p = stack.data.data();
  for (Eigen::Index i = 0; i < stack.data.size(); ++i) w.f32(p[i]);
  return w.take();
}

void write_stack(const LayerStack& stack, std::ostream& out) {
  const auto bytes = encode_stack(stack);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw StackFormatError(StackFormatError::Kind::io, "stack '" + stack.sample_id + "': write failed");
}

LayerStack read_stack(std::span<const std::byte> bytes) {
  using Kind = StackFormatError::Kind;
  detail::ByteReader r(bytes);
  if (!r.has(4) || r.bytes(4) != kMagic) throw StackFormatError(Kind::bad_magic, "bad magic: not a PGEN layer stack");
  if (!r.has(kHeaderBytes - 4)) {
    throw StackFormatError(Kind::truncated, "truncated header: expected " + std::to_string(kHeaderBytes) +
                                                " bytes, got " + std::to_string(bytes.size()));
  }
  const auto version = r.u16();
  if (version != kStackFormatVersion) {
    throw StackFormatError(Kind::unsupported_version, "unsupported stack format version " + std::to_string(version));
  }
  r.u16();  // reserved
  const std::uint32_t layers = r.u32();
  const std::uint32_t dim = r.u32();
  const std::uint32_t id_len = r.u32();
  if (layers < 1 || dim < 2 || dim % 2 != 0) {
    throw StackFormatError(Kind::invalid_stack, "invalid shape L=" + std::to_string(layers) +
                                                    " d=" + std::to_string(dim));
  }
  const std::size_t expected = encoded_stack_size(static_cast<int>(layers), static_cast<int>(dim), id_len);
  if (bytes.size() < expected) {
    throw StackFormatError(Kind::truncated, "truncated stack: expected " + std::to_string(expected) +
                                                " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw StackFormatError(Kind::trailing_bytes, "stack has " + std::to_string(bytes.size() - expected) +
                                                     " trailing bytes beyond the declared " +
                                                     std::to_string(expected));
  }

  LayerStack stack;
  stack.sample_id = r.bytes(id_len);
  stack.data.resize(layers, dim);
  float* p = stack.data.data();
  for (Eigen::Index i = 0; i < stack.data.size(); ++i) p[i] = r.f32();
  check_stack(stack);
  return stack;
}

LayerStack read_stack(std::istream& in) {
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return read_stack(std::as_bytes(std::span(raw)));
}

void save_stack(const LayerStack& stack, const std::filesystem::path& path) {
  write_file_atomic(path, encode_stack(stack));
}

LayerStack load_stack(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return read_stack(bytes);
  } catch (const StackFormatError& e) {
    throw StackFormatError(e.kind(), path.string() + ": " + e.what());
  }
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("write failed: " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

}  // namespace pregen
