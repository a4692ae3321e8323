#include "pregen/checkpoint.hpp"

#include "pregen/feature_store.hpp"

#include "byte_io.hpp"

#include <boost/crc.hpp>

#include <bit>

namespace pregen {

namespace {

constexpr std::string_view kMagic = "PGCK";
constexpr std::uint16_t kVersion = 1;

// CRC-64/XZ.
using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true>;

std::uint64_t crc64(std::span<const std::byte> bytes) {
  Crc64 crc;
  crc.process_bytes(bytes.data(), bytes.size());
  return crc.checksum();
}

void write_config(detail::ByteWriter& w, const ModelConfig& c) {
  for (int v : {c.num_layers, c.dim, c.heads, c.encoder_depth, c.ffn_dim, c.mlp_depth, c.mlp_hidden, c.output_dim}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u64(std::bit_cast<std::uint64_t>(c.dropout));
  w.u32(static_cast<std::uint32_t>(c.variant));
}

// Walks the tensor table without trusting it: false when a length field points
// past the end of `bytes`, which is how a cut-off file shows up.
bool table_fits(std::span<const std::byte> bytes) {
  detail::ByteReader r(bytes);
  constexpr std::size_t kHeader = 4 + 2 + 2 + 8 * 4 + 8 + 4;
  if (!r.has(kHeader + 4)) return false;
  r.bytes(kHeader);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!r.has(4)) return false;
    const auto len = r.u32();
    if (!r.has(std::size_t{len} + 8)) return false;
    r.bytes(len);
    const std::uint64_t rows = r.u32(), cols = r.u32();
    if (!r.has(4 * rows * cols)) return false;
    r.bytes(4 * rows * cols);
  }
  return r.has(8);
}

}  // namespace

std::vector<std::byte> encode_checkpoint(const ModelParams<float>& params, const ModelConfig& config) {
  validate(config);
  const ModelConfig c = config.resolved();
  check_shapes(params, c);
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kVersion);
  w.u16(0);
  write_config(w, c);
  const auto list = tensors(params);
  w.u32(static_cast<std::uint32_t>(list.size()));
  for (const auto& t : list) {
    w.string(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index col = 0; col < t.value.cols(); ++col) w.f32(t.value(r, col));
    }
  }
  w.u64(crc64(w.buffer()));
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::byte> bytes, const ModelConfig* expected) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 4 || detail::ByteReader(bytes).bytes(4) != kMagic) {
    throw CheckpointError(Kind::bad_magic, "bad magic: not a PGCK checkpoint");
  }
  if (bytes.size() < 8 + 8) throw CheckpointError(Kind::truncated, "checkpoint truncated");
  const auto body = bytes.first(bytes.size() - 8);
  const auto stored = detail::ByteReader(bytes.last(8)).u64();
  const auto actual = crc64(body);
  if (stored != actual) {
    if (!table_fits(bytes)) {
      throw CheckpointError(Kind::truncated, "checkpoint truncated: " + std::to_string(bytes.size()) +
                                                 " bytes do not hold the stored tensor table");
    }
    throw CheckpointError(Kind::checksum, "checkpoint checksum mismatch");
  }

  detail::ByteReader r(body);
  auto need = [&](std::size_t n) {
    if (!r.has(n)) throw CheckpointError(Kind::truncated, "checkpoint truncated");
  };
  r.bytes(4);
  need(4);
  const auto version = r.u16();
  if (version != kVersion) {
    throw CheckpointError(Kind::unsupported_version, "unsupported checkpoint version " + std::to_string(version));
  }
  r.u16();

  Checkpoint ck;
  need(8 * 4 + 8 + 4);
  ModelConfig& c = ck.config;
  for (int* field : {&c.num_layers, &c.dim, &c.heads, &c.encoder_depth, &c.ffn_dim, &c.mlp_depth, &c.mlp_hidden,
                     &c.output_dim}) {
    *field = static_cast<int>(r.u32());
  }
  c.dropout = std::bit_cast<double>(r.u64());
  const auto variant = r.u32();
  if (variant > static_cast<std::uint32_t>(Variant::avg_pool)) {
    throw CheckpointError(Kind::shape, "checkpoint has unknown variant " + std::to_string(variant));
  }
  c.variant = static_cast<Variant>(variant);
  try {
    validate(c);
  } catch (const Error& e) {
    throw CheckpointError(Kind::shape, std::string("checkpoint config invalid: ") + e.what());
  }

  const auto shapes = parameter_shapes(expected ? *expected : c);
  if (expected) {
    const auto own = parameter_shapes(c);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      if (i >= own.size() || own[i].name != shapes[i].name || own[i].rows != shapes[i].rows ||
          own[i].cols != shapes[i].cols) {
        throw CheckpointError(Kind::shape, "tensor '" + shapes[i].name + "': checkpoint shape does not match the "
                                           "requested model configuration");
      }
    }
    if (own.size() != shapes.size()) {
      throw CheckpointError(Kind::shape, "tensor '" + own[shapes.size()].name + "' is not part of the requested "
                                         "model configuration");
    }
  }

  ck.params = init_params<float>(c, 0);
  auto list = tensors(ck.params);
  need(4);
  const auto count = r.u32();
  if (count != list.size()) {
    throw CheckpointError(Kind::shape, "checkpoint stores " + std::to_string(count) + " tensors, config needs " +
                                           std::to_string(list.size()));
  }
  for (auto& t : list) {
    need(4);
    const auto len = r.u32();
    need(len + 8);
    const auto name = r.bytes(len);
    const auto rows = r.u32();
    const auto cols = r.u32();
    if (name != t.name || rows != t.value.rows() || cols != t.value.cols()) {
      throw CheckpointError(Kind::shape, "tensor '" + t.name + "' expected " + std::to_string(t.value.rows()) + "x" +
                                             std::to_string(t.value.cols()) + ", checkpoint has '" + name + "' " +
                                             std::to_string(rows) + "x" + std::to_string(cols));
    }
    need(4ULL * rows * cols);
    for (Eigen::Index i = 0; i < t.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.value.cols(); ++j) t.value(i, j) = r.f32();
    }
  }
  if (r.remaining() != 0) throw CheckpointError(Kind::truncated, "checkpoint has unexpected trailing bytes");
  return ck;
}

void save_checkpoint(const ModelParams<float>& params, const ModelConfig& config, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(params, config));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  const auto bytes = read_file_bytes(path);
  return decode_checkpoint(bytes, expected);
}

}  // namespace pregen
