#include "vpcnn/checkpoint.hpp"

#include <zlib.h>

#include <cstring>

#include "binary_io.hpp"
#include "vpcnn/error.hpp"

namespace vpcnn {

namespace {

std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& checkpoint) {
  const ModelConfig& cfg = checkpoint.params.config;
  detail::ByteWriter w;
  w.put_bytes("VXCK", 4);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(cfg.layers));
  w.put(static_cast<std::uint32_t>(cfg.hidden_channels));
  w.put(static_cast<std::uint32_t>(cfg.kernel));
  w.put(cfg.dropout_rate);
  w.put(static_cast<std::uint8_t>(cfg.emission));
  w.put(static_cast<std::uint32_t>(checkpoint.train_dims.h));
  w.put(static_cast<std::uint32_t>(checkpoint.train_dims.w));
  w.put(static_cast<std::uint32_t>(checkpoint.train_dims.d));
  auto params = const_cast<ModelParams&>(checkpoint.params).parameters();
  w.put(static_cast<std::uint64_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.put(static_cast<std::uint64_t>(t->size()));
    for (double v : t->data()) w.put(v);
  }
  w.put(crc32_of(w.bytes().data(), w.bytes().size()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  r.require(4);
  if (std::memcmp(bytes.data(), "VXCK", 4) != 0) throw BadMagicError("not a checkpoint (bad magic)");
  r.get<std::uint32_t>();
  const auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion) throw VersionError("unsupported checkpoint version " + std::to_string(version));
  if (bytes.size() < 4 + sizeof(std::uint32_t)) throw TruncatedError("checkpoint truncated");

  ModelConfig cfg;
  cfg.layers = r.get<std::uint32_t>();
  cfg.hidden_channels = r.get<std::uint32_t>();
  cfg.kernel = r.get<std::uint32_t>();
  cfg.dropout_rate = r.get<double>();
  const auto emission = r.get<std::uint8_t>();
  if (emission != 0) throw DataError("unknown emission tag " + std::to_string(emission));
  cfg.emission = Emission::GaussianPerVoxel;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint holds an invalid config: ") + e.what());
  }
  Checkpoint ck;
  ck.train_dims.h = r.get<std::uint32_t>();
  ck.train_dims.w = r.get<std::uint32_t>();
  ck.train_dims.d = r.get<std::uint32_t>();

  Rng unused(0);
  ck.params = ModelParams::init(cfg, unused);
  auto params = ck.params.parameters();
  const auto count = r.get<std::uint64_t>();
  if (count != params.size())
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                    std::to_string(params.size()));
  for (auto& [name, t] : params) {
    const auto n = r.get<std::uint64_t>();
    if (n != t->size()) throw DataError("checkpoint tensor " + name + " has " + std::to_string(n) + " values");
    for (auto& v : t->data()) v = r.get<double>();
  }
  const std::size_t body = r.position();
  const auto stored = r.get<std::uint32_t>();
  if (r.remaining() != 0) throw DataError("checkpoint has trailing bytes");
  if (stored != crc32_of(bytes.data(), body)) throw ChecksumError("checkpoint CRC32 mismatch");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  detail::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace vpcnn
