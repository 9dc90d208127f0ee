#pragma once

#include <string>
#include <vector>

#include "vpcnn/causal.hpp"
#include "vpcnn/model.hpp"

namespace vpcnn {

// Checkpoint layout (little-endian):
//
//   "VXCK"                         magic
//   u16  version (1)
//   u32  layers, u32 hidden_channels, u32 kernel
//   f64  dropout_rate
//   u8   emission tag (0 = Gaussian per voxel)
//   u32  training H, W, D (0,0,0 when unknown)
//   u64  number of parameter tensors
//   per tensor, in ModelParams::parameters() order:
//        u64 element count, then that many f64 values
//   u32  CRC32 (zlib polynomial) of every preceding byte
//
// Parameter order per layer: vertical, depth, horizontal (kernel then bias),
// vertical_to_depth, vertical_to_horizontal, depth_to_horizontal, residual
// (layers >= 2), skip (kernels only); then head.skip, head.mean,
// head.log_std (kernel then bias each).

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  Extent3 train_dims{};  // all zero when unknown
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws BadMagicError, VersionError, TruncatedError, ChecksumError or
/// DataError.
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vpcnn
