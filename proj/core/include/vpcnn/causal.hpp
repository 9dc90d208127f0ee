#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <string>
#include <vector>

#include "vpcnn/tensor.hpp"

namespace vpcnn {

/// The three masked-convolution pathways. Each restricts kernel offsets to a
/// slab (vertical), strip (depth) or line (horizontal) of the causal past.
enum class StackKind { Vertical = 0, Depth = 1, Horizontal = 2 };

/// A: the stack's strict region. B: additionally the boundary plane of that
/// region (for horizontal, the current voxel). B is only used from the second
/// layer on, where the stack's own features are already shifted into the past.
enum class MaskVariant { A, B };

const char* to_string(StackKind kind);
const char* to_string(MaskVariant variant);

/// Kernel offset (rows, columns, depth) relative to the center tap.
struct Offset {
  int dr = 0, dc = 0, dd = 0;
  auto operator<=>(const Offset&) const = default;
};

/// Zero-based voxel coordinate. Ordering is the raster order: row slowest,
/// depth fastest.
struct VoxelIndex {
  std::size_t r = 0, c = 0, d = 0;
  auto operator<=>(const VoxelIndex&) const = default;
};

std::string to_string(const VoxelIndex& v);

/// Spatial extents (H, W, D).
struct Extent3 {
  std::size_t h = 0, w = 0, d = 0;
  std::size_t voxels() const { return h * w * d; }
  bool contains(const VoxelIndex& v) const { return v.r < h && v.c < w && v.d < d; }
  std::size_t flat(const VoxelIndex& v) const { return (v.r * w + v.c) * d + v.d; }
  VoxelIndex unflat(std::size_t i) const { return {i / (w * d), (i / d) % w, i % d}; }
  bool operator==(const Extent3&) const = default;
};

/// Offsets in [-k/2, k/2]^3 a stack may read, in raster order.
///   Vertical    A: dr < 0            B: dr <= 0
///   Depth       A: dr = 0, dc < 0    B: dr = 0, dc <= 0
///   Horizontal  A: dr = dc = 0, dd < 0   B: dr = dc = 0, dd <= 0
/// Throws ConfigError for even k.
std::vector<Offset> allowed_offsets(StackKind kind, MaskVariant variant, std::size_t k);

/// {0,1} tensor [k,k,k] with ones exactly at center + allowed_offsets.
Tensor build_mask(StackKind kind, MaskVariant variant, std::size_t k);

/// Every voxel strictly before `v` in raster order. Throws UsageError if v is
/// out of bounds.
std::vector<VoxelIndex> causal_past(const VoxelIndex& v, const Extent3& dims);

struct StackLayer {
  StackKind kind;
  MaskVariant variant;
  std::size_t kernel;
};

/// Per-layer masks of the stacks present in a design. Within a layer data
/// flows vertical -> depth, vertical -> horizontal and depth -> horizontal
/// (between stacks that are present); each stack reads its own previous output
/// across layers; the horizontal stack carries a residual from layer 2 on. The
/// output head reads the last present stack (horizontal, else depth, else
/// vertical) of every layer through skip connections.
struct LayerWiring {
  std::vector<std::vector<StackLayer>> layers;

  /// All three stacks; layer 1 uses variant A, later layers variant B.
  static LayerWiring standard(std::size_t layers, std::size_t kernel);
  /// A design with only `kind` (variant A in layer 1, B afterwards).
  static LayerWiring single(StackKind kind, std::size_t layers, std::size_t kernel);

  bool has(StackKind kind) const;
  const StackLayer& stack(std::size_t layer, StackKind kind) const;
  StackKind output_stack() const;
  /// Throws ConfigError unless every layer lists the same stacks in
  /// vertical, depth, horizontal order with odd kernels.
  void validate() const;
};

/// Brute-force set of input voxels that can influence the output at `target`,
/// found by propagating offset sets backwards through every layer and edge.
std::vector<VoxelIndex> receptive_field(const LayerWiring& wiring, const VoxelIndex& target,
                                        const Extent3& dims);

/// Receptive field of a plain stack of `layers` masked convolutions with the
/// single raster mask (strict past in layer 1, past plus center afterwards).
std::vector<VoxelIndex> naive_receptive_field(std::size_t layers, std::size_t kernel,
                                              const VoxelIndex& target, const Extent3& dims);

}  // namespace vpcnn
