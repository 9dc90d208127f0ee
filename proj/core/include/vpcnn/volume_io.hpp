#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vpcnn/causal.hpp"
#include "vpcnn/tensor.hpp"

namespace vpcnn {

// Volume file layout (all fields little-endian):
//
//   offset  size  field
//        0     4  magic "VVOL"
//        4     2  version (1)
//        6     2  channels
//        8     4  H (rows)
//       12     4  W (columns)
//       16     4  D (depth)
//       20     2  dtype tag (1 = float32)
//       22     2  reserved, 0
//       24     8  payload byte count = channels*H*W*D*4
//       32     -  payload, float32, row-major, depth fastest, channel slowest

inline constexpr std::uint16_t kVolumeVersion = 1;
inline constexpr std::uint16_t kDtypeFloat32 = 1;
inline constexpr std::size_t kVolumeHeaderBytes = 32;

struct VolumeHeader {
  std::uint16_t version = kVolumeVersion;
  std::uint16_t channels = 1;
  std::uint32_t h = 0, w = 0, d = 0;
  std::uint16_t dtype = kDtypeFloat32;
  std::uint64_t payload_bytes = 0;

  static VolumeHeader for_tensor(const Tensor& volume);
};

std::vector<unsigned char> encode_volume_header(const VolumeHeader& header);
/// Throws BadMagicError, VersionError, TruncatedError or DataError.
VolumeHeader decode_volume_header(const std::vector<unsigned char>& bytes);

/// Writes a [C,H,W,D] tensor; values are stored as float32.
void write_volume(const std::string& path, const Tensor& volume);
/// Reads a volume file into a [C,H,W,D] tensor.
Tensor read_volume(const std::string& path);

Extent3 spatial_extent(const Tensor& volume);

// ---------------------------------------------------------------------------
// Synthetic phantoms.

struct SynthConfig {
  std::size_t n_volumes = 10;
  Extent3 dims{8, 8, 8};
  std::size_t blobs_min = 2, blobs_max = 5;
  double blob_sigma_min = 1.0, blob_sigma_max = 2.5;
  double blob_amplitude_min = 0.2, blob_amplitude_max = 0.5;
  double background = 0.2;
  double lesion_probability = 0.0;
  double lesion_radius_min = 1.5, lesion_radius_max = 2.5;
  double lesion_delta = 0.6;
  double noise_sigma = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthItem {
  Tensor volume;                     // [1,H,W,D] in [0,1], zero outside the roi
  Tensor clean;                      // the same volume before any lesion
  std::optional<Tensor> lesion_mask; // voxels the lesion modified
  Tensor roi;                        // ellipsoidal brain mask
};

/// Each volume is clamp01(background + Gaussian blobs + white noise) inside an
/// ellipsoidal roi and 0 outside. With probability lesion_probability a sphere
/// inside the roi is brightened, v -> v + delta * (1 - v).
std::vector<SynthItem> synth_dataset(const SynthConfig& config);

// ---------------------------------------------------------------------------

/// Trilinear interpolation with corner-aligned coordinates (first and last
/// samples map onto each other). Works per channel.
Tensor resample_trilinear(const Tensor& volume, const Extent3& target);

struct NormParams {
  double min = 0.0, max = 1.0;
};

/// Maps roi voxels linearly onto [0, 1]; voxels outside the roi become 0.
/// Without a roi every voxel is used. Throws DataError for a constant roi and
/// UsageError for an empty one.
std::pair<Tensor, NormParams> normalize(const Tensor& volume, const Tensor* roi = nullptr);
Tensor denormalize(const Tensor& volume, const NormParams& params);

// ---------------------------------------------------------------------------
// Datasets on disk: a CSV manifest with columns
//   id,volume_path,lesion_mask_path,roi_path,has_lesion
// Paths are relative to the manifest's directory; lesion_mask_path may be empty.

struct Sample {
  std::string id;
  Tensor volume;
  std::optional<Tensor> roi;
  std::optional<Tensor> lesion;

  const Tensor* roi_ptr() const { return roi ? &*roi : nullptr; }
};

struct ManifestEntry {
  std::string id, volume_path, lesion_mask_path, roi_path;
  bool has_lesion = false;
};

/// Min-max normalizes every sample's volume within its roi in place and
/// returns the per-sample parameters.
std::vector<NormParams> normalize_samples(std::vector<Sample>& samples);

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

/// Writes every item as volume/roi/lesion files plus manifest.csv into `dir`
/// and returns the manifest path.
std::string write_dataset(const std::string& dir, const std::vector<SynthItem>& items);
std::vector<Sample> load_dataset(const std::string& manifest_path);

}  // namespace vpcnn
