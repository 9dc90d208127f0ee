#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vpcnn/model.hpp"
#include "vpcnn/rng.hpp"

namespace vpcnn {

struct McPasses {
  std::vector<EmissionField> passes;  // ordered by pass index
  Tensor penultimate;                 // one dropout-off pass
};

/// T forward passes with spatial dropout enabled. Pass i uses its own
/// generator seeded with derive_seed(master, i), where master is one draw from
/// `rng`. Throws UsageError for T < 2.
McPasses mc_passes(const ModelParams& params, const Tensor& x, std::size_t passes, Rng& rng);

struct UncertaintyMaps {
  Tensor mu;     // per-voxel mean of the predicted means
  Tensor sigma;  // per-voxel sample standard deviation (divisor T-1)
  std::size_t passes = 0;
};

UncertaintyMaps moments(const std::vector<EmissionField>& passes);

/// Binary mask of voxels above the mean intensity of the roi (whole volume
/// when roi is null). Voxels outside the roi are 0. Throws UsageError on an
/// empty roi.
Tensor tau_segment(const Tensor& volume, const Tensor* roi = nullptr);

/// 2|a & b| / (|a| + |b|); 1 when both masks are empty.
double dice(const Tensor& a, const Tensor& b);

enum class FeatureVariant { Chi, Xi, Psi };

FeatureVariant parse_feature_variant(const std::string& name);
const char* to_string(FeatureVariant variant);

/// chi: [x]; xi: [x, mu, sigma]; psi: penultimate activations (dropout off).
Tensor export_features(const ModelParams& params, const Tensor& x, FeatureVariant variant,
                       std::size_t passes, Rng& rng);

}  // namespace vpcnn
