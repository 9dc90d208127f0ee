#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vpcnn/causal.hpp"
#include "vpcnn/model.hpp"
#include "vpcnn/rng.hpp"

namespace vpcnn {

struct CausalityViolation {
  VoxelIndex perturbed;  // u
  VoxelIndex changed;    // v, with u not in causal_past(v)
};

struct CausalityReport {
  std::size_t trials = 0;
  std::vector<CausalityViolation> violations;

  bool passed() const { return violations.empty(); }
  /// One "(u) -> (v)" line per violation, then "PASS" or "FAIL <n>".
  std::string render() const;
};

/// Perturbation test of the network's causal structure.
///
/// A random base volume is drawn from `rng`; each trial adds +1.0 to one input
/// voxel u and compares every output emission parameter bitwise with the base
/// pass (dropout off). Any changed output voxel v with u not strictly before v
/// in raster order is a violation. With trials >= H*W*D every voxel is
/// perturbed once in raster order, otherwise `trials` distinct voxels are drawn.
CausalityReport verify_causality(const ModelParams& model, const Extent3& dims, std::size_t trials,
                                 Rng& rng);

}  // namespace vpcnn
