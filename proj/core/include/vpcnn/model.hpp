#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "vpcnn/causal.hpp"
#include "vpcnn/rng.hpp"
#include "vpcnn/tape.hpp"
#include "vpcnn/tensor.hpp"

namespace vpcnn {

enum class Emission { GaussianPerVoxel = 0 };

struct ModelConfig {
  std::size_t layers = 5;
  std::size_t hidden_channels = 20;  // pre-activation width; gates emit half
  std::size_t kernel = 3;
  double dropout_rate = 0.15;
  Emission emission = Emission::GaussianPerVoxel;

  std::size_t gate_channels() const { return hidden_channels / 2; }
  /// Throws ConfigError on odd hidden width, fewer than 2 layers, even kernel
  /// or a dropout rate outside [0, 1).
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLogStdMin = -7.0;
inline constexpr double kLogStdMax = 7.0;

/// One convolution: kernel [Co,Ci,k,k,k], optional bias [Co], fixed {0,1} mask.
struct ConvParams {
  std::string name;
  Tensor kernel;
  Tensor bias;  // empty when the convolution has no bias
  Tensor mask;
};

struct LayerParams {
  ConvParams vertical, depth, horizontal;
  // 1x1x1 channel mixing between stacks, no bias.
  ConvParams vertical_to_depth, vertical_to_horizontal, depth_to_horizontal;
  std::optional<ConvParams> residual;  // layers >= 2
  ConvParams skip;
};

/// Learnable tensors of the network. Masks are rebuilt from the config and are
/// not learnable.
struct ModelParams {
  ModelConfig config;
  std::vector<LayerParams> layers;
  ConvParams skip_head;  // gated 1x1x1 block producing the penultimate features
  ConvParams emit_mean, emit_log_std;

  /// Random initialization: uniform in +-1/sqrt(live fan-in); masked taps 0.
  static ModelParams init(const ModelConfig& config, Rng& rng);

  /// All convolutions in checkpoint order (see checkpoint.hpp).
  std::vector<ConvParams*> convs();
  std::vector<const ConvParams*> convs() const;
  /// Learnable tensors in checkpoint order with their names.
  std::vector<std::pair<std::string, Tensor*>> parameters();
  std::size_t parameter_count() const;
  void zero_grad();
};

/// Spatial dropout switch for a forward pass. `rng` is required when enabled.
struct DropoutMode {
  bool enabled = false;
  Rng* rng = nullptr;

  static DropoutMode off() { return {}; }
  static DropoutMode on(Rng& rng) { return {true, &rng}; }
};

struct EmissionField {
  Tensor mean;     // [1,H,W,D]
  Tensor log_std;  // [1,H,W,D], clamped to [kLogStdMin, kLogStdMax]
};

struct ForwardOutput {
  EmissionField emission;
  Tensor penultimate;  // [hidden/2,H,W,D]
};

/// tanh(first half) * sigmoid(second half) over the channel axis.
Tensor gated_unit(const Tensor& pre_activation);
Var gated_unit(Var pre_activation);

/// Per-stack values flowing between layers.
struct StackState {
  Var vertical, depth, horizontal;
};

struct LayerOutput {
  StackState stacks;
  Var horizontal_gate;  // gate output before the residual
  Var skip;
};

/// One three-stack layer. `layer_index` 0 is the first layer (no residual).
LayerOutput layer_forward(Tape& tape, const StackState& in, LayerParams& layer,
                          std::size_t layer_index, double dropout_rate, DropoutMode dropout);

struct ForwardVars {
  Var mean, log_std, penultimate;
};

/// Full network on a [1,H,W,D] volume, recorded on `tape`. Parameters are
/// bound with tape.parameter(), so a recording tape yields their gradients.
ForwardVars model_forward(Tape& tape, const Tensor& x, ModelParams& params, DropoutMode dropout);

/// Inference-only convenience wrapper.
ForwardOutput model_forward(const Tensor& x, const ModelParams& params, DropoutMode dropout);

/// Mean Gaussian NLL per voxel (over `mask` voxels when given). The log
/// likelihood metric is its negation. Throws UsageError for an empty mask.
double nll(const EmissionField& emission, const Tensor& x, const Tensor* mask = nullptr);

/// Ancestral sampling in raster order, one full forward pass per voxel. Each
/// voxel is drawn from Normal(mean, temperature * std) and clamped to [0, 1].
Tensor sample(const ModelParams& params, const Extent3& dims, Rng& rng, double temperature);

/// Zero-noise decode: every voxel set to its clamped predicted mean.
Tensor greedy_decode(const ModelParams& params, const Extent3& dims);

}  // namespace vpcnn
