#pragma once

#include <utility>
#include <vector>

#include "vpcnn/rng.hpp"
#include "vpcnn/tape.hpp"
#include "vpcnn/tensor.hpp"

namespace vpcnn {

// ---------------------------------------------------------------------------
// Plain kernels on tensors.
// ---------------------------------------------------------------------------

/// Same-size, zero-padded 3D convolution with centered odd kernels.
///
///   out[o,r,c,d] = bias[o] + sum_{i, delta : mask[delta] != 0}
///                  kernel[o,i,delta] * mask[delta] * in[i, (r,c,d) + delta - center]
///
/// input [C_in,H,W,D], kernel [C_out,C_in,k,k,k], mask [k,k,k], bias [C_out]
/// or empty for none. Taps whose mask entry is 0 are never read.
Tensor conv3d_masked(const Tensor& input, const Tensor& kernel, const Tensor& mask,
                     const Tensor& bias);

struct Conv3dGrads {
  Tensor input;   // empty unless requested
  Tensor kernel;  // masked taps are exactly 0
  Tensor bias;
};

Conv3dGrads conv3d_masked_backward(const Tensor& input, const Tensor& kernel,
                                   const Tensor& mask, const Tensor& grad_out,
                                   bool want_input_grad);

/// Per-channel multipliers for spatial dropout: 0 with probability `rate`,
/// otherwise 1/(1-rate). Draws exactly `channels` Bernoulli values.
std::vector<double> dropout_channel_scales(std::size_t channels, double rate, Rng& rng);

/// Channel-wise dropout on [C,H,W,D]: one draw scales a whole channel.
/// Identity (bit-for-bit, no draws) when disabled.
Tensor spatial_dropout(const Tensor& input, double rate, Rng& rng, bool enabled);

/// Splits [2N,...] into channels [0,N) and [N,2N).
std::pair<Tensor, Tensor> channel_split(const Tensor& input);

// ---------------------------------------------------------------------------
// Differentiable ops recorded on a Tape.
// ---------------------------------------------------------------------------

/// `bias` may be a default-constructed Var for no bias.
Var conv3d_masked(Var input, Var kernel, const Tensor& mask, Var bias);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var tanh(Var x);
Var sigmoid(Var x);
/// Clamps values to [lo, hi]; gradient flows only where lo <= x <= hi.
Var clamp(Var x, double lo, double hi);
Var sum(Var x);
std::pair<Var, Var> channel_split(Var x);
Var concat_channels(Var a, Var b);
Var spatial_dropout(Var x, double rate, Rng& rng, bool enabled);

/// Mean per-voxel Gaussian negative log-likelihood of `x` given (mean, log_std)
/// over voxels where `mask` is nonzero (all voxels if mask is null).
Var gaussian_nll(Var mean, Var log_std, const Tensor& x, const Tensor* mask);

}  // namespace vpcnn
