#pragma once

// Independent reference implementations used to check the library.

#include <vpcnn/tensor.hpp>

#include <cmath>
#include <vector>

namespace vpcnn::testing {

/// Direct loop over every output voxel and every tap, reading the input
/// through explicit bounds checks. Shares nothing with the library kernel.
inline Tensor conv_oracle(const Tensor& in, const Tensor& w, const Tensor& mask, const Tensor& bias) {
  const long ci = static_cast<long>(in.dim(0)), H = static_cast<long>(in.dim(1)),
             W = static_cast<long>(in.dim(2)), D = static_cast<long>(in.dim(3));
  const long co = static_cast<long>(w.dim(0)), k = static_cast<long>(w.dim(2)), half = k / 2;
  std::vector<double> out(static_cast<std::size_t>(co * H * W * D), 0.0);
  auto in_at = [&](long i, long r, long c, long d) {
    if (r < 0 || r >= H || c < 0 || c >= W || d < 0 || d >= D) return 0.0;
    return in.values()[static_cast<std::size_t>(((i * H + r) * W + c) * D + d)];
  };
  for (long o = 0; o < co; ++o)
    for (long r = 0; r < H; ++r)
      for (long c = 0; c < W; ++c)
        for (long d = 0; d < D; ++d) {
          double acc = bias.empty() ? 0.0 : bias.values()[static_cast<std::size_t>(o)];
          for (long i = 0; i < ci; ++i)
            for (long a = 0; a < k; ++a)
              for (long b = 0; b < k; ++b)
                for (long e = 0; e < k; ++e) {
                  const double m = mask.values()[static_cast<std::size_t>((a * k + b) * k + e)];
                  const double wt = w.values()[static_cast<std::size_t>((((o * ci + i) * k + a) * k + b) * k + e)];
                  acc += m * wt * in_at(i, r + a - half, c + b - half, d + e - half);
                }
          out[static_cast<std::size_t>(((o * H + r) * W + c) * D + d)] = acc;
        }
  return Tensor({static_cast<std::size_t>(co), in.dim(1), in.dim(2), in.dim(3)}, std::move(out));
}

/// Hand-written Adam on the scalar objective theta^2, returning theta after
/// each of `steps` updates.
inline std::vector<double> adam_square_oracle(double theta, int steps, double lr = 0.001,
                                              double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
  std::vector<double> trace;
  double m = 0.0, v = 0.0;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2.0 * theta;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double mh = m / (1.0 - std::pow(b1, t));
    const double vh = v / (1.0 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
    trace.push_back(theta);
  }
  return trace;
}

}  // namespace vpcnn::testing
