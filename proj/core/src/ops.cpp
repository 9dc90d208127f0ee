#include "vpcnn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "vpcnn/error.hpp"
#include "vpcnn/parallel.hpp"

namespace vpcnn {

namespace {

struct Tap {
  std::ptrdiff_t dr, dc, dd;
  std::size_t index;  // flat offset within the k^3 kernel block
  double mask;
};

struct ConvGeometry {
  std::size_t c_in, c_out, h, w, d, k;
  std::vector<Tap> taps;
};

ConvGeometry check_conv(const Tensor& input, const Tensor& kernel, const Tensor& mask,
                        const Tensor& bias) {
  if (input.rank() != 4) throw ShapeError("conv3d input must be [C,H,W,D], got " + to_string(input.dims()));
  if (kernel.rank() != 5) throw ShapeError("conv3d kernel must be [Co,Ci,k,k,k], got " + to_string(kernel.dims()));
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(3) != k || kernel.dim(4) != k) throw ShapeError("conv3d kernel must be cubic");
  if (k % 2 == 0) throw ConfigError("conv3d kernel extent must be odd, got " + std::to_string(k));
  if (kernel.dim(1) != input.dim(0))
    throw ShapeError("conv3d channel mismatch: kernel " + to_string(kernel.dims()) + " input " +
                     to_string(input.dims()));
  if (mask.dims() != Dims{k, k, k}) throw ShapeError("conv3d mask dims " + to_string(mask.dims()) + " != kernel spatial dims");
  if (!bias.empty() && bias.dims() != Dims{kernel.dim(0)}) throw ShapeError("conv3d bias must be [C_out]");

  ConvGeometry g{input.dim(0), kernel.dim(0), input.dim(1), input.dim(2), input.dim(3), k, {}};
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b)
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t idx = (a * k + b) * k + c;
        if (mask[idx] == 0.0) continue;
        g.taps.push_back({static_cast<std::ptrdiff_t>(a) - half, static_cast<std::ptrdiff_t>(b) - half,
                          static_cast<std::ptrdiff_t>(c) - half, idx, mask[idx]});
      }
  return g;
}

// Valid output range [lo, hi) along an axis of extent n for offset delta.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t n, std::ptrdiff_t delta) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -delta);
  const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(sn, sn - delta);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void check_finite_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
}

}  // namespace

Tensor conv3d_masked(const Tensor& input, const Tensor& kernel, const Tensor& mask,
                     const Tensor& bias) {
  const ConvGeometry g = check_conv(input, kernel, mask, bias);
  const std::size_t vox = g.h * g.w * g.d;
  const std::size_t k3 = g.k * g.k * g.k;
  Tensor out(Dims{g.c_out, g.h, g.w, g.d});
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  double* dst_all = out.data().data();

  parallel_for(g.c_out, [&](std::size_t o) {
    double* dst_o = dst_all + o * vox;
    std::fill(dst_o, dst_o + vox, bias.empty() ? 0.0 : bias[o]);
    for (std::size_t i = 0; i < g.c_in; ++i) {
      const double* src_i = in + i * vox;
      for (const Tap& t : g.taps) {
        const double w = ker[(o * g.c_in + i) * k3 + t.index] * t.mask;
        const auto [r0, r1] = valid_range(g.h, t.dr);
        const auto [c0, c1] = valid_range(g.w, t.dc);
        const auto [d0, d1] = valid_range(g.d, t.dd);
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) {
            double* dst = dst_o + (r * g.w + c) * g.d;
            const double* src = src_i + ((r + t.dr) * g.w + (c + t.dc)) * g.d + t.dd;
            for (std::size_t d = d0; d < d1; ++d) dst[d] += w * src[d];
          }
      }
    }
  });
  return out;
}

Conv3dGrads conv3d_masked_backward(const Tensor& input, const Tensor& kernel,
                                   const Tensor& mask, const Tensor& grad_out,
                                   bool want_input_grad) {
  const ConvGeometry g = check_conv(input, kernel, mask, Tensor());
  if (grad_out.dims() != Dims{g.c_out, g.h, g.w, g.d}) throw ShapeError("conv3d grad_out shape mismatch");
  const std::size_t vox = g.h * g.w * g.d;
  const std::size_t k3 = g.k * g.k * g.k;
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  const double* gout = grad_out.data().data();

  Conv3dGrads grads;
  grads.kernel = Tensor(kernel.dims());
  grads.bias = Tensor(Dims{g.c_out});
  double* gk = grads.kernel.data().data();

  parallel_for(g.c_out, [&](std::size_t o) {
    const double* go = gout + o * vox;
    double b = 0.0;
    for (std::size_t v = 0; v < vox; ++v) b += go[v];
    grads.bias[o] = b;
    for (std::size_t i = 0; i < g.c_in; ++i) {
      const double* src_i = in + i * vox;
      for (const Tap& t : g.taps) {
        const auto [r0, r1] = valid_range(g.h, t.dr);
        const auto [c0, c1] = valid_range(g.w, t.dc);
        const auto [d0, d1] = valid_range(g.d, t.dd);
        double acc = 0.0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) {
            const double* g_row = go + (r * g.w + c) * g.d;
            const double* src = src_i + ((r + t.dr) * g.w + (c + t.dc)) * g.d + t.dd;
            for (std::size_t d = d0; d < d1; ++d) acc += g_row[d] * src[d];
          }
        gk[(o * g.c_in + i) * k3 + t.index] = acc * t.mask;
      }
    }
  });

  if (want_input_grad) {
    grads.input = Tensor(input.dims());
    double* gin = grads.input.data().data();
    parallel_for(g.c_in, [&](std::size_t i) {
      double* gi = gin + i * vox;
      for (std::size_t o = 0; o < g.c_out; ++o) {
        const double* go = gout + o * vox;
        for (const Tap& t : g.taps) {
          const double w = ker[(o * g.c_in + i) * k3 + t.index] * t.mask;
          const auto [r0, r1] = valid_range(g.h, t.dr);
          const auto [c0, c1] = valid_range(g.w, t.dc);
          const auto [d0, d1] = valid_range(g.d, t.dd);
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) {
              const double* g_row = go + (r * g.w + c) * g.d;
              double* dst = gi + ((r + t.dr) * g.w + (c + t.dc)) * g.d + t.dd;
              for (std::size_t d = d0; d < d1; ++d) dst[d] += w * g_row[d];
            }
        }
      }
    });
  }
  return grads;
}

std::vector<double> dropout_channel_scales(std::size_t channels, double rate, Rng& rng) {
  check_finite_rate(rate);
  const double keep = 1.0 - rate;
  std::vector<double> scales(channels);
  for (auto& s : scales) s = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return scales;
}

Tensor spatial_dropout(const Tensor& input, double rate, Rng& rng, bool enabled) {
  check_finite_rate(rate);
  if (!enabled) return input;
  if (input.rank() != 4) throw ShapeError("spatial_dropout expects [C,H,W,D]");
  const auto scales = dropout_channel_scales(input.dim(0), rate, rng);
  Tensor out = input;
  const std::size_t plane = input.size() / input.dim(0);
  for (std::size_t c = 0; c < input.dim(0); ++c)
    for (std::size_t v = 0; v < plane; ++v) out[c * plane + v] *= scales[c];
  return out;
}

std::pair<Tensor, Tensor> channel_split(const Tensor& input) {
  if (input.rank() < 1 || input.dim(0) % 2 != 0)
    throw ShapeError("channel_split needs an even channel count, got " + to_string(input.dims()));
  const std::size_t half = input.dim(0) / 2;
  const std::size_t plane = input.size() / input.dim(0);
  Dims dims = input.dims();
  dims[0] = half;
  auto mid = input.data().begin() + static_cast<std::ptrdiff_t>(half * plane);
  return {Tensor(dims, std::vector<double>(input.data().begin(), mid)),
          Tensor(dims, std::vector<double>(mid, input.data().end()))};
}

// ---------------------------------------------------------------------------

Var conv3d_masked(Var input, Var kernel, const Tensor& mask, Var bias) {
  Tape& tape = *input.tape();
  const Tensor empty;
  Tensor out = conv3d_masked(input.value(), kernel.value(), mask, bias.valid() ? bias.value() : empty);
  const Tensor* mask_ptr = &mask;
  return tape.record(std::move(out), {input, kernel, bias},
                     [input, kernel, bias, mask_ptr](Tape& t, std::span<const double> g) {
                       const Tensor& k = kernel.value();
                       Tensor grad_out(Dims{k.dim(0), input.dims()[1], input.dims()[2], input.dims()[3]},
                                       std::vector<double>(g.begin(), g.end()));
                       auto grads = conv3d_masked_backward(input.value(), k, *mask_ptr, grad_out,
                                                           input.requires_grad());
                       t.accumulate(kernel, grads.kernel.data());
                       if (bias.valid()) t.accumulate(bias, grads.bias.data());
                       if (input.requires_grad()) t.accumulate(input, grads.input.data());
                     });
}

Var add(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var mul(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (a.requires_grad()) {
      std::vector<double> ga(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i];
      t.accumulate(a, ga);
    }
    if (b.requires_grad()) {
      std::vector<double> gb(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
      t.accumulate(b, gb);
    }
  });
}

Var tanh(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::tanh(v);
  if (!x.requires_grad()) return x.tape()->record(std::move(out), {x}, nullptr);
  const Tensor y = out;
  return x.tape()->record(std::move(out), {x}, [x, y](Tape& t, std::span<const double> g) {
    std::vector<double> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (1.0 - y[i] * y[i]);
    t.accumulate(x, gx);
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  if (!x.requires_grad()) return x.tape()->record(std::move(out), {x}, nullptr);
  const Tensor y = out;
  return x.tape()->record(std::move(out), {x}, [x, y](Tape& t, std::span<const double> g) {
    std::vector<double> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i] * (1.0 - y[i]);
    t.accumulate(x, gx);
  });
}

Var clamp(Var x, double lo, double hi) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = std::clamp(v, lo, hi);
  return x.tape()->record(std::move(out), {x}, [x, lo, hi](Tape& t, std::span<const double> g) {
    const auto& xv = x.value();
    std::vector<double> gx(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = (xv[i] >= lo && xv[i] <= hi) ? g[i] : 0.0;
    t.accumulate(x, gx);
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t n = x.value().size();
  return x.tape()->record(Tensor::scalar(s), {x}, [x, n](Tape& t, std::span<const double> g) {
    t.accumulate(x, std::vector<double>(n, g[0]));
  });
}

std::pair<Var, Var> channel_split(Var x) {
  auto [first, second] = channel_split(x.value());
  const std::size_t n = x.value().size();
  const std::size_t half = n / 2;
  Tape& tape = *x.tape();
  Var a = tape.record(std::move(first), {x}, [x, n](Tape& t, std::span<const double> g) {
    std::vector<double> gx(n, 0.0);
    std::copy(g.begin(), g.end(), gx.begin());
    t.accumulate(x, gx);
  });
  Var b = tape.record(std::move(second), {x}, [x, n, half](Tape& t, std::span<const double> g) {
    std::vector<double> gx(n, 0.0);
    std::copy(g.begin(), g.end(), gx.begin() + static_cast<std::ptrdiff_t>(half));
    t.accumulate(x, gx);
  });
  return {a, b};
}

Var concat_channels(Var a, Var b) {
  const Tensor parts[] = {a.value(), b.value()};
  Tensor out = concat_channels(parts);
  const std::size_t na = a.value().size();
  return a.tape()->record(std::move(out), {a, b}, [a, b, na](Tape& t, std::span<const double> g) {
    t.accumulate(a, g.subspan(0, na));
    t.accumulate(b, g.subspan(na));
  });
}

Var spatial_dropout(Var x, double rate, Rng& rng, bool enabled) {
  check_finite_rate(rate);
  if (!enabled) return x;
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ShapeError("spatial_dropout expects [C,H,W,D]");
  auto scales = dropout_channel_scales(xv.dim(0), rate, rng);
  const std::size_t plane = xv.size() / xv.dim(0);
  Tensor out = xv;
  for (std::size_t c = 0; c < xv.dim(0); ++c)
    for (std::size_t v = 0; v < plane; ++v) out[c * plane + v] *= scales[c];
  return x.tape()->record(std::move(out), {x},
                          [x, scales = std::move(scales), plane](Tape& t, std::span<const double> g) {
                            std::vector<double> gx(g.size());
                            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * scales[i / plane];
                            t.accumulate(x, gx);
                          });
}

Var gaussian_nll(Var mean, Var log_std, const Tensor& x, const Tensor* mask) {
  require_same_dims(mean.value(), x, "gaussian_nll mean/x");
  require_same_dims(log_std.value(), x, "gaussian_nll log_std/x");
  if (mask) require_same_dims(*mask, x, "gaussian_nll mask/x");
  const auto& m = mean.value();
  const auto& s = log_std.value();
  std::size_t count = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!mask || (*mask)[i] != 0.0) ++count;
  if (count == 0) throw UsageError("gaussian_nll: mask selects no voxels");

  const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (mask && (*mask)[i] == 0.0) continue;
    const double diff = x[i] - m[i];
    total += half_log_two_pi + s[i] + diff * diff / (2.0 * std::exp(2.0 * s[i]));
  }
  const double n = static_cast<double>(count);
  std::vector<double> keep;
  if (mask) keep.assign(mask->data().begin(), mask->data().end());
  return mean.tape()->record(
      Tensor::scalar(total / n), {mean, log_std},
      [mean, log_std, x, keep = std::move(keep), n](Tape& t, std::span<const double> g) {
        const auto& mv = mean.value();
        const auto& sv = log_std.value();
        std::vector<double> gm(x.size(), 0.0), gs(x.size(), 0.0);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (!keep.empty() && keep[i] == 0.0) continue;
          const double diff = x[i] - mv[i];
          const double inv_var = std::exp(-2.0 * sv[i]);
          gm[i] = g[0] * (-diff * inv_var) / n;
          gs[i] = g[0] * (1.0 - diff * diff * inv_var) / n;
        }
        t.accumulate(mean, gm);
        t.accumulate(log_std, gs);
      });
}

}  // namespace vpcnn
