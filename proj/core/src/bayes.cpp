#include "vpcnn/bayes.hpp"

#include <cmath>

#include "vpcnn/error.hpp"

namespace vpcnn {

McPasses mc_passes(const ModelParams& params, const Tensor& x, std::size_t passes, Rng& rng) {
  if (passes < 2) throw UsageError("mc_passes needs T >= 2, got " + std::to_string(passes));
  const std::uint64_t master = rng.next_u64();
  McPasses out;
  out.passes.resize(passes);
  for (std::size_t i = 0; i < passes; ++i) {
    Rng pass_rng(derive_seed(master, i));
    out.passes[i] = model_forward(x, params, DropoutMode::on(pass_rng)).emission;
  }
  out.penultimate = model_forward(x, params, DropoutMode::off()).penultimate;
  return out;
}

UncertaintyMaps moments(const std::vector<EmissionField>& passes) {
  if (passes.size() < 2) throw UsageError("moments needs at least 2 passes");
  const Dims& dims = passes.front().mean.dims();
  for (const auto& p : passes)
    if (p.mean.dims() != dims) throw ShapeError("moments: passes differ in shape");

  const double n = static_cast<double>(passes.size());
  UncertaintyMaps maps{Tensor(dims), Tensor(dims), passes.size()};
  // Deviations are taken from the first pass, so identical passes give
  // mu equal to that pass and sigma exactly 0.
  for (std::size_t i = 0; i < maps.mu.size(); ++i) {
    const double ref = passes.front().mean[i];
    double s = 0.0;
    for (const auto& p : passes) s += p.mean[i] - ref;
    const double shift = s / n;
    double ss = 0.0;
    for (const auto& p : passes) {
      const double d = (p.mean[i] - ref) - shift;
      ss += d * d;
    }
    maps.mu[i] = ref + shift;
    maps.sigma[i] = std::sqrt(ss / (n - 1.0));
  }
  return maps;
}

Tensor tau_segment(const Tensor& volume, const Tensor* roi) {
  if (roi) require_same_dims(volume, *roi, "tau_segment roi");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (roi && (*roi)[i] == 0.0) continue;
    total += volume[i];
    ++count;
  }
  if (count == 0) throw UsageError("tau_segment: empty roi");
  const double threshold = total / static_cast<double>(count);
  Tensor mask(volume.dims());
  for (std::size_t i = 0; i < volume.size(); ++i)
    if ((!roi || (*roi)[i] != 0.0) && volume[i] > threshold) mask[i] = 1.0;
  return mask;
}

double dice(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "dice");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0.0, y = b[i] != 0.0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

FeatureVariant parse_feature_variant(const std::string& name) {
  if (name == "chi") return FeatureVariant::Chi;
  if (name == "xi") return FeatureVariant::Xi;
  if (name == "psi") return FeatureVariant::Psi;
  throw UsageError("unknown feature variant '" + name + "' (expected chi, xi or psi)");
}

const char* to_string(FeatureVariant variant) {
  switch (variant) {
    case FeatureVariant::Chi: return "chi";
    case FeatureVariant::Xi: return "xi";
    case FeatureVariant::Psi: return "psi";
  }
  return "?";
}

Tensor export_features(const ModelParams& params, const Tensor& x, FeatureVariant variant,
                       std::size_t passes, Rng& rng) {
  switch (variant) {
    case FeatureVariant::Chi:
      return x;
    case FeatureVariant::Xi: {
      const UncertaintyMaps maps = moments(mc_passes(params, x, passes, rng).passes);
      const Tensor parts[] = {x, maps.mu, maps.sigma};
      return concat_channels(parts);
    }
    case FeatureVariant::Psi:
      return model_forward(x, params, DropoutMode::off()).penultimate;
  }
  throw UsageError("unknown feature variant");
}

}  // namespace vpcnn
