#include "vpcnn/verify.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "vpcnn/error.hpp"

namespace vpcnn {

std::string CausalityReport::render() const {
  std::ostringstream os;
  for (const auto& v : violations) os << to_string(v.perturbed) << " -> " << to_string(v.changed) << '\n';
  if (passed())
    os << "PASS\n";
  else
    os << "FAIL " << violations.size() << '\n';
  return os.str();
}

CausalityReport verify_causality(const ModelParams& model, const Extent3& dims, std::size_t trials,
                                 Rng& rng) {
  const std::size_t n = dims.voxels();
  if (n == 0) throw UsageError("verify_causality: extents must be positive");

  Tensor base(Dims{1, dims.h, dims.w, dims.d});
  for (auto& v : base.data()) v = rng.uniform();
  const ForwardOutput reference = model_forward(base, model, DropoutMode::off());

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (trials < n) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    order.resize(trials);
  }

  CausalityReport report;
  report.trials = order.size();
  for (std::size_t u : order) {
    Tensor x = base;
    x[u] += 1.0;
    const ForwardOutput out = model_forward(x, model, DropoutMode::off());
    for (std::size_t v = 0; v < n; ++v) {
      const bool changed = out.emission.mean[v] != reference.emission.mean[v] ||
                           out.emission.log_std[v] != reference.emission.log_std[v];
      if (changed && !(u < v)) report.violations.push_back({dims.unflat(u), dims.unflat(v)});
    }
  }
  return report;
}

}  // namespace vpcnn
