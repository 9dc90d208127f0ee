#pragma once

#include <vpcnn/rng.hpp>
#include <vpcnn/tape.hpp>
#include <vpcnn/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

namespace vpcnn::testing {

inline Tensor random_tensor(const Dims& dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(dims);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// |a - b| / max(|a|, |b|, floor).
inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central-difference derivative of `f` with respect to t[i].
inline double central_difference(Tensor& t, std::size_t i, const std::function<double()>& f,
                                 double h = 1e-6) {
  const double saved = t[i];
  t[i] = saved + h;
  const double up = f();
  t[i] = saved - h;
  const double down = f();
  t[i] = saved;
  return (up - down) / (2.0 * h);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vpcnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace vpcnn::testing
