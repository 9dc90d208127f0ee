#include <doctest.h>

#include <vpcnn/bayes.hpp>
#include <vpcnn/error.hpp>

#include "../support/testing.hpp"

using namespace vpcnn;
using namespace vpcnn::testing;

namespace {

EmissionField field_with_mean(const Tensor& mean) { return {mean, Tensor(mean.dims(), 0.0)}; }

Tensor mask_of(const Dims& dims, std::initializer_list<std::size_t> on) {
  Tensor m(dims, 0.0);
  for (auto i : on) m[i] = 1.0;
  return m;
}

ModelConfig small_model(double rate) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden_channels = 6;
  cfg.dropout_rate = rate;
  return cfg;
}

}  // namespace

TEST_CASE("mc passes") {
  Rng rng(1);
  const Tensor x = random_tensor({1, 4, 4, 4}, rng, 0, 1);

  SUBCASE("rate 0 gives identical passes and zero sigma") {
    const ModelParams params = ModelParams::init(small_model(0.0), rng);
    const McPasses mc = mc_passes(params, x, 5, rng);
    REQUIRE(mc.passes.size() == 5);
    for (const auto& p : mc.passes) CHECK(p.mean == mc.passes[0].mean);
    const auto maps = moments(mc.passes);
    for (double s : maps.sigma.data()) CHECK(s == 0.0);
  }

  SUBCASE("a fixed master seed reproduces every pass") {
    const ModelParams params = ModelParams::init(small_model(0.3), rng);
    Rng a(42), b(42);
    const McPasses first = mc_passes(params, x, 6, a), second = mc_passes(params, x, 6, b);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(first.passes[i].mean == second.passes[i].mean);
      CHECK(first.passes[i].log_std == second.passes[i].log_std);
    }
    CHECK(first.penultimate == second.penultimate);
    const auto maps = moments(first.passes);
    double peak = 0.0;
    for (double s : maps.sigma.data()) {
      CHECK(s >= 0.0);
      peak = std::max(peak, s);
    }
    CHECK(peak > 0.0);
    CHECK(maps.passes == 6);
  }

  SUBCASE("fewer than two passes is a usage error") {
    const ModelParams params = ModelParams::init(small_model(0.1), rng);
    CHECK_THROWS_AS(mc_passes(params, x, 1, rng), UsageError);
  }
}

TEST_CASE("moments formulas") {
  const Tensor a({1, 1, 1, 3}, {0.2, 1.0, -3.0}), b({1, 1, 1, 3}, {0.6, 1.0, 1.0});
  const auto maps = moments({field_with_mean(a), field_with_mean(b)});
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(maps.mu[i] == doctest::Approx((a[i] + b[i]) / 2).epsilon(1e-15));
    CHECK(maps.sigma[i] == doctest::Approx(std::abs(a[i] - b[i]) / std::sqrt(2.0)).epsilon(1e-14));
  }
  CHECK(maps.sigma[1] == 0.0);

  Rng rng(3);
  std::vector<EmissionField> noise;
  for (int t = 0; t < 1000; ++t) {
    Tensor m({1, 2, 2, 2});
    for (auto& v : m.data()) v = rng.normal();
    noise.push_back(field_with_mean(m));
  }
  const auto noise_maps = moments(noise);
  for (double s : noise_maps.sigma.data()) CHECK(std::abs(s - 1.0) < 0.1);
}

TEST_CASE("tau segmentation") {
  const Dims d{1, 2, 2, 2};
  CHECK(tau_segment(Tensor(d, 0.7)) == Tensor(d, 0.0));
  CHECK(tau_segment(mask_of(d, {5})) == mask_of(d, {5}));

  Rng rng(4);
  const Tensor x = random_tensor({1, 5, 5, 5}, rng);
  Tensor roi(x.dims(), 1.0);
  for (std::size_t i = 0; i < roi.size(); i += 3) roi[i] = 0.0;
  const Tensor base = tau_segment(x, &roi);
  Tensor shifted = x, scaled = x;
  for (auto& v : shifted.data()) v += 0.375;
  for (auto& v : scaled.data()) v *= 4.0;
  CHECK(tau_segment(shifted, &roi) == base);
  CHECK(tau_segment(scaled, &roi) == base);
  for (std::size_t i = 0; i < roi.size(); ++i)
    if (roi[i] == 0.0) CHECK(base[i] == 0.0);

  const Tensor empty(x.dims(), 0.0);
  CHECK_THROWS_AS(tau_segment(x, &empty), UsageError);
}

TEST_CASE("dice") {
  const Dims d{1, 2, 2, 2};
  const Tensor a = mask_of(d, {0, 1, 2, 3}), b = mask_of(d, {2, 3, 4, 5});
  CHECK(dice(a, a) == 1.0);
  CHECK(dice(a, mask_of(d, {4, 5})) == 0.0);
  CHECK(dice(a, b) == 0.5);
  CHECK(dice(Tensor(d), Tensor(d)) == 1.0);
  CHECK_THROWS_AS(dice(a, Tensor({1, 2, 2, 1})), ShapeError);

  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    Tensor p(d), q(d);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
      q[i] = rng.bernoulli(0.6) ? 1.0 : 0.0;
    }
    CHECK(dice(p, q) == dice(q, p));
  }
}

TEST_CASE("feature export") {
  Rng rng(6);
  const ModelParams params = ModelParams::init(ModelConfig{}, rng);
  const Tensor x = random_tensor({1, 4, 4, 4}, rng, 0, 1);

  Rng r1(7);
  CHECK(export_features(params, x, FeatureVariant::Chi, 2, r1) == x);

  Rng r2(8), r3(8);
  const Tensor xi = export_features(params, x, FeatureVariant::Xi, 4, r2);
  CHECK(xi.dims() == Dims{3, 4, 4, 4});
  const auto maps = moments(mc_passes(params, x, 4, r3).passes);
  CHECK(slice_channels(xi, 0, 1) == x);
  CHECK(slice_channels(xi, 1, 1) == maps.mu);
  CHECK(slice_channels(xi, 2, 1) == maps.sigma);

  Rng r4(9);
  const Tensor psi = export_features(params, x, FeatureVariant::Psi, 2, r4);
  CHECK(psi.dims() == Dims{10, 4, 4, 4});
  CHECK(psi == model_forward(x, params, DropoutMode::off()).penultimate);

  CHECK(parse_feature_variant("xi") == FeatureVariant::Xi);
  CHECK(std::string(to_string(FeatureVariant::Psi)) == "psi");
  CHECK_THROWS_AS(parse_feature_variant("phi"), UsageError);
}
