#include <doctest.h>

#include <vpcnn/error.hpp>
#include <vpcnn/model.hpp>
#include <vpcnn/ops.hpp>
#include <vpcnn/verify.hpp>

#include "../support/testing.hpp"

using namespace vpcnn;
using namespace vpcnn::testing;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden_channels = 4;
  return cfg;
}

StackState constant_state(Tape& tape, const Tensor& v, const Tensor& d, const Tensor& h) {
  return {tape.constant_ref(v), tape.constant_ref(d), tape.constant_ref(h)};
}

}  // namespace

TEST_CASE("gated_unit values") {
  CHECK(gated_unit(Tensor({4, 2, 2, 2}, 0.0)) == Tensor({2, 2, 2, 2}, 0.0));

  Tensor pre({2, 3, 3, 3}, 0.0);
  for (std::size_t i = 0; i < 27; ++i) pre[i] = 0.5;
  const Tensor out = gated_unit(pre);
  const double expected = std::tanh(0.5) * (1.0 / (1.0 + std::exp(-0.0)));
  for (double v : out.data()) CHECK(std::abs(v - 0.23106) < 1e-5);
  for (double v : out.data()) CHECK(v == doctest::Approx(expected).epsilon(1e-14));

  CHECK_THROWS_AS(gated_unit(Tensor({3, 2, 2, 2})), ShapeError);
}

TEST_CASE("gated_unit stays inside (-1, 1)") {
  // Beyond |x| ~ 19 tanh rounds to exactly 1 in double precision, so the open
  // range is checked on the interval where it is representable.
  Rng rng(3);
  const Tensor pre = random_tensor({8, 10, 10, 10}, rng, -15.0, 15.0);
  const Tensor gated = gated_unit(pre);
  for (double v : gated.data()) REQUIRE((v > -1.0 && v < 1.0));
}

TEST_CASE("first layer ignores any residual projection") {
  Rng rng(5);
  ModelParams params = ModelParams::init(tiny_config(), rng);
  const Tensor x = random_tensor({1, 4, 4, 4}, rng, 0, 1);
  LayerParams with_residual = params.layers[0];
  with_residual.residual = params.layers[1].residual;
  for (auto& v : with_residual.residual->kernel.data()) v = rng.uniform(-3, 3);

  Tape t1(false), t2(false);
  const auto a = layer_forward(t1, constant_state(t1, x, x, x), params.layers[0], 0, 0.0, DropoutMode::off());
  const auto b = layer_forward(t2, constant_state(t2, x, x, x), with_residual, 0, 0.0, DropoutMode::off());
  CHECK(a.stacks.horizontal.value() == b.stacks.horizontal.value());
  CHECK(a.skip.value() == b.skip.value());
}

TEST_CASE("zero weights with biases give the closed-form gate image") {
  Rng rng(6);
  ModelParams params = ModelParams::init(tiny_config(), rng);
  LayerParams& layer = params.layers[1];
  for (ConvParams* c : {&layer.vertical, &layer.depth, &layer.horizontal, &layer.vertical_to_depth,
                        &layer.vertical_to_horizontal, &layer.depth_to_horizontal, &*layer.residual, &layer.skip})
    for (auto& v : c->kernel.data()) v = 0.0;
  const std::vector<double> b = {0.3, -0.8, 1.1, 0.4};
  layer.horizontal.bias = Tensor({4}, b);

  const Tensor in = random_tensor({2, 3, 3, 3}, rng);
  Tape tape(false);
  const auto out = layer_forward(tape, constant_state(tape, in, in, in), layer, 1, 0.0, DropoutMode::off());
  const Tensor& gate = out.horizontal_gate.value();
  for (std::size_t ch = 0; ch < 2; ++ch) {
    const double expected = std::tanh(b[ch]) / (1.0 + std::exp(-b[ch + 2]));
    for (std::size_t i = 0; i < 27; ++i) CHECK(gate[ch * 27 + i] == doctest::Approx(expected).epsilon(1e-14));
  }
}

TEST_CASE("horizontal input never reaches the vertical or depth stacks") {
  Rng rng(7);
  ModelParams params = ModelParams::init(ModelConfig{}, rng);
  const Tensor v = random_tensor({10, 4, 4, 4}, rng), d = random_tensor({10, 4, 4, 4}, rng);
  const Tensor h1 = random_tensor({10, 4, 4, 4}, rng), h2 = random_tensor({10, 4, 4, 4}, rng);
  Tape t1(false), t2(false);
  const auto a = layer_forward(t1, constant_state(t1, v, d, h1), params.layers[2], 2, 0.15, DropoutMode::off());
  const auto b = layer_forward(t2, constant_state(t2, v, d, h2), params.layers[2], 2, 0.15, DropoutMode::off());
  CHECK(a.stacks.vertical.value() == b.stacks.vertical.value());
  CHECK(a.stacks.depth.value() == b.stacks.depth.value());
  CHECK_FALSE(a.stacks.horizontal.value() == b.stacks.horizontal.value());
}

TEST_CASE("model_forward structure") {
  Rng rng(8);
  const ModelParams params = ModelParams::init(ModelConfig{}, rng);
  const Tensor x1 = random_tensor({1, 5, 5, 5}, rng, 0, 1), x2 = random_tensor({1, 5, 5, 5}, rng, 0, 1);
  const auto a = model_forward(x1, params, DropoutMode::off());
  const auto b = model_forward(x2, params, DropoutMode::off());

  CHECK(a.emission.mean[0] == b.emission.mean[0]);
  CHECK(a.emission.log_std[0] == b.emission.log_std[0]);
  CHECK(a.penultimate.dims() == Dims{10, 5, 5, 5});
  CHECK(a.emission.mean.dims() == Dims{1, 5, 5, 5});
  for (double s : a.emission.log_std.data()) CHECK((s >= kLogStdMin && s <= kLogStdMax));

  const auto again = model_forward(x1, params, DropoutMode::off());
  CHECK(again.emission.mean == a.emission.mean);
  CHECK(again.emission.log_std == a.emission.log_std);
  CHECK(again.penultimate == a.penultimate);

  CHECK_THROWS_AS(model_forward(Tensor({2, 3, 3, 3}), params, DropoutMode::off()), ShapeError);
}

TEST_CASE("parameter layout") {
  Rng rng(9);
  ModelParams params = ModelParams::init(ModelConfig{}, rng);
  Rng other(10);
  CHECK(ModelParams::init(ModelConfig{}, other).parameter_count() == params.parameter_count());
  for (const ConvParams* c : params.convs())
    for (std::size_t i = 0; i < c->kernel.size(); ++i)
      if (c->mask[i % c->mask.size()] == 0.0) REQUIRE(c->kernel[i] == 0.0);
  CHECK(params.layers[0].residual == std::nullopt);
  CHECK(params.layers[1].residual.has_value());

  ModelConfig bad;
  bad.hidden_channels = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.layers = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.kernel = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.dropout_rate = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("nll values") {
  const Tensor x({1, 2, 2, 2}, 0.4);
  EmissionField at_mean{Tensor({1, 2, 2, 2}, 0.4), Tensor({1, 2, 2, 2}, 0.0)};
  CHECK(std::abs(nll(at_mean, x) - 0.918939) < 1e-6);
  EmissionField off_by_one{Tensor({1, 2, 2, 2}, 1.4), Tensor({1, 2, 2, 2}, 0.0)};
  CHECK(std::abs(nll(off_by_one, x) - 1.418939) < 1e-6);

  Tensor half({1, 2, 2, 2}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) half[i] = 1.0;
  CHECK(nll(off_by_one, x, &half) == doctest::Approx(nll(off_by_one, x)).epsilon(1e-14));
  const Tensor empty({1, 2, 2, 2}, 0.0);
  CHECK_THROWS_AS(nll(off_by_one, x, &empty), UsageError);
}

TEST_CASE("full-model gradients match central differences") {
  Rng rng(1234);
  ModelParams params = ModelParams::init(tiny_config(), rng);
  // Move biases off zero so every path is exercised.
  for (auto& [name, t] : params.parameters())
    if (name.ends_with("bias"))
      for (auto& v : t->data()) v = rng.uniform(-0.5, 0.5);
  const Tensor x = random_tensor({1, 4, 4, 4}, rng, 0, 1);
  Tensor roi({1, 4, 4, 4}, 1.0);
  roi[0] = roi[63] = 0.0;

  auto loss_value = [&](bool dropout) {
    Rng drop(77);
    Tape tape(false);
    const auto out = model_forward(tape, x, params, dropout ? DropoutMode::on(drop) : DropoutMode::off());
    return gaussian_nll(out.mean, out.log_std, x, &roi).value().item();
  };

  for (bool dropout : {false, true}) {
    params.zero_grad();
    {
      Rng drop(77);
      Tape tape;
      const auto out = model_forward(tape, x, params, dropout ? DropoutMode::on(drop) : DropoutMode::off());
      tape.backward(gaussian_nll(out.mean, out.log_std, x, &roi));
    }
    double worst = 0.0;
    for (auto& [name, t] : params.parameters()) {
      const std::vector<double> analytic(t->grad().begin(), t->grad().end());
      for (std::size_t i = 0; i < t->size(); ++i) {
        const double fd = central_difference(*t, i, [&] { return loss_value(dropout); }, 1e-5);
        worst = std::max(worst, rel_err(analytic[i], fd, 1e-6));
      }
    }
    CAPTURE(dropout);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("sampling") {
  Rng init(17);
  const ModelParams params = ModelParams::init(tiny_config(), init);
  const Extent3 dims{4, 4, 4};

  Rng a(5), b(5);
  const Tensor s1 = sample(params, dims, a, 1.0);
  CHECK(s1 == sample(params, dims, b, 1.0));
  for (double v : s1.data()) CHECK((v >= 0.0 && v <= 1.0));

  Rng c(6);
  const Tensor cold = sample(params, dims, c, 1e-12);
  const Tensor greedy = greedy_decode(params, dims);
  CHECK(max_abs_diff(cold.data(), greedy.data()) < 1e-9);

  CHECK_THROWS_AS(sample(params, dims, c, 0.0), UsageError);
}

TEST_CASE("greedy decodes score no worse than noise on average") {
  double greedy_total = 0.0, noise_total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const ModelParams params = ModelParams::init(tiny_config(), rng);
    const Tensor g = greedy_decode(params, {4, 4, 4});
    const Tensor noise = random_tensor({1, 4, 4, 4}, rng, 0, 1);
    greedy_total += nll(model_forward(g, params, DropoutMode::off()).emission, g);
    noise_total += nll(model_forward(noise, params, DropoutMode::off()).emission, noise);
  }
  CHECK(greedy_total / 10 <= noise_total / 10);
}

TEST_CASE("the network is fully convolutional") {
  Rng rng(18);
  const ModelParams params = ModelParams::init(ModelConfig{}, rng);
  const Tensor x = random_tensor({1, 12, 12, 12}, rng, 0, 1);
  const auto out = model_forward(x, params, DropoutMode::off());
  CHECK(out.emission.mean.dims() == Dims{1, 12, 12, 12});
  CHECK(std::isfinite(nll(out.emission, x)));
  CHECK(verify_causality(params, {12, 12, 12}, 24, rng).passed());
  CHECK(verify_causality(params, {3, 9, 2}, 54, rng).passed());
}
