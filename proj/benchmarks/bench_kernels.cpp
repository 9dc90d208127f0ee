#include <benchmark/benchmark.h>

#include <vpcnn/causal.hpp>
#include <vpcnn/model.hpp>
#include <vpcnn/ops.hpp>
#include <vpcnn/training.hpp>

using namespace vpcnn;

namespace {

Tensor random_tensor(const Dims& dims, Rng& rng) {
  Tensor t(dims);
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

void BM_ConvForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor in = random_tensor({10, n, n, n}, rng);
  const Tensor w = random_tensor({20, 10, 3, 3, 3}, rng);
  const Tensor mask = build_mask(StackKind::Vertical, MaskVariant::B, 3);
  const Tensor bias = random_tensor({20}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_masked(in, w, mask, bias));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}
BENCHMARK(BM_ConvForward)->Arg(8)->Arg(16);

void BM_ConvBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor in = random_tensor({10, n, n, n}, rng);
  const Tensor w = random_tensor({20, 10, 3, 3, 3}, rng);
  const Tensor mask = build_mask(StackKind::Vertical, MaskVariant::B, 3);
  const Tensor g = random_tensor({20, n, n, n}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(conv3d_masked_backward(in, w, mask, g, true));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(n * n * n));
}
BENCHMARK(BM_ConvBackward)->Arg(8)->Arg(16);

void BM_ModelForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const ModelParams params = ModelParams::init(ModelConfig{}, rng);
  Tensor x({1, n, n, n});
  for (auto& v : x.data()) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(model_forward(x, params, DropoutMode::off()));
}
BENCHMARK(BM_ModelForward)->Arg(8)->Arg(16);

void BM_TrainStep(benchmark::State& state) {
  Rng rng(4);
  ModelParams params = ModelParams::init(ModelConfig{}, rng);
  Tensor x({1, 8, 8, 8});
  for (auto& v : x.data()) v = rng.uniform();
  const NamedParams named = params.parameters();
  AdamState adam;
  const TrainConfig cfg;
  for (auto _ : state) {
    params.zero_grad();
    Tape tape;
    const ForwardVars out = model_forward(tape, x, params, DropoutMode::on(rng));
    tape.backward(gaussian_nll(out.mean, out.log_std, x, nullptr));
    adam_step(named, adam, cfg);
  }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
