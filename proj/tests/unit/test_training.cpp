#include <doctest.h>

#include <vpcnn/error.hpp>
#include <vpcnn/training.hpp>
#include <vpcnn/verify.hpp>
#include <vpcnn/volume_io.hpp>

#include "../support/oracles.hpp"
#include "../support/testing.hpp"

#include <fstream>
#include <set>

using namespace vpcnn;
using namespace vpcnn::testing;

namespace {

std::vector<Sample> small_dataset(std::size_t n, std::uint64_t seed, Extent3 dims = {6, 6, 6}) {
  SynthConfig cfg;
  cfg.n_volumes = n;
  cfg.dims = dims;
  cfg.seed = seed;
  std::vector<Sample> out;
  for (auto& item : synth_dataset(cfg))
    out.push_back({"s" + std::to_string(out.size()), std::move(item.volume), std::move(item.roi), std::nullopt});
  normalize_samples(out);
  return out;
}

ModelConfig small_model() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.hidden_channels = 6;
  return cfg;
}

}  // namespace

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Tensor p({3}, {0.5, -1.0, 2.0});
  p.enable_grad();
  const Tensor before = p;
  AdamState state;
  adam_step({{"p", &p}}, state, TrainConfig{});
  CHECK(p == before);
  CHECK(state.t == 1);
}

TEST_CASE("adam scalar step from a fresh state") {
  Tensor p({1}, 1.0);
  p.enable_grad();
  p.grad()[0] = 1.0;
  AdamState state;
  adam_step({{"theta", &p}}, state, TrainConfig{});
  CHECK(p[0] == doctest::Approx(1.0 - 0.001 * (1.0 / (1.0 + 1e-8))).epsilon(1e-15));
  CHECK(std::abs(p[0] - 0.999) < 1e-9);
}

TEST_CASE("adam on theta squared follows the hand-coded update") {
  const auto oracle = adam_square_oracle(1.0, 50);
  Tensor p({1}, 1.0);
  p.enable_grad();
  AdamState state;
  double previous = 1.0;
  for (int step = 0; step < 50; ++step) {
    p.grad()[0] = 2.0 * p[0];
    adam_step({{"theta", &p}}, state, TrainConfig{});
    CHECK(std::abs(p[0] - oracle[static_cast<std::size_t>(step)]) < 1e-12);
    CHECK(std::abs(p[0]) < std::abs(previous));
    previous = p[0];
  }
}

TEST_CASE("adam refuses non-finite gradients and names the parameter") {
  Tensor a({2}, 1.0), b({2}, 1.0);
  a.enable_grad();
  b.enable_grad();
  a.grad()[0] = 0.5;
  b.grad()[1] = std::nan("");
  AdamState state;
  try {
    adam_step({{"layer0.ok", &a}, {"layer1.bad", &b}}, state, TrainConfig{});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer1.bad") != std::string::npos);
  }
  CHECK(a == Tensor({2}, 1.0));
}

TEST_CASE("split sizes and determinism") {
  const std::array<double, 3> ratios{0.8, 0.1, 0.1};
  CHECK(split_sizes(10, ratios) == std::array<std::size_t, 3>{8, 1, 1});
  CHECK(split_sizes(103, ratios) == std::array<std::size_t, 3>{83, 10, 10});

  const auto a = split_indices(103, ratios, 42), b = split_indices(103, ratios, 42);
  CHECK(a.train == b.train);
  CHECK(a.val == b.val);
  CHECK(a.test == b.test);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  all.insert(a.test.begin(), a.test.end());
  CHECK(all.size() == 103);
  CHECK(*all.rbegin() == 102);

  const auto c = split_indices(103, ratios, 43);
  CHECK(c.train != a.train);

  CHECK_THROWS_AS(split_indices(9, ratios, 0), UsageError);
  const auto items = split_dataset(std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, ratios, 1);
  CHECK(items.train.size() == 8);
}

TEST_CASE("early stopping semantics") {
  EarlyStopping stop(1);
  CHECK(stop.observe(1, 1.0));
  CHECK_FALSE(stop.should_stop());
  CHECK_FALSE(stop.observe(2, 1.5));
  CHECK(stop.should_stop());
  CHECK(stop.best_epoch() == 1);
  CHECK(stop.best_loss() == 1.0);

  EarlyStopping patient(3);
  patient.observe(1, 2.0);
  patient.observe(2, 1.0);
  patient.observe(3, 1.2);
  patient.observe(4, 1.1);
  CHECK_FALSE(patient.should_stop());
  patient.observe(5, 1.05);
  CHECK(patient.should_stop());
  CHECK(patient.best_epoch() == 2);
}

TEST_CASE("training config validation") {
  TrainConfig cfg;
  cfg.batch_size = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.split = {0.5, 0.1, 0.1};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("training is reproducible, improves, and keeps the model causal") {
  const auto data = small_dataset(12, 3);
  const std::vector<Sample> train_set(data.begin(), data.begin() + 10), val_set(data.begin() + 10, data.end());
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr = 0.01;

  Rng r1(9), r2(9);
  const TrainResult a = train(train_set, val_set, small_model(), cfg, r1);
  const TrainResult b = train(train_set, val_set, small_model(), cfg, r2);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].train_nll == b.history[i].train_nll);
    CHECK(a.history[i].val_nll == b.history[i].val_nll);
  }
  CHECK(encode_checkpoint(a.best) == encode_checkpoint(b.best));

  double best = a.initial_val_nll;
  std::size_t best_epoch = 0;
  for (const auto& rec : a.history)
    if (rec.val_nll < best) best = rec.val_nll, best_epoch = rec.epoch;
  CHECK(a.best_epoch == best_epoch);
  CHECK(best < a.initial_val_nll);
  CHECK(mean_nll(a.best.params, val_set) == best);
  CHECK(evaluate_ll(a.best, val_set).log_likelihood >= -a.history.back().val_nll);

  for (const ConvParams* c : a.best.params.convs())
    for (std::size_t i = 0; i < c->kernel.size(); ++i)
      if (c->mask[i % c->mask.size()] == 0.0) REQUIRE(c->kernel[i] == 0.0);
  Rng vr(1);
  CHECK(verify_causality(a.best.params, {6, 6, 6}, 216, vr).passed());
}

TEST_CASE("patience stops training early and keeps the best epoch") {
  const auto data = small_dataset(12, 4);
  const std::vector<Sample> train_set(data.begin(), data.begin() + 10), val_set(data.begin() + 10, data.end());
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr = 0.3;  // large steps make the validation loss bounce
  cfg.patience = 1;
  Rng rng(2);
  const TrainResult r = train(train_set, val_set, small_model(), cfg, rng);
  CHECK(r.history.size() < 30);
  const std::size_t last = r.history.back().epoch;
  CHECK(last == r.best_epoch + 1);
  for (const auto& rec : r.history) CHECK(rec.val_nll >= r.history[r.best_epoch - 1].val_nll);
}

TEST_CASE("a model trained at 8^3 evaluates at 12^3") {
  const auto data = small_dataset(10, 5, {8, 8, 8});
  TrainConfig cfg;
  cfg.epochs = 1;
  Rng rng(3);
  const TrainResult r = train({data.begin(), data.begin() + 8}, {data.begin() + 8, data.end()}, small_model(), cfg, rng);
  const auto big = small_dataset(2, 6, {12, 12, 12});
  const auto report = evaluate_ll(r.best, big);
  CHECK(report.dims_differ);
  CHECK(std::isfinite(report.log_likelihood));
  CHECK(report.log_likelihood == -mean_nll(r.best.params, big));
  Rng vr(4);
  CHECK(verify_causality(r.best.params, {12, 12, 12}, 30, vr).passed());
}

TEST_CASE("non-finite loss aborts with epoch and volume") {
  auto data = small_dataset(12, 7);
  data[3].volume[5] = std::numeric_limits<double>::infinity();
  TrainConfig cfg;
  cfg.epochs = 1;
  Rng rng(1);
  try {
    train({data.begin(), data.begin() + 10}, {data.begin() + 10, data.end()}, small_model(), cfg, rng);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("s3") != std::string::npos);
  }
}

TEST_CASE("history csv layout") {
  const auto dir = scratch_dir("history");
  const std::string path = (dir / "h.csv").string();
  write_history_csv(path, {{1, 1.5, 1.25, 0.5}, {2, 1.0, 1.125, 0.25}});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "epoch,train_nll,val_nll,seconds");
  CHECK(row.rfind("1,1.5,1.25,", 0) == 0);
}
