#include "vpcnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vpcnn/error.hpp"
#include "vpcnn/ops.hpp"

namespace vpcnn {

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size != 1) throw ConfigError("only batch size 1 is supported");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  for (double r : split)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(split[0] + split[1] + split[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
}

void adam_step(const NamedParams& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& [name, t] : params) {
      state.m.emplace_back(t->size(), 0.0);
      state.v.emplace_back(t->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("Adam state does not match the parameter list");
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].second;
    if (state.m[p].size() != t.size()) throw ShapeError("Adam state shape mismatch for " + params[p].first);
    if (!t.has_grad()) continue;
    for (double g : t.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + params[p].first);
  }

  state.t += 1;
  const double correction1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p].second;
    if (!t.has_grad()) continue;
    auto grad = t.grad();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      t[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  const auto val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[1]));
  const auto test = static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratios[2]));
  return {n - val - test, val, test};
}

Split<std::size_t> split_indices(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed) {
  if (n < 10) throw UsageError("split_dataset needs at least 10 items, got " + std::to_string(n));
  const auto sizes = split_sizes(n, ratios);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  Split<std::size_t> out;
  out.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
  out.val.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                 order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
  out.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), order.end());
  return out;
}

bool EarlyStopping::observe(std::size_t epoch, double val_loss) {
  last_epoch_ = epoch;
  if (val_loss < best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

double mean_nll(const ModelParams& params, const std::vector<Sample>& samples) {
  if (samples.empty()) throw UsageError("mean_nll: no samples");
  double total = 0.0;
  for (const Sample& s : samples) {
    const ForwardOutput out = model_forward(s.volume, params, DropoutMode::off());
    total += nll(out.emission, s.volume, s.roi_ptr());
  }
  return total / static_cast<double>(samples.size());
}

namespace {

Extent3 common_extent(const std::vector<Sample>& a, const std::vector<Sample>& b) {
  if (a.empty()) throw UsageError("training set is empty");
  const Extent3 e = spatial_extent(a.front().volume);
  for (const auto* set : {&a, &b})
    for (const Sample& s : *set)
      if (spatial_extent(s.volume) != e) throw DataError("all training volumes must share dims (" + s.id + ")");
  return e;
}

}  // namespace

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg, Rng& rng,
                  const EpochObserver& observer) {
  model_cfg.validate();
  train_cfg.validate();
  return train_from(ModelParams::init(model_cfg, rng), train_set, val_set, train_cfg, rng, observer);
}

TrainResult train_from(ModelParams params, const std::vector<Sample>& train_set,
                       const std::vector<Sample>& val_set, const TrainConfig& cfg, Rng& rng,
                       const EpochObserver& observer) {
  cfg.validate();
  params.config.validate();
  if (val_set.empty()) throw UsageError("validation set is empty");
  const Extent3 dims = common_extent(train_set, val_set);

  TrainResult result;
  result.initial_val_nll = mean_nll(params, val_set);
  result.best = {params, dims};

  const NamedParams named = params.parameters();
  AdamState adam;
  EarlyStopping stopper(cfg.patience);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng.engine());
    double train_total = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Sample& s = train_set[order[step]];
      params.zero_grad();
      Tape tape;
      ForwardVars out = model_forward(tape, s.volume, params, DropoutMode::on(rng));
      Var loss = gaussian_nll(out.mean, out.log_std, s.volume, s.roi_ptr());
      const double value = loss.value().item();
      if (!std::isfinite(value))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", volume " +
                           std::to_string(order[step]) + " (" + s.id + ")");
      tape.backward(loss);
      adam_step(named, adam, cfg);
      train_total += value;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_nll = train_total / static_cast<double>(order.size());
    record.val_nll = mean_nll(params, val_set);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!std::isfinite(record.val_nll))
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    result.history.push_back(record);
    if (stopper.observe(epoch, record.val_nll)) {
      result.best.params = params;
      result.best_epoch = epoch;
    }
    if (observer) observer(record);
    if (stopper.should_stop()) break;
  }
  // Drop gradient buffers from the returned copy.
  for (auto& [name, t] : result.best.params.parameters()) *t = Tensor(t->dims(), t->values());
  return result;
}

LikelihoodReport evaluate_ll(const Checkpoint& checkpoint, const std::vector<Sample>& samples) {
  if (samples.empty()) throw UsageError("evaluate_ll: no samples");
  LikelihoodReport report;
  const Extent3 trained = checkpoint.train_dims;
  double total = 0.0;
  for (const Sample& s : samples) {
    if (trained.voxels() != 0 && spatial_extent(s.volume) != trained) report.dims_differ = true;
    const ForwardOutput out = model_forward(s.volume, checkpoint.params, DropoutMode::off());
    total += -nll(out.emission, s.volume, s.roi_ptr());
  }
  report.log_likelihood = total / static_cast<double>(samples.size());
  return report;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write history " + path);
  out.precision(17);
  out << "epoch,train_nll,val_nll,seconds\n";
  for (const auto& r : history) out << r.epoch << ',' << r.train_nll << ',' << r.val_nll << ',' << r.seconds << '\n';
}

}  // namespace vpcnn
