#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vpcnn/checkpoint.hpp"
#include "vpcnn/model.hpp"
#include "vpcnn/rng.hpp"
#include "vpcnn/volume_io.hpp"

namespace vpcnn {

struct TrainConfig {
  std::size_t epochs = 20;
  double lr = 0.001;
  std::size_t batch_size = 1;
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  std::size_t patience = 20;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;

  void validate() const;
};

/// First and second moments per parameter tensor plus the step count.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
};

using NamedParams = std::vector<std::pair<std::string, Tensor*>>;

/// One bias-corrected Adam update using each tensor's grad buffer:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
/// Throws NumericError naming the first parameter with a non-finite gradient
/// (parameters are left untouched in that case).
void adam_step(const NamedParams& params, AdamState& state, const TrainConfig& cfg);

template <typename T>
struct Split {
  std::vector<T> train, val, test;
};

/// Index partition sizes: floor(n * ratio) for val and test, the rest train.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

/// Deterministic shuffled partition of item indices. Throws UsageError for
/// fewer than 10 items.
Split<std::size_t> split_indices(std::size_t n, const std::array<double, 3>& ratios, std::uint64_t seed);

template <typename T>
Split<T> split_dataset(std::vector<T> items, const std::array<double, 3>& ratios, std::uint64_t seed) {
  const auto idx = split_indices(items.size(), ratios, seed);
  Split<T> out;
  for (auto i : idx.train) out.train.push_back(std::move(items[i]));
  for (auto i : idx.val) out.val.push_back(std::move(items[i]));
  for (auto i : idx.test) out.test.push_back(std::move(items[i]));
  return out;
}

/// Patience bookkeeping on validation NLL.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Records the validation loss of `epoch` (1-based); true on a new minimum.
  bool observe(std::size_t epoch, double val_loss);
  bool should_stop() const { return last_epoch_ >= best_epoch_ + patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t last_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  Checkpoint best;  // parameters at the lowest validation NLL
  std::size_t best_epoch = 0;
  double initial_val_nll = 0.0;
  std::vector<EpochRecord> history;
};

/// Optional per-epoch callback (logging).
using EpochObserver = std::function<void(const EpochRecord&)>;

/// Batch-size-1 training with dropout on, validation NLL after each epoch,
/// early stopping. `rng` drives initialization, shuffling and dropout. Throws
/// NumericError with epoch and volume index on a non-finite loss.
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const ModelConfig& model_cfg, const TrainConfig& train_cfg, Rng& rng,
                  const EpochObserver& observer = {});

/// Same loop starting from given parameters.
TrainResult train_from(ModelParams params, const std::vector<Sample>& train_set,
                       const std::vector<Sample>& val_set, const TrainConfig& train_cfg, Rng& rng,
                       const EpochObserver& observer = {});

/// Mean per-voxel NLL (roi-masked when available) with dropout off.
double mean_nll(const ModelParams& params, const std::vector<Sample>& samples);

struct LikelihoodReport {
  double log_likelihood = 0.0;  // mean over volumes of -nll
  bool dims_differ = false;     // evaluated dims differ from training dims
};

LikelihoodReport evaluate_ll(const Checkpoint& checkpoint, const std::vector<Sample>& samples);

/// CSV with header epoch,train_nll,val_nll,seconds.
void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

}  // namespace vpcnn
