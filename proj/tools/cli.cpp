#include "cli.hpp"

#include <charconv>
#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "vpcnn/bayes.hpp"
#include "vpcnn/checkpoint.hpp"
#include "vpcnn/error.hpp"
#include "vpcnn/model.hpp"
#include "vpcnn/parallel.hpp"
#include "vpcnn/training.hpp"
#include "vpcnn/verify.hpp"
#include "vpcnn/volume_io.hpp"

namespace vpcnn::cli {

namespace {

struct Options {
  std::uint64_t seed = 0;
  unsigned threads = 1;

  // data / io
  std::string data, out, ckpt, volume, roi, truth, history, part = "test";
  bool normalize = true;
  bool lesion_free = false;

  // synth
  SynthConfig synth;
  std::vector<std::size_t> synth_dims{8, 8, 8};
  std::vector<std::size_t> sample_dims{8, 8, 8};
  std::vector<std::size_t> verify_dims{6, 6, 6};

  // model / training
  ModelConfig model;
  TrainConfig train;

  // inference
  std::size_t passes = 20;
  double temperature = 1.0;
  std::string variant = "xi";
  std::size_t trials = 0;
  bool mutate_center = false;
};

class Logger {
 public:
  explicit Logger(std::ostream& err) : err_(err) {}
  template <typename... KV>
  void info(const std::string& event, const KV&... kv) {
    std::ostringstream line;
    line << "level=info event=" << event;
    ((line << ' ' << kv), ...);
    err_ << line.str() << '\n';
  }
  void error(const std::string& kind, const std::string& message) {
    err_ << "level=error kind=" << kind << " msg=\"" << message << "\"\n";
  }

 private:
  std::ostream& err_;
};

template <typename T>
std::string kv(const std::string& key, const T& value) {
  if constexpr (std::is_floating_point_v<T>) {
    // Shortest text that parses back to the same double.
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, static_cast<double>(value));
    return key + '=' + std::string(buf, res.ptr);
  } else {
    std::ostringstream os;
    os << key << '=' << value;
    return os.str();
  }
}

Extent3 to_extent(const std::vector<std::size_t>& d) {
  if (d.size() != 3 || d[0] == 0 || d[1] == 0 || d[2] == 0)
    throw UsageError("--dims expects three positive extents, e.g. 8,8,8");
  return {d[0], d[1], d[2]};
}

Tensor load_roi(const Options& o) {
  if (o.roi.empty()) return {};
  return read_volume(o.roi);
}

// Loads the modeling input: single channel, min-max normalized inside the roi.
Tensor load_input(const Options& o, Logger& log, std::ostream& out) {
  Tensor x = read_volume(o.volume);
  if (x.dim(0) != 1) throw DataError(o.volume + ": expected a single-channel volume");
  if (!o.normalize) return x;
  const Tensor roi = load_roi(o);
  auto [normalized, params] = normalize(x, roi.empty() ? nullptr : &roi);
  out << kv("norm_min", params.min) << '\n' << kv("norm_max", params.max) << '\n';
  log.info("normalize", kv("min", params.min), kv("max", params.max));
  return normalized;
}

std::vector<Sample> load_samples(const Options& o, Logger& log) {
  auto samples = load_dataset(o.data);
  if (o.lesion_free)
    std::erase_if(samples, [](const Sample& s) { return s.lesion.has_value(); });
  if (o.normalize) normalize_samples(samples);
  log.info("dataset", kv("path", o.data), kv("volumes", samples.size()));
  return samples;
}

Split<Sample> split_samples(const Options& o, std::vector<Sample> samples) {
  return split_dataset(std::move(samples), o.train.split, o.seed);
}

// ---------------------------------------------------------------------------

int cmd_synth(Options& o, std::ostream& out, Logger& log) {
  if (o.out.empty()) throw UsageError("synth needs --out DIR");
  o.synth.dims = to_extent(o.synth_dims);
  o.synth.seed = o.seed;
  const auto items = synth_dataset(o.synth);
  const std::string manifest = write_dataset(o.out, items);
  const auto lesioned = std::count_if(items.begin(), items.end(), [](const auto& i) { return i.lesion_mask.has_value(); });
  log.info("synth", kv("manifest", manifest));
  out << kv("volumes", items.size()) << '\n' << kv("lesioned", lesioned) << '\n' << kv("manifest", manifest) << '\n';
  return kExitOk;
}

int cmd_train(Options& o, std::ostream& out, Logger& log) {
  if (o.data.empty()) throw UsageError("train needs --data MANIFEST");
  o.model.validate();
  o.train.seed = o.seed;
  o.train.validate();
  auto split = split_samples(o, load_samples(o, log));
  if (split.val.empty()) throw UsageError("validation split is empty; add volumes or change --split");
  log.info("split", kv("train", split.train.size()), kv("val", split.val.size()), kv("test", split.test.size()));
  log.info("config", kv("epochs", o.train.epochs), kv("lr", o.train.lr), kv("batch_size", o.train.batch_size),
           kv("dropout", o.model.dropout_rate), kv("layers", o.model.layers), kv("hidden", o.model.hidden_channels),
           kv("kernel", o.model.kernel), kv("patience", o.train.patience));

  Rng rng(o.seed);
  TrainResult result = train(split.train, split.val, o.model, o.train, rng, [&](const EpochRecord& r) {
    log.info("epoch", kv("epoch", r.epoch), kv("train_nll", r.train_nll), kv("val_nll", r.val_nll),
             kv("seconds", r.seconds));
  });
  save_checkpoint(o.out, result.best);
  if (!o.history.empty()) write_history_csv(o.history, result.history);

  out << kv("initial_val_nll", result.initial_val_nll) << '\n'
      << kv("best_epoch", result.best_epoch) << '\n'
      << kv("best_val_nll", result.history.at(result.best_epoch - 1).val_nll) << '\n'
      << kv("epochs_run", result.history.size()) << '\n';
  if (!split.test.empty()) out << kv("test_ll", evaluate_ll(result.best, split.test).log_likelihood) << '\n';
  log.info("checkpoint", kv("path", o.out));
  return kExitOk;
}

int cmd_eval(Options& o, std::ostream& out, Logger& log) {
  if (o.data.empty() || o.ckpt.empty()) throw UsageError("eval needs --ckpt and --data");
  const Checkpoint ck = load_checkpoint(o.ckpt);
  auto samples = load_samples(o, log);
  std::vector<Sample> part;
  if (o.part == "all") {
    part = std::move(samples);
  } else {
    auto split = split_samples(o, std::move(samples));
    if (o.part == "train") part = std::move(split.train);
    else if (o.part == "val") part = std::move(split.val);
    else if (o.part == "test") part = std::move(split.test);
    else throw UsageError("--part must be train, val, test or all");
  }
  const LikelihoodReport report = evaluate_ll(ck, part);
  if (report.dims_differ) log.info("dims_differ", kv("trained", to_string(Dims{ck.train_dims.h, ck.train_dims.w, ck.train_dims.d})));
  out << kv("volumes", part.size()) << '\n'
      << kv("ll", report.log_likelihood) << '\n'
      << kv("nll", -report.log_likelihood) << '\n'
      << kv("dims_differ", report.dims_differ ? 1 : 0) << '\n';
  return kExitOk;
}

int cmd_reconstruct(Options& o, std::ostream& out, Logger& log) {
  if (o.ckpt.empty() || o.volume.empty() || o.out.empty()) throw UsageError("reconstruct needs --ckpt, --volume and --out");
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const Tensor x = load_input(o, log, out);
  const Tensor roi = load_roi(o);
  const ForwardOutput f = model_forward(x, ck.params, DropoutMode::off());
  write_volume(o.out, f.emission.mean);
  out << kv("nll", nll(f.emission, x, roi.empty() ? nullptr : &roi)) << '\n';
  return kExitOk;
}

int cmd_uncertainty(Options& o, std::ostream& out, Logger& log) {
  if (o.ckpt.empty() || o.volume.empty() || o.out.empty()) throw UsageError("uncertainty needs --ckpt, --volume and --out");
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const Tensor x = load_input(o, log, out);
  Rng rng(o.seed);
  const UncertaintyMaps maps = moments(mc_passes(ck.params, x, o.passes, rng).passes);
  write_volume(o.out + ".mu.vvol", maps.mu);
  write_volume(o.out + ".sigma.vvol", maps.sigma);
  double mean_sigma = 0.0, max_sigma = 0.0;
  for (double s : maps.sigma.data()) {
    mean_sigma += s;
    max_sigma = std::max(max_sigma, s);
  }
  mean_sigma /= static_cast<double>(maps.sigma.size());
  out << kv("passes", maps.passes) << '\n' << kv("sigma_mean", mean_sigma) << '\n' << kv("sigma_max", max_sigma) << '\n';
  return kExitOk;
}

int cmd_segment(Options& o, std::ostream& out, Logger&) {
  if (o.volume.empty() || o.out.empty()) throw UsageError("segment needs --volume and --out");
  const Tensor v = read_volume(o.volume);
  const Tensor roi = load_roi(o);
  const Tensor mask = tau_segment(v, roi.empty() ? nullptr : &roi);
  write_volume(o.out, mask);
  std::size_t voxels = 0;
  for (double m : mask.data()) voxels += m != 0.0;
  out << kv("voxels", voxels) << '\n';
  if (!o.truth.empty()) out << kv("dice", dice(mask, read_volume(o.truth))) << '\n';
  return kExitOk;
}

int cmd_sample(Options& o, std::ostream& out, Logger&) {
  if (o.ckpt.empty() || o.out.empty()) throw UsageError("sample needs --ckpt and --out");
  const Checkpoint ck = load_checkpoint(o.ckpt);
  Rng rng(o.seed);
  const Tensor x = sample(ck.params, to_extent(o.sample_dims), rng, o.temperature);
  write_volume(o.out, x);
  ForwardOutput f = model_forward(x, ck.params, DropoutMode::off());
  out << kv("nll", nll(f.emission, x)) << '\n';
  return kExitOk;
}

int cmd_verify(Options& o, std::ostream& out, Logger& log) {
  Rng rng(o.seed);
  ModelParams params;
  if (!o.ckpt.empty()) {
    params = load_checkpoint(o.ckpt).params;
  } else {
    o.model.validate();
    params = ModelParams::init(o.model, rng);
  }
  if (o.mutate_center) {
    // Opens the center tap of the first horizontal mask and gives it weight.
    ConvParams& h = params.layers.front().horizontal;
    const std::size_t k = h.mask.dim(0);
    const std::size_t center = (k * k * k) / 2;
    h.mask[center] = 1.0;
    for (std::size_t oi = 0; oi < h.kernel.dim(0) * h.kernel.dim(1); ++oi) h.kernel[oi * k * k * k + center] = rng.uniform(-1.0, 1.0);
  }
  const Extent3 dims = to_extent(o.verify_dims);
  const std::size_t trials = o.trials == 0 ? dims.voxels() : o.trials;
  const CausalityReport report = verify_causality(params, dims, trials, rng);
  log.info("verify", kv("trials", report.trials), kv("violations", report.violations.size()));
  out << report.render();
  return report.passed() ? kExitOk : kExitVerifyFailed;
}

int cmd_features(Options& o, std::ostream& out, Logger& log) {
  if (o.ckpt.empty() || o.volume.empty() || o.out.empty()) throw UsageError("features needs --ckpt, --volume and --out");
  const FeatureVariant variant = parse_feature_variant(o.variant);
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const Tensor x = load_input(o, log, out);
  Rng rng(o.seed);
  const Tensor features = export_features(ck.params, x, variant, o.passes, rng);
  write_volume(o.out, features);
  out << kv("variant", to_string(variant)) << '\n' << kv("channels", features.dim(0)) << '\n';
  return kExitOk;
}

void add_model_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--layers", o.model.layers, "number of three-stack layers")->capture_default_str();
  cmd->add_option("--hidden", o.model.hidden_channels, "pre-activation channels (even)")->capture_default_str();
  cmd->add_option("--kernel", o.model.kernel, "masked kernel extent (odd)")->capture_default_str();
  cmd->add_option("--dropout", o.model.dropout_rate, "spatial dropout rate")->capture_default_str();
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--seed", o.seed, "master random seed")->capture_default_str();
  cmd->add_option("--threads", o.threads, "worker threads for numeric kernels")->capture_default_str()->check(CLI::PositiveNumber);
}

void add_norm_flag(CLI::App* cmd, Options& o) {
  cmd->add_flag("!--no-normalize", o.normalize, "use raw intensities instead of roi min-max normalization");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  Logger log(err);
  CLI::App app{"Autoregressive 3D volume model with Monte-Carlo dropout uncertainty", "vpcnn"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic phantom dataset");
  add_common(synth, o);
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--n", o.synth.n_volumes, "number of volumes")->capture_default_str();
  synth->add_option("--dims", o.synth_dims, "H,W,D")->delimiter(',')->expected(3);
  synth->add_option("--lesion-prob", o.synth.lesion_probability, "probability of a lesion per volume")->capture_default_str();
  synth->add_option("--lesion-radius-min", o.synth.lesion_radius_min)->capture_default_str();
  synth->add_option("--lesion-radius-max", o.synth.lesion_radius_max)->capture_default_str();
  synth->add_option("--lesion-delta", o.synth.lesion_delta)->capture_default_str();
  synth->add_option("--noise", o.synth.noise_sigma, "white noise sigma")->capture_default_str();
  synth->add_option("--blobs-min", o.synth.blobs_min)->capture_default_str();
  synth->add_option("--blobs-max", o.synth.blobs_max)->capture_default_str();

  auto* train_cmd = app.add_subcommand("train", "train on a dataset manifest");
  add_common(train_cmd, o);
  add_model_flags(train_cmd, o);
  add_norm_flag(train_cmd, o);
  std::string train_out = "checkpoint.vxck";
  train_cmd->add_option("--data", o.data, "dataset manifest.csv")->required();
  train_cmd->add_option("--out", train_out, "checkpoint path")->capture_default_str();
  train_cmd->add_option("--history", o.history, "per-epoch CSV");
  train_cmd->add_option("--epochs", o.train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", o.train.lr)->capture_default_str();
  train_cmd->add_option("--batch-size", o.train.batch_size)->capture_default_str();
  train_cmd->add_option("--patience", o.train.patience, "epochs without a new validation minimum before stopping")->capture_default_str();
  train_cmd->add_flag("--lesion-free", o.lesion_free, "train only on volumes without a lesion");

  auto* eval = app.add_subcommand("eval", "mean log-likelihood of a checkpoint on a dataset split");
  add_common(eval, o);
  add_norm_flag(eval, o);
  eval->add_option("--ckpt", o.ckpt)->required();
  eval->add_option("--data", o.data)->required();
  eval->add_option("--part", o.part, "train, val, test or all")->capture_default_str();
  eval->add_flag("--lesion-free", o.lesion_free, "drop volumes with a lesion before splitting");

  auto* recon = app.add_subcommand("reconstruct", "write the predicted per-voxel means");
  add_common(recon, o);
  add_norm_flag(recon, o);
  recon->add_option("--ckpt", o.ckpt)->required();
  recon->add_option("--volume", o.volume)->required();
  recon->add_option("--roi", o.roi);
  recon->add_option("--out", o.out)->required();

  auto* unc = app.add_subcommand("uncertainty", "Monte-Carlo dropout mu/sigma maps");
  add_common(unc, o);
  add_norm_flag(unc, o);
  unc->add_option("--ckpt", o.ckpt)->required();
  unc->add_option("--volume", o.volume)->required();
  unc->add_option("--roi", o.roi);
  unc->add_option("--passes", o.passes, "stochastic forward passes")->capture_default_str();
  unc->add_option("--out", o.out, "output prefix; writes PREFIX.mu.vvol and PREFIX.sigma.vvol")->required();

  auto* seg = app.add_subcommand("segment", "threshold a volume at its mean intensity");
  add_common(seg, o);
  seg->add_option("--volume", o.volume)->required();
  seg->add_option("--roi", o.roi);
  seg->add_option("--truth", o.truth, "reference mask; prints dice");
  seg->add_option("--out", o.out)->required();

  auto* samp = app.add_subcommand("sample", "ancestral sampling");
  add_common(samp, o);
  samp->add_option("--ckpt", o.ckpt)->required();
  samp->add_option("--dims", o.sample_dims, "H,W,D")->delimiter(',')->expected(3);
  samp->add_option("--temperature", o.temperature)->capture_default_str()->check(CLI::PositiveNumber);
  samp->add_option("--out", o.out)->required();

  auto* verify = app.add_subcommand("verify", "perturbation check of the causal structure");
  add_common(verify, o);
  add_model_flags(verify, o);
  verify->add_option("--dims", o.verify_dims, "H,W,D")->delimiter(',')->expected(3);
  verify->add_option("--ckpt", o.ckpt, "check a trained checkpoint instead of random weights");
  verify->add_option("--trials", o.trials, "perturbed voxels (0 = every voxel)")->capture_default_str();
  verify->add_flag("--mutate-center", o.mutate_center, "unmask the first horizontal center tap");

  auto* feat = app.add_subcommand("features", "export chi/xi/psi feature volumes");
  add_common(feat, o);
  add_norm_flag(feat, o);
  feat->add_option("--ckpt", o.ckpt)->required();
  feat->add_option("--volume", o.volume)->required();
  feat->add_option("--roi", o.roi);
  feat->add_option("--variant", o.variant, "chi, xi or psi")->capture_default_str();
  feat->add_option("--passes", o.passes)->capture_default_str();
  feat->add_option("--out", o.out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (train_cmd->parsed()) o.out = train_out;

  set_num_threads(o.threads);
  try {
    if (synth->parsed()) return cmd_synth(o, out, log);
    if (train_cmd->parsed()) return cmd_train(o, out, log);
    if (eval->parsed()) return cmd_eval(o, out, log);
    if (recon->parsed()) return cmd_reconstruct(o, out, log);
    if (unc->parsed()) return cmd_uncertainty(o, out, log);
    if (seg->parsed()) return cmd_segment(o, out, log);
    if (samp->parsed()) return cmd_sample(o, out, log);
    if (verify->parsed()) return cmd_verify(o, out, log);
    if (feat->parsed()) return cmd_features(o, out, log);
  } catch (const UsageError& e) {
    log.error("usage", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    log.error("config", e.what());
    return kExitUsage;
  } catch (const NumericError& e) {
    log.error("numeric", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    log.error("data", e.what());
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    log.error("data", e.what());
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace vpcnn::cli
