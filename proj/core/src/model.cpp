#include "vpcnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "vpcnn/error.hpp"
#include "vpcnn/ops.hpp"

namespace vpcnn {

void ModelConfig::validate() const {
  if (layers < 2) throw ConfigError("model needs at least 2 layers, got " + std::to_string(layers));
  if (hidden_channels < 2 || hidden_channels % 2 != 0)
    throw ConfigError("hidden_channels must be even and >= 2, got " + std::to_string(hidden_channels));
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel extent must be odd, got " + std::to_string(kernel));
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(dropout_rate));
}

namespace {

Tensor ones_mask(std::size_t k) { return Tensor(Dims{k, k, k}, 1.0); }

ConvParams make_conv(std::string name, std::size_t c_out, std::size_t c_in, Tensor mask,
                     bool with_bias, Rng& rng) {
  const std::size_t k = mask.dim(0);
  const std::size_t k3 = k * k * k;
  std::size_t live = 0;
  for (double m : mask.data()) live += m != 0.0;
  const double scale = 1.0 / std::sqrt(static_cast<double>(c_in * live));

  ConvParams p;
  p.name = std::move(name);
  p.kernel = Tensor(Dims{c_out, c_in, k, k, k});
  for (std::size_t oi = 0; oi < c_out * c_in; ++oi)
    for (std::size_t t = 0; t < k3; ++t)
      if (mask[t] != 0.0) p.kernel[oi * k3 + t] = rng.uniform(-scale, scale);
  if (with_bias) p.bias = Tensor(Dims{c_out});
  p.mask = std::move(mask);
  return p;
}

void append(std::vector<std::pair<std::string, Tensor*>>& out, ConvParams& p) {
  out.emplace_back(p.name + ".kernel", &p.kernel);
  if (!p.bias.empty()) out.emplace_back(p.name + ".bias", &p.bias);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  const std::size_t hidden = config.hidden_channels;
  const std::size_t gate = config.gate_channels();
  const LayerWiring wiring = LayerWiring::standard(config.layers, config.kernel);

  ModelParams params;
  params.config = config;
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l + 1) + ".";
    const std::size_t c_in = l == 0 ? 1 : gate;
    auto masked = [&](StackKind kind) {
      const StackLayer& s = wiring.stack(l, kind);
      return make_conv(prefix + to_string(kind), hidden, c_in, build_mask(kind, s.variant, s.kernel), true, rng);
    };
    LayerParams layer;
    layer.vertical = masked(StackKind::Vertical);
    layer.depth = masked(StackKind::Depth);
    layer.horizontal = masked(StackKind::Horizontal);
    layer.vertical_to_depth = make_conv(prefix + "vertical_to_depth", hidden, hidden, ones_mask(1), false, rng);
    layer.vertical_to_horizontal = make_conv(prefix + "vertical_to_horizontal", hidden, hidden, ones_mask(1), false, rng);
    layer.depth_to_horizontal = make_conv(prefix + "depth_to_horizontal", hidden, hidden, ones_mask(1), false, rng);
    if (l > 0) layer.residual = make_conv(prefix + "residual", gate, gate, ones_mask(1), false, rng);
    layer.skip = make_conv(prefix + "skip", gate, gate, ones_mask(1), false, rng);
    params.layers.push_back(std::move(layer));
  }
  params.skip_head = make_conv("head.skip", hidden, gate, ones_mask(1), true, rng);
  params.emit_mean = make_conv("head.mean", 1, gate, ones_mask(1), true, rng);
  params.emit_log_std = make_conv("head.log_std", 1, gate, ones_mask(1), true, rng);
  return params;
}

std::vector<ConvParams*> ModelParams::convs() {
  std::vector<ConvParams*> out;
  for (auto& layer : layers) {
    for (ConvParams* p : {&layer.vertical, &layer.depth, &layer.horizontal, &layer.vertical_to_depth,
                          &layer.vertical_to_horizontal, &layer.depth_to_horizontal})
      out.push_back(p);
    if (layer.residual) out.push_back(&*layer.residual);
    out.push_back(&layer.skip);
  }
  out.push_back(&skip_head);
  out.push_back(&emit_mean);
  out.push_back(&emit_log_std);
  return out;
}

std::vector<const ConvParams*> ModelParams::convs() const {
  auto mutable_convs = const_cast<ModelParams*>(this)->convs();
  return {mutable_convs.begin(), mutable_convs.end()};
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (ConvParams* p : convs()) append(out, *p);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const ConvParams* p : convs()) n += p->kernel.size() + p->bias.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : parameters()) {
    t->enable_grad();
    t->zero_grad();
  }
}

Tensor gated_unit(const Tensor& pre_activation) {
  auto [first, second] = channel_split(pre_activation);
  for (std::size_t i = 0; i < first.size(); ++i)
    first[i] = std::tanh(first[i]) * (1.0 / (1.0 + std::exp(-second[i])));
  return first;
}

Var gated_unit(Var pre_activation) {
  auto [first, second] = channel_split(pre_activation);
  return mul(tanh(first), sigmoid(second));
}

namespace {

Var apply_conv(Tape& tape, Var input, ConvParams& p) {
  Var kernel = tape.parameter(p.kernel);
  Var bias = p.bias.empty() ? Var{} : tape.parameter(p.bias);
  return conv3d_masked(input, kernel, p.mask, bias);
}

Var maybe_dropout(Var v, double rate, DropoutMode dropout) {
  if (!dropout.enabled) return v;
  if (!dropout.rng) throw UsageError("dropout enabled without a random generator");
  return spatial_dropout(v, rate, *dropout.rng, true);
}

}  // namespace

LayerOutput layer_forward(Tape& tape, const StackState& in, LayerParams& layer,
                          std::size_t layer_index, double dropout_rate, DropoutMode dropout) {
  const Dims& vd = in.vertical.dims();
  if (in.depth.dims().size() != 4 || in.horizontal.dims().size() != 4 ||
      !std::equal(vd.begin() + 1, vd.end(), in.depth.dims().begin() + 1) ||
      !std::equal(vd.begin() + 1, vd.end(), in.horizontal.dims().begin() + 1))
    throw ShapeError("layer_forward: stack inputs have different spatial dims");

  Var v_pre = maybe_dropout(apply_conv(tape, in.vertical, layer.vertical), dropout_rate, dropout);
  Var d_pre = add(maybe_dropout(apply_conv(tape, in.depth, layer.depth), dropout_rate, dropout),
                  apply_conv(tape, v_pre, layer.vertical_to_depth));
  Var h_pre = add(add(maybe_dropout(apply_conv(tape, in.horizontal, layer.horizontal), dropout_rate, dropout),
                      apply_conv(tape, v_pre, layer.vertical_to_horizontal)),
                  apply_conv(tape, d_pre, layer.depth_to_horizontal));

  LayerOutput out;
  out.stacks.vertical = gated_unit(v_pre);
  out.stacks.depth = gated_unit(d_pre);
  out.horizontal_gate = gated_unit(h_pre);
  out.stacks.horizontal = out.horizontal_gate;
  if (layer_index > 0 && layer.residual)
    out.stacks.horizontal = add(out.horizontal_gate, apply_conv(tape, in.horizontal, *layer.residual));
  out.skip = apply_conv(tape, out.horizontal_gate, layer.skip);
  return out;
}

ForwardVars model_forward(Tape& tape, const Tensor& x, ModelParams& params, DropoutMode dropout) {
  if (x.rank() != 4 || x.dim(0) != 1) throw ShapeError("model input must be [1,H,W,D], got " + to_string(x.dims()));
  if (params.layers.empty()) throw UsageError("model has no layers");
  const double rate = params.config.dropout_rate;

  Var input = tape.constant_ref(x);
  StackState state{input, input, input};
  Var skips;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    LayerOutput out = layer_forward(tape, state, params.layers[l], l, rate, dropout);
    state = out.stacks;
    skips = l == 0 ? out.skip : add(skips, out.skip);
  }
  Var head = maybe_dropout(apply_conv(tape, skips, params.skip_head), rate, dropout);
  ForwardVars out;
  out.penultimate = gated_unit(head);
  out.mean = apply_conv(tape, out.penultimate, params.emit_mean);
  out.log_std = clamp(apply_conv(tape, out.penultimate, params.emit_log_std), kLogStdMin, kLogStdMax);
  return out;
}

ForwardOutput model_forward(const Tensor& x, const ModelParams& params, DropoutMode dropout) {
  // A non-recording tape only reads parameters.
  Tape tape(false);
  ForwardVars vars = model_forward(tape, x, const_cast<ModelParams&>(params), dropout);
  return {{vars.mean.value(), vars.log_std.value()}, vars.penultimate.value()};
}

double nll(const EmissionField& emission, const Tensor& x, const Tensor* mask) {
  Tape tape(false);
  return gaussian_nll(tape.constant_ref(emission.mean), tape.constant_ref(emission.log_std), x, mask)
      .value()
      .item();
}

namespace {

Tensor decode(const ModelParams& params, const Extent3& dims, Rng* rng, double temperature) {
  if (dims.voxels() == 0) throw UsageError("sample: extents must be positive");
  Tensor x(Dims{1, dims.h, dims.w, dims.d});
  for (std::size_t i = 0; i < dims.voxels(); ++i) {
    ForwardOutput out = model_forward(x, params, DropoutMode::off());
    double value = out.emission.mean[i];
    if (rng) value += temperature * std::exp(out.emission.log_std[i]) * rng->normal();
    x[i] = std::clamp(value, 0.0, 1.0);
  }
  return x;
}

}  // namespace

Tensor sample(const ModelParams& params, const Extent3& dims, Rng& rng, double temperature) {
  if (!(temperature > 0.0)) throw UsageError("sample: temperature must be positive");
  return decode(params, dims, &rng, temperature);
}

Tensor greedy_decode(const ModelParams& params, const Extent3& dims) {
  return decode(params, dims, nullptr, 0.0);
}

}  // namespace vpcnn
