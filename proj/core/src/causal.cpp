#include "vpcnn/causal.hpp"

#include <algorithm>

#include "vpcnn/error.hpp"

namespace vpcnn {

const char* to_string(StackKind kind) {
  switch (kind) {
    case StackKind::Vertical: return "vertical";
    case StackKind::Depth: return "depth";
    case StackKind::Horizontal: return "horizontal";
  }
  return "?";
}

const char* to_string(MaskVariant variant) { return variant == MaskVariant::A ? "A" : "B"; }

std::string to_string(const VoxelIndex& v) {
  return "(" + std::to_string(v.r) + "," + std::to_string(v.c) + "," + std::to_string(v.d) + ")";
}

namespace {

void require_odd(std::size_t k) {
  if (k == 0 || k % 2 == 0) throw ConfigError("kernel extent must be odd, got " + std::to_string(k));
}

bool allowed(StackKind kind, MaskVariant variant, const Offset& o) {
  const bool strict = variant == MaskVariant::A;
  switch (kind) {
    case StackKind::Vertical: return strict ? o.dr < 0 : o.dr <= 0;
    case StackKind::Depth: return o.dr == 0 && (strict ? o.dc < 0 : o.dc <= 0);
    case StackKind::Horizontal: return o.dr == 0 && o.dc == 0 && (strict ? o.dd < 0 : o.dd <= 0);
  }
  return false;
}

using VoxelSet = std::vector<char>;

// Marks every q = p + delta (in bounds) for marked p.
void spread(const VoxelSet& need, const std::vector<Offset>& offsets, const Extent3& dims,
            VoxelSet& into) {
  for (std::size_t i = 0; i < need.size(); ++i) {
    if (!need[i]) continue;
    const VoxelIndex p = dims.unflat(i);
    for (const Offset& o : offsets) {
      const auto r = static_cast<std::ptrdiff_t>(p.r) + o.dr;
      const auto c = static_cast<std::ptrdiff_t>(p.c) + o.dc;
      const auto d = static_cast<std::ptrdiff_t>(p.d) + o.dd;
      if (r < 0 || c < 0 || d < 0) continue;
      const VoxelIndex q{static_cast<std::size_t>(r), static_cast<std::size_t>(c), static_cast<std::size_t>(d)};
      if (dims.contains(q)) into[dims.flat(q)] = 1;
    }
  }
}

void merge(VoxelSet& into, const VoxelSet& from) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] = into[i] || from[i];
}

std::vector<VoxelIndex> to_list(const VoxelSet& set, const Extent3& dims) {
  std::vector<VoxelIndex> out;
  for (std::size_t i = 0; i < set.size(); ++i)
    if (set[i]) out.push_back(dims.unflat(i));
  return out;
}

void check_target(const VoxelIndex& v, const Extent3& dims) {
  if (dims.voxels() == 0) throw UsageError("volume extents must be positive");
  if (!dims.contains(v)) throw UsageError("voxel " + to_string(v) + " out of bounds");
}

}  // namespace

std::vector<Offset> allowed_offsets(StackKind kind, MaskVariant variant, std::size_t k) {
  require_odd(k);
  const int half = static_cast<int>(k / 2);
  std::vector<Offset> out;
  for (int dr = -half; dr <= half; ++dr)
    for (int dc = -half; dc <= half; ++dc)
      for (int dd = -half; dd <= half; ++dd)
        if (allowed(kind, variant, {dr, dc, dd})) out.push_back({dr, dc, dd});
  return out;
}

Tensor build_mask(StackKind kind, MaskVariant variant, std::size_t k) {
  Tensor mask(Dims{k, k, k});
  const int half = static_cast<int>(k / 2);
  for (const Offset& o : allowed_offsets(kind, variant, k))
    mask.at({static_cast<std::size_t>(o.dr + half), static_cast<std::size_t>(o.dc + half),
             static_cast<std::size_t>(o.dd + half)}) = 1.0;
  return mask;
}

std::vector<VoxelIndex> causal_past(const VoxelIndex& v, const Extent3& dims) {
  check_target(v, dims);
  std::vector<VoxelIndex> out;
  out.reserve(dims.flat(v));
  for (std::size_t i = 0; i < dims.flat(v); ++i) out.push_back(dims.unflat(i));
  return out;
}

LayerWiring LayerWiring::standard(std::size_t layers, std::size_t kernel) {
  require_odd(kernel);
  LayerWiring wiring;
  for (std::size_t l = 0; l < layers; ++l) {
    const MaskVariant v = l == 0 ? MaskVariant::A : MaskVariant::B;
    wiring.layers.push_back({StackLayer{StackKind::Vertical, v, kernel}, StackLayer{StackKind::Depth, v, kernel},
                             StackLayer{StackKind::Horizontal, v, kernel}});
  }
  return wiring;
}

LayerWiring LayerWiring::single(StackKind kind, std::size_t layers, std::size_t kernel) {
  require_odd(kernel);
  LayerWiring wiring;
  for (std::size_t l = 0; l < layers; ++l)
    wiring.layers.push_back({StackLayer{kind, l == 0 ? MaskVariant::A : MaskVariant::B, kernel}});
  return wiring;
}

bool LayerWiring::has(StackKind kind) const {
  if (layers.empty()) return false;
  for (const auto& s : layers.front())
    if (s.kind == kind) return true;
  return false;
}

const StackLayer& LayerWiring::stack(std::size_t layer, StackKind kind) const {
  for (const auto& s : layers.at(layer))
    if (s.kind == kind) return s;
  throw UsageError(std::string("wiring has no ") + to_string(kind) + " stack");
}

StackKind LayerWiring::output_stack() const {
  if (has(StackKind::Horizontal)) return StackKind::Horizontal;
  if (has(StackKind::Depth)) return StackKind::Depth;
  if (has(StackKind::Vertical)) return StackKind::Vertical;
  throw ConfigError("wiring has no stacks");
}

void LayerWiring::validate() const {
  if (layers.empty()) throw ConfigError("wiring has no layers");
  for (const auto& layer : layers) {
    if (layer.empty() || layer.size() != layers.front().size()) throw ConfigError("every layer needs the same stacks");
    for (std::size_t s = 0; s < layer.size(); ++s) {
      if (layer[s].kind != layers.front()[s].kind) throw ConfigError("every layer needs the same stacks");
      if (s > 0 && static_cast<int>(layer[s].kind) <= static_cast<int>(layer[s - 1].kind))
        throw ConfigError("wiring stacks out of order");
      require_odd(layer[s].kernel);
    }
  }
}

std::vector<VoxelIndex> receptive_field(const LayerWiring& wiring, const VoxelIndex& target,
                                        const Extent3& dims) {
  wiring.validate();
  check_target(target, dims);
  const std::size_t n = dims.voxels();
  const std::size_t layers = wiring.layers.size();
  const bool has_v = wiring.has(StackKind::Vertical);
  const bool has_d = wiring.has(StackKind::Depth);
  const bool has_h = wiring.has(StackKind::Horizontal);

  auto offsets = [&](std::size_t l, StackKind kind) {
    const StackLayer& s = wiring.stack(l, kind);
    return allowed_offsets(kind, s.variant, s.kernel);
  };

  // Output positions of each node that the target depends on. For the
  // horizontal stack, `h_out` is the value passed on (gate + residual) and
  // `h_gate` the gate alone.
  std::vector<VoxelSet> h_out(layers, VoxelSet(n, 0));
  std::vector<VoxelSet> h_gate(layers, VoxelSet(n, 0));
  std::vector<VoxelSet> depth(layers, VoxelSet(n, 0));
  std::vector<VoxelSet> vertical(layers, VoxelSet(n, 0));
  VoxelSet input(n, 0);

  const StackKind head = wiring.output_stack();
  auto& skip_source = head == StackKind::Horizontal ? h_gate : head == StackKind::Depth ? depth : vertical;
  for (std::size_t l = 0; l < layers; ++l) skip_source[l][dims.flat(target)] = 1;

  for (std::size_t l = layers; l-- > 0;) {
    if (has_h) {
      merge(h_gate[l], h_out[l]);
      if (l > 0) merge(h_out[l - 1], h_out[l]);  // residual
      if (has_d) merge(depth[l], h_gate[l]);
      if (has_v) merge(vertical[l], h_gate[l]);
      spread(h_gate[l], offsets(l, StackKind::Horizontal), dims, l == 0 ? input : h_out[l - 1]);
    }
    if (has_d) {
      if (has_v) merge(vertical[l], depth[l]);
      spread(depth[l], offsets(l, StackKind::Depth), dims, l == 0 ? input : depth[l - 1]);
    }
    if (has_v) spread(vertical[l], offsets(l, StackKind::Vertical), dims, l == 0 ? input : vertical[l - 1]);
  }
  return to_list(input, dims);
}

std::vector<VoxelIndex> naive_receptive_field(std::size_t layers, std::size_t kernel,
                                              const VoxelIndex& target, const Extent3& dims) {
  require_odd(kernel);
  check_target(target, dims);
  if (layers == 0) throw ConfigError("naive design needs at least one layer");
  const int half = static_cast<int>(kernel / 2);
  std::vector<Offset> strict, inclusive;
  for (int dr = -half; dr <= half; ++dr)
    for (int dc = -half; dc <= half; ++dc)
      for (int dd = -half; dd <= half; ++dd) {
        const Offset o{dr, dc, dd};
        if (o < Offset{}) strict.push_back(o);
        if (o <= Offset{}) inclusive.push_back(o);
      }
  const std::size_t n = dims.voxels();
  VoxelSet need(n, 0);
  need[dims.flat(target)] = 1;
  for (std::size_t l = layers; l-- > 0;) {
    VoxelSet src(n, 0);
    spread(need, l == 0 ? strict : inclusive, dims, src);
    need = std::move(src);
  }
  return to_list(need, dims);
}

}  // namespace vpcnn
