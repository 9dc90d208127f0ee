#include "vpcnn/volume_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "binary_io.hpp"
#include "vpcnn/error.hpp"
#include "vpcnn/rng.hpp"

namespace vpcnn {

namespace fs = std::filesystem;

VolumeHeader VolumeHeader::for_tensor(const Tensor& volume) {
  if (volume.rank() != 4) throw ShapeError("volume must be [C,H,W,D], got " + to_string(volume.dims()));
  constexpr auto u32max = std::numeric_limits<std::uint32_t>::max();
  if (volume.dim(0) > std::numeric_limits<std::uint16_t>::max() || volume.dim(1) > u32max ||
      volume.dim(2) > u32max || volume.dim(3) > u32max)
    throw ShapeError("volume extents exceed the file format limits");
  VolumeHeader h;
  h.channels = static_cast<std::uint16_t>(volume.dim(0));
  h.h = static_cast<std::uint32_t>(volume.dim(1));
  h.w = static_cast<std::uint32_t>(volume.dim(2));
  h.d = static_cast<std::uint32_t>(volume.dim(3));
  h.payload_bytes = static_cast<std::uint64_t>(volume.size()) * sizeof(float);
  return h;
}

std::vector<unsigned char> encode_volume_header(const VolumeHeader& header) {
  detail::ByteWriter w;
  w.put_bytes("VVOL", 4);
  w.put(header.version);
  w.put(header.channels);
  w.put(header.h);
  w.put(header.w);
  w.put(header.d);
  w.put(header.dtype);
  w.put(std::uint16_t{0});
  w.put(header.payload_bytes);
  return std::move(w.bytes());
}

VolumeHeader decode_volume_header(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes, "volume header");
  r.require(4);
  if (std::memcmp(bytes.data(), "VVOL", 4) != 0) throw BadMagicError("not a volume file (bad magic)");
  r.get<std::uint32_t>();
  VolumeHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kVolumeVersion)
    throw VersionError("unsupported volume version " + std::to_string(h.version));
  h.channels = r.get<std::uint16_t>();
  h.h = r.get<std::uint32_t>();
  h.w = r.get<std::uint32_t>();
  h.d = r.get<std::uint32_t>();
  h.dtype = r.get<std::uint16_t>();
  r.get<std::uint16_t>();
  h.payload_bytes = r.get<std::uint64_t>();
  if (h.dtype != kDtypeFloat32) throw DataError("unsupported volume dtype tag " + std::to_string(h.dtype));
  if (h.channels == 0 || h.h == 0 || h.w == 0 || h.d == 0) throw DataError("volume header has a zero extent");
  const std::uint64_t expected = std::uint64_t{h.channels} * h.h * h.w * h.d * sizeof(float);
  if (h.payload_bytes != expected)
    throw DataError("volume header declares " + std::to_string(h.payload_bytes) + " payload bytes, dims need " +
                    std::to_string(expected));
  return h;
}

void write_volume(const std::string& path, const Tensor& volume) {
  const VolumeHeader header = VolumeHeader::for_tensor(volume);
  detail::ByteWriter w;
  w.bytes() = encode_volume_header(header);
  w.bytes().reserve(kVolumeHeaderBytes + header.payload_bytes);
  for (double v : volume.data()) w.put(static_cast<float>(v));
  detail::write_file(path, w.bytes());
}

Tensor read_volume(const std::string& path) {
  const auto bytes = detail::read_file(path);
  const VolumeHeader h = decode_volume_header(bytes);
  if (bytes.size() - kVolumeHeaderBytes < h.payload_bytes)
    throw TruncatedError(path + ": payload truncated (" + std::to_string(bytes.size() - kVolumeHeaderBytes) +
                         " of " + std::to_string(h.payload_bytes) + " bytes)");
  if (bytes.size() - kVolumeHeaderBytes > h.payload_bytes) throw DataError(path + ": trailing bytes after payload");
  Tensor out(Dims{h.channels, h.h, h.w, h.d});
  const unsigned char* p = bytes.data() + kVolumeHeaderBytes;
  for (std::size_t i = 0; i < out.size(); ++i) {
    float f;
    std::memcpy(&f, p + i * sizeof(float), sizeof(float));
    out[i] = f;
  }
  return out;
}

Extent3 spatial_extent(const Tensor& volume) {
  if (volume.rank() != 4) throw ShapeError("volume must be [C,H,W,D], got " + to_string(volume.dims()));
  return {volume.dim(1), volume.dim(2), volume.dim(3)};
}

// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  if (n_volumes == 0) throw ConfigError("synth: n_volumes must be positive");
  if (dims.voxels() == 0) throw ConfigError("synth: extents must be positive");
  if (blobs_min > blobs_max) throw ConfigError("synth: empty blob count range");
  if (!(blob_sigma_min > 0.0 && blob_sigma_min <= blob_sigma_max)) throw ConfigError("synth: bad blob sigma range");
  if (blob_amplitude_min > blob_amplitude_max) throw ConfigError("synth: bad blob amplitude range");
  if (!(lesion_probability >= 0.0 && lesion_probability <= 1.0))
    throw ConfigError("synth: lesion probability must lie in [0, 1]");
  if (!(lesion_radius_min > 0.0 && lesion_radius_min <= lesion_radius_max))
    throw ConfigError("synth: bad lesion radius range");
  if (!(lesion_delta > 0.0 && lesion_delta <= 1.0)) throw ConfigError("synth: lesion delta must lie in (0, 1]");
  if (noise_sigma < 0.0) throw ConfigError("synth: noise sigma must be non-negative");
}

namespace {

struct Ellipsoid {
  double cr, cc, cd, ar, ac, ad;
  // <= 1 inside
  double level(double r, double c, double d) const {
    const double x = (r - cr) / ar, y = (c - cc) / ac, z = (d - cd) / ad;
    return x * x + y * y + z * z;
  }
};

Ellipsoid roi_shape(const Extent3& e) {
  auto half = [](std::size_t n) { return (static_cast<double>(n) - 1.0) / 2.0; };
  auto axis = [](std::size_t n) { return std::max(0.5, 0.48 * static_cast<double>(n)); };
  return {half(e.h), half(e.w), half(e.d), axis(e.h), axis(e.w), axis(e.d)};
}

}  // namespace

std::vector<SynthItem> synth_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const Extent3 e = cfg.dims;
  const Ellipsoid shape = roi_shape(e);
  const Dims dims{1, e.h, e.w, e.d};

  Tensor roi(dims);
  for (std::size_t i = 0; i < e.voxels(); ++i) {
    const VoxelIndex v = e.unflat(i);
    roi[i] = shape.level(double(v.r), double(v.c), double(v.d)) <= 1.0 ? 1.0 : 0.0;
  }

  std::vector<SynthItem> items;
  items.reserve(cfg.n_volumes);
  for (std::size_t n = 0; n < cfg.n_volumes; ++n) {
    struct Blob {
      double r, c, d, sigma, amplitude;
    };
    const std::size_t count = cfg.blobs_min + rng.index(cfg.blobs_max - cfg.blobs_min + 1);
    std::vector<Blob> blobs;
    for (std::size_t b = 0; b < count; ++b) {
      Blob blob;
      blob.r = rng.uniform(0.0, double(e.h - 1));
      blob.c = rng.uniform(0.0, double(e.w - 1));
      blob.d = rng.uniform(0.0, double(e.d - 1));
      blob.sigma = rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max);
      blob.amplitude = rng.uniform(cfg.blob_amplitude_min, cfg.blob_amplitude_max);
      blobs.push_back(blob);
    }

    SynthItem item;
    item.roi = roi;
    item.clean = Tensor(dims);
    for (std::size_t i = 0; i < e.voxels(); ++i) {
      const double noise = cfg.noise_sigma > 0.0 ? rng.normal(0.0, cfg.noise_sigma) : 0.0;
      if (roi[i] == 0.0) continue;
      const VoxelIndex v = e.unflat(i);
      double value = cfg.background + noise;
      for (const Blob& b : blobs) {
        const double dr = double(v.r) - b.r, dc = double(v.c) - b.c, dd = double(v.d) - b.d;
        value += b.amplitude * std::exp(-(dr * dr + dc * dc + dd * dd) / (2.0 * b.sigma * b.sigma));
      }
      item.clean[i] = std::clamp(value, 0.0, 1.0);
    }
    item.volume = item.clean;

    if (rng.bernoulli(cfg.lesion_probability)) {
      const double radius = rng.uniform(cfg.lesion_radius_min, cfg.lesion_radius_max);
      // Center drawn so the sphere fits inside the roi where possible.
      Ellipsoid inner = shape;
      inner.ar = std::max(shape.ar - radius, 0.0);
      inner.ac = std::max(shape.ac - radius, 0.0);
      inner.ad = std::max(shape.ad - radius, 0.0);
      double cr = shape.cr, cc = shape.cc, cd = shape.cd;
      if (inner.ar > 0.0 && inner.ac > 0.0 && inner.ad > 0.0) {
        do {
          cr = shape.cr + rng.uniform(-inner.ar, inner.ar);
          cc = shape.cc + rng.uniform(-inner.ac, inner.ac);
          cd = shape.cd + rng.uniform(-inner.ad, inner.ad);
        } while (inner.level(cr, cc, cd) > 1.0);
      }
      Tensor mask(dims);
      for (std::size_t i = 0; i < e.voxels(); ++i) {
        if (roi[i] == 0.0) continue;
        const VoxelIndex v = e.unflat(i);
        const double dr = double(v.r) - cr, dc = double(v.c) - cc, dd = double(v.d) - cd;
        if (dr * dr + dc * dc + dd * dd > radius * radius) continue;
        const double before = item.volume[i];
        item.volume[i] = before + cfg.lesion_delta * (1.0 - before);
        if (item.volume[i] != before) mask[i] = 1.0;
      }
      item.lesion_mask = std::move(mask);
    }
    items.push_back(std::move(item));
  }
  return items;
}

// ---------------------------------------------------------------------------

Tensor resample_trilinear(const Tensor& volume, const Extent3& target) {
  const Extent3 src = spatial_extent(volume);
  if (target.voxels() == 0) throw UsageError("resample_trilinear: target extents must be positive");

  struct Sample1D {
    std::size_t lo, hi;
    double t;
  };
  auto axis = [](std::size_t n_src, std::size_t n_dst) {
    std::vector<Sample1D> out(n_dst);
    for (std::size_t i = 0; i < n_dst; ++i) {
      const double x = n_dst == 1 ? 0.0 : double(i) * double(n_src - 1) / double(n_dst - 1);
      const auto lo = std::min(static_cast<std::size_t>(std::floor(x)), n_src - 1);
      const std::size_t hi = std::min(lo + 1, n_src - 1);
      out[i] = {lo, hi, x - double(lo)};
    }
    return out;
  };
  const auto ar = axis(src.h, target.h), ac = axis(src.w, target.w), ad = axis(src.d, target.d);

  const std::size_t channels = volume.dim(0);
  Tensor out(Dims{channels, target.h, target.w, target.d});
  auto at = [&](std::size_t ch, std::size_t r, std::size_t c, std::size_t d) {
    return volume[((ch * src.h + r) * src.w + c) * src.d + d];
  };
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (const auto& r : ar)
      for (const auto& c : ac)
        for (const auto& d : ad) {
          auto lerp_d = [&](std::size_t rr, std::size_t cc) {
            return (1.0 - d.t) * at(ch, rr, cc, d.lo) + d.t * at(ch, rr, cc, d.hi);
          };
          auto lerp_c = [&](std::size_t rr) { return (1.0 - c.t) * lerp_d(rr, c.lo) + c.t * lerp_d(rr, c.hi); };
          out[k++] = (1.0 - r.t) * lerp_c(r.lo) + r.t * lerp_c(r.hi);
        }
  return out;
}

std::pair<Tensor, NormParams> normalize(const Tensor& volume, const Tensor* roi) {
  if (roi) require_same_dims(volume, *roi, "normalize roi");
  NormParams p{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  bool any = false;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    if (roi && (*roi)[i] == 0.0) continue;
    any = true;
    p.min = std::min(p.min, volume[i]);
    p.max = std::max(p.max, volume[i]);
  }
  if (!any) throw UsageError("normalize: empty roi");
  if (!(p.max > p.min)) throw DataError("normalize: roi intensities are constant");
  Tensor out(volume.dims());
  const double span = p.max - p.min;
  for (std::size_t i = 0; i < volume.size(); ++i)
    if (!roi || (*roi)[i] != 0.0) out[i] = (volume[i] - p.min) / span;
  return {std::move(out), p};
}

Tensor denormalize(const Tensor& volume, const NormParams& params) {
  Tensor out = volume;
  for (auto& v : out.data()) v = v * (params.max - params.min) + params.min;
  return out;
}

std::vector<NormParams> normalize_samples(std::vector<Sample>& samples) {
  std::vector<NormParams> params;
  params.reserve(samples.size());
  for (Sample& s : samples) {
    auto [volume, p] = normalize(s.volume, s.roi_ptr());
    s.volume = std::move(volume);
    params.push_back(p);
  }
  return params;
}

// ---------------------------------------------------------------------------

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + path);
  out << "id,volume_path,lesion_mask_path,roi_path,has_lesion\n";
  for (const auto& e : entries) {
    for (const std::string* field : {&e.id, &e.volume_path, &e.lesion_mask_path, &e.roi_path})
      if (field->find_first_of(",\n") != std::string::npos)
        throw DataError("manifest field contains a comma or newline: " + *field);
    out << e.id << ',' << e.volume_path << ',' << e.lesion_mask_path << ',' << e.roi_path << ','
        << (e.has_lesion ? 1 : 0) << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  std::string line;
  if (!std::getline(in, line) || line != "id,volume_path,lesion_mask_path,roi_path,has_lesion")
    throw DataError("manifest " + path + " has an unexpected header");
  std::vector<ManifestEntry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() != 5 || (fields[4] != "0" && fields[4] != "1"))
      throw DataError("manifest " + path + " line " + std::to_string(line_no) + " is malformed");
    entries.push_back({fields[0], fields[1], fields[2], fields[3], fields[4] == "1"});
  }
  return entries;
}

std::string write_dataset(const std::string& dir, const std::vector<SynthItem>& items) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  char name[32];
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::snprintf(name, sizeof name, "%04zu", i);
    ManifestEntry e;
    e.id = name;
    e.volume_path = "vol_" + e.id + ".vvol";
    e.roi_path = "roi_" + e.id + ".vvol";
    write_volume((fs::path(dir) / e.volume_path).string(), items[i].volume);
    write_volume((fs::path(dir) / e.roi_path).string(), items[i].roi);
    if (items[i].lesion_mask) {
      e.has_lesion = true;
      e.lesion_mask_path = "lesion_" + e.id + ".vvol";
      write_volume((fs::path(dir) / e.lesion_mask_path).string(), *items[i].lesion_mask);
    }
    entries.push_back(std::move(e));
  }
  const std::string manifest = (fs::path(dir) / "manifest.csv").string();
  write_manifest(manifest, entries);
  return manifest;
}

std::vector<Sample> load_dataset(const std::string& manifest_path) {
  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };
  std::vector<Sample> samples;
  for (const auto& e : read_manifest(manifest_path)) {
    Sample s;
    s.id = e.id;
    s.volume = read_volume(resolve(e.volume_path));
    if (!e.roi_path.empty()) s.roi = read_volume(resolve(e.roi_path));
    if (!e.lesion_mask_path.empty()) s.lesion = read_volume(resolve(e.lesion_mask_path));
    if (s.volume.rank() != 4 || s.volume.dim(0) != 1) throw DataError(e.id + ": volume must be single-channel");
    if (s.roi && s.roi->dims() != s.volume.dims()) throw DataError(e.id + ": roi dims differ from volume");
    if (s.lesion && s.lesion->dims() != s.volume.dims()) throw DataError(e.id + ": lesion dims differ from volume");
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace vpcnn
