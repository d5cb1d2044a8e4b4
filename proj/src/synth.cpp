#include "bvxl/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "bvxl/rng.h"

namespace bvxl {

namespace {

// Shell boundaries sit at normalized radius (j / (C-1))^kShellExponent, which keeps
// the innermost ball above 1% of a 64^3 volume while the outer shells stay a few
// voxels thick.
constexpr double kShellExponent = 0.6;
constexpr double kBaseSemiAxis = 0.46;  // fraction of the side length
constexpr double kMinCoverage = 0.01;
constexpr int kMaxRetries = 10;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SiteProfile SiteProfile::in_site() { return SiteProfile{}; }

SiteProfile SiteProfile::out_of_site() {
  SiteProfile p;
  p.name = "out-of-site";
  p.center_jitter = 0.06;
  p.axis_scale_lo = 0.88;
  p.axis_scale_hi = 1.06;
  p.intensity_gamma = 0.85;
  p.contrast = 1.1;
  return p;
}

std::vector<double> class_means(int num_classes, const SiteProfile& site) {
  std::vector<double> means(static_cast<std::size_t>(num_classes), 0.0);
  for (int c = 1; c < num_classes; ++c)
    means[static_cast<std::size_t>(c)] =
        site.contrast * std::pow(static_cast<double>(c) / (num_classes - 1), site.intensity_gamma);
  return means;
}

LabeledVolume synth_generate(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("synth_generate: need at least 2 classes");
  if (cfg.side < 4) throw ConfigError("synth_generate: side too small");
  if (cfg.noise_sigma < 0) throw ConfigError("synth_generate: noise sigma must be non-negative");
  const std::size_t n = cfg.side;
  const Dims dims{n, n, n};
  const int classes = cfg.num_classes;
  Rng root(cfg.seed);
  Rng geometry = root.split(1);
  Rng noise = root.split(2);

  std::vector<std::int32_t> labels(dims.voxels());
  bool ok = false;
  for (int attempt = 0; attempt <= kMaxRetries && !ok; ++attempt) {
    double center[3], axis[3];
    for (int k = 0; k < 3; ++k) {
      center[k] = 0.5 * static_cast<double>(n - 1) + geometry.uniform(-1.0, 1.0) * cfg.site.center_jitter * n;
      axis[k] = kBaseSemiAxis * n * geometry.uniform(cfg.site.axis_scale_lo, cfg.site.axis_scale_hi);
    }
    std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
    std::size_t i = 0;
    for (std::size_t z = 0; z < n; ++z)
      for (std::size_t y = 0; y < n; ++y)
        for (std::size_t x = 0; x < n; ++x, ++i) {
          const double dz = (z - center[0]) / axis[0], dy = (y - center[1]) / axis[1], dx = (x - center[2]) / axis[2];
          const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
          std::int32_t label = 0;
          if (r <= 1.0) {
            const double s = std::pow(r, 1.0 / kShellExponent);
            const int shell = std::min(classes - 2, static_cast<int>(s * (classes - 1)));
            label = classes - 1 - shell;
          }
          labels[i] = label;
          ++counts[static_cast<std::size_t>(label)];
        }
    ok = std::all_of(counts.begin(), counts.end(), [&](std::size_t c) {
      return static_cast<double>(c) >= kMinCoverage * static_cast<double>(dims.voxels());
    });
  }
  if (!ok)
    throw DataError("synth_generate: could not give every class >= 1% coverage after " +
                    std::to_string(kMaxRetries) + " retries (seed " + std::to_string(cfg.seed) + ")");

  const auto means = class_means(classes, cfg.site);
  LabeledVolume out;
  out.volume.dims = dims;
  out.volume.data.resize(dims.voxels());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out.volume.data[i] =
        static_cast<float>(means[static_cast<std::size_t>(labels[i])] + cfg.noise_sigma * noise.normal());
  out.labels = std::move(labels);
  out.quality = Quality::good;
  out.volume.meta = {{"source", "synthetic"},
                     {"site", cfg.site.name},
                     {"seed", std::to_string(cfg.seed)},
                     {"noise_sigma", fmt(cfg.noise_sigma)},
                     {"classes", std::to_string(classes)},
                     {"corruption", "none"}};
  return out;
}

std::string corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::noise:
      return "noise";
    case CorruptionKind::blur:
      return "blur";
    case CorruptionKind::ghost:
      return "ghost";
  }
  return "?";
}

CorruptionKind parse_corruption(const std::string& name) {
  if (name == "noise") return CorruptionKind::noise;
  if (name == "blur") return CorruptionKind::blur;
  if (name == "ghost") return CorruptionKind::ghost;
  throw ConfigError("unknown corruption kind '" + name + "' (expected noise, blur or ghost)");
}

namespace {

std::vector<float> box_blur(const std::vector<float>& in, const Dims& d) {
  std::vector<float> out(in.size());
  const long long D = static_cast<long long>(d.d), H = static_cast<long long>(d.h), W = static_cast<long long>(d.w);
  for (long long z = 0; z < D; ++z)
    for (long long y = 0; y < H; ++y)
      for (long long x = 0; x < W; ++x) {
        double s = 0;
        int count = 0;
        for (long long dz = -1; dz <= 1; ++dz)
          for (long long dy = -1; dy <= 1; ++dy)
            for (long long dx = -1; dx <= 1; ++dx) {
              const long long zz = z + dz, yy = y + dy, xx = x + dx;
              if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
              s += in[static_cast<std::size_t>((zz * H + yy) * W + xx)];
              ++count;
            }
        out[static_cast<std::size_t>((z * H + y) * W + x)] = static_cast<float>(s / count);
      }
  return out;
}

double stddev(const std::vector<float>& v) {
  double mean = 0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (float x : v) var += (x - mean) * (x - mean);
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

LabeledVolume corrupt(const LabeledVolume& v, CorruptionKind kind, double severity, std::uint64_t seed) {
  if (!(severity > 0)) throw ConfigError("corrupt: severity must be positive");
  LabeledVolume out = v;
  Rng rng(seed);
  auto& data = out.volume.data;
  const Dims& d = v.volume.dims;
  switch (kind) {
    case CorruptionKind::noise: {
      const double sd = severity * stddev(v.volume.data);
      for (auto& x : data) x = static_cast<float>(x + sd * rng.normal());
      break;
    }
    case CorruptionKind::blur: {
      const long passes = std::lround(severity);
      for (long p = 0; p < passes; ++p) data = box_blur(data, d);
      break;
    }
    case CorruptionKind::ghost: {
      const std::size_t axis = rng.index(3);
      const std::size_t ext[3] = {d.d, d.h, d.w};
      const auto& src = v.volume.data;
      std::size_t i = 0;
      for (std::size_t z = 0; z < d.d; ++z)
        for (std::size_t y = 0; y < d.h; ++y)
          for (std::size_t x = 0; x < d.w; ++x, ++i) {
            std::size_t c[3] = {z, y, x};
            c[axis] = (c[axis] + ext[axis] - kGhostShift % ext[axis]) % ext[axis];
            data[i] = static_cast<float>(src[i] + severity * src[(c[0] * d.h + c[1]) * d.w + c[2]]);
          }
      break;
    }
  }
  out.quality = Quality::bad;
  out.volume.meta["corruption"] = corruption_name(kind);
  out.volume.meta["severity"] = fmt(severity);
  return out;
}

}  // namespace bvxl
