#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bvxl/volume.h"

namespace bvxl {

/// Generator parameters that distinguish one acquisition "site" from another.
struct SiteProfile {
  std::string name = "in-site";
  double center_jitter = 0.04;              // fraction of the side length
  double axis_scale_lo = 0.92, axis_scale_hi = 1.04;
  double intensity_gamma = 1.0;             // class means follow (c / (C-1))^gamma
  double contrast = 1.0;                    // spacing multiplier of the class means

  static SiteProfile in_site();
  /// Shifted class-intensity curve and wider geometric jitter.
  static SiteProfile out_of_site();
};

struct SynthConfig {
  std::size_t side = 64;
  int num_classes = 8;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  SiteProfile site = SiteProfile::in_site();
};

/// Mean intensity of every class; class 0 (background) is 0 and the rest increase.
std::vector<double> class_means(int num_classes, const SiteProfile& site);

/// Concentric ellipsoidal shells: class 0 outside, classes 1..C-1 inward, with
/// jittered centre and semi-axes. Geometry and intensity noise use separate streams,
/// so labels do not depend on noise_sigma. Every class covers >= 1% of the voxels;
/// otherwise the axes are redrawn up to 10 times before DataError.
LabeledVolume synth_generate(const SynthConfig& cfg);

enum class CorruptionKind { noise, blur, ghost };
std::string corruption_name(CorruptionKind kind);
CorruptionKind parse_corruption(const std::string& name);

/// Voxel shift used by ghost corruption.
inline constexpr std::size_t kGhostShift = 8;

/// Returns a copy marked bad. noise: + N(0, (severity * std)^2); blur: 3^3 box
/// filter applied round(severity) times; ghost: + severity * copy circularly shifted
/// by kGhostShift voxels along a seed-chosen axis. Labels are unchanged.
LabeledVolume corrupt(const LabeledVolume& v, CorruptionKind kind, double severity, std::uint64_t seed);

}  // namespace bvxl
