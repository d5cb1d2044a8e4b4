#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bvxl/synth.h"
#include "bvxl/trainer.h"
#include "bvxl/volume.h"

namespace bvxl {

enum class Split { train, val, test };
std::string split_name(Split s);
Split parse_split(const std::string& s);

struct DatasetEntry {
  std::string id;
  std::string image;   // relative to the dataset directory
  std::string labels;  // relative to the dataset directory
  Quality quality = Quality::good;
  Split split = Split::train;
  std::string corruption = "none";
  double severity = 0;
};

inline constexpr int kManifestSchemaVersion = 1;

/// Contents of a dataset directory's manifest.json.
struct DatasetManifest {
  std::size_t side = 64;
  int num_classes = 8;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  std::string site = "in-site";
  std::vector<DatasetEntry> entries;

  std::vector<DatasetEntry> in_split(Split s) const;
  void save(const std::filesystem::path& dir) const;
  static DatasetManifest load(const std::filesystem::path& dir);
};

/// 80-10-10 sizes: val = test = round(N / 10), train takes the remainder.
struct SplitSizes {
  std::size_t train, val, test;
};
SplitSizes split_sizes(std::size_t n);

struct SynthDatasetConfig {
  std::size_t count = 200;
  SynthConfig volume;  // seed is the dataset seed; volume i uses Rng(seed).split(i)
  double corrupt_frac = 0.0;
  double severity_lo = 0.5, severity_hi = 2.0;
};

/// Writes floor(corrupt_frac * count) corrupted volumes (kind uniform, severity
/// uniform) among count SVOL image/label pairs, plus manifest.json.
DatasetManifest generate_synth_dataset(const std::filesystem::path& dir, const SynthDatasetConfig& cfg);

LabeledVolume load_entry(const std::filesystem::path& dir, const DatasetEntry& e);

/// z-scores the image and cuts image and labels into side^3 tiles.
std::vector<Subvolume> make_subvolumes(const LabeledVolume& v, std::size_t side);

/// Subvolumes of every entry in a split, in manifest order.
std::vector<Subvolume> load_split_subvolumes(const std::filesystem::path& dir, const DatasetManifest& m, Split s,
                                             std::size_t side);

}  // namespace bvxl
