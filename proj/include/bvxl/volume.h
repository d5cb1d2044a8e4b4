#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bvxl/error.h"

namespace bvxl {

/// Volume extents (D, H, W); voxels are stored x-fastest: index = (z * H + y) * W + x.
struct Dims {
  std::size_t d = 0, h = 0, w = 0;

  std::size_t voxels() const { return d * h * w; }
  bool operator==(const Dims&) const = default;
  std::string str() const;
};

using Meta = std::map<std::string, std::string>;

struct Volume {
  Dims dims;
  std::vector<float> data;
  Meta meta;
};

enum class Quality { good, bad, unlabeled };
std::string quality_name(Quality q);
Quality parse_quality(const std::string& s);

struct LabeledVolume {
  Volume volume;
  std::vector<std::int32_t> labels;
  Quality quality = Quality::unlabeled;
};

/// (x - mean) / std over all voxels. Throws DataError on a constant volume.
Volume zscore(const Volume& v);

using GridCoord = std::array<std::size_t, 3>;

/// One cubic tile of a multi-channel voxel array, stored [channels, s, s, s].
template <typename V>
struct Tile {
  GridCoord grid{};
  std::vector<V> data;
};

/// Non-overlapping s^3 tiles of a [channels, D, H, W] array in lexicographic
/// (z, y, x) grid order. Throws ShapeError naming the first indivisible axis.
template <typename V>
std::vector<Tile<V>> split_subvolumes(std::span<const V> data, std::size_t channels, const Dims& dims, std::size_t side);

/// Inverse of split_subvolumes. Placement follows each tile's grid coordinate, not
/// list order. Throws DataError on a missing or duplicated tile.
template <typename V>
std::vector<V> reassemble(std::span<const Tile<V>> tiles, std::size_t channels, const Dims& dims, std::size_t side);

/// Throws ShapeError if any axis is not divisible by side.
void check_divisible(const Dims& dims, std::size_t side);

}  // namespace bvxl
