#include "bvxl/volume.h"

#include <cmath>
#include <cstring>

namespace bvxl {

std::string Dims::str() const { return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w); }

std::string quality_name(Quality q) {
  switch (q) {
    case Quality::good:
      return "good";
    case Quality::bad:
      return "bad";
    case Quality::unlabeled:
      return "unlabeled";
  }
  return "?";
}

Quality parse_quality(const std::string& s) {
  if (s == "good") return Quality::good;
  if (s == "bad") return Quality::bad;
  if (s == "unlabeled") return Quality::unlabeled;
  throw DataError("unknown quality label '" + s + "'");
}

Volume zscore(const Volume& v) {
  if (v.data.empty()) throw DataError("zscore: empty volume");
  double mean = 0;
  for (float x : v.data) mean += x;
  mean /= static_cast<double>(v.data.size());
  double var = 0;
  for (float x : v.data) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.data.size());
  const double sd = std::sqrt(var);
  if (!(sd > 0)) throw DataError("zscore: volume has zero intensity variance");
  Volume out{v.dims, std::vector<float>(v.data.size()), v.meta};
  for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = static_cast<float>((v.data[i] - mean) / sd);
  return out;
}

void check_divisible(const Dims& dims, std::size_t side) {
  if (side == 0) throw ShapeError("subvolume side must be positive");
  const std::pair<const char*, std::size_t> axes[3] = {{"depth", dims.d}, {"height", dims.h}, {"width", dims.w}};
  for (const auto& [name, extent] : axes)
    if (extent == 0 || extent % side != 0)
      throw ShapeError(std::string("volume ") + dims.str() + ": " + name + " axis (" + std::to_string(extent) +
                       ") is not divisible by subvolume side " + std::to_string(side));
}

template <typename V>
std::vector<Tile<V>> split_subvolumes(std::span<const V> data, std::size_t channels, const Dims& dims,
                                      std::size_t side) {
  check_divisible(dims, side);
  if (data.size() != channels * dims.voxels())
    throw ShapeError("split_subvolumes: " + std::to_string(data.size()) + " values for " + std::to_string(channels) +
                     " x " + dims.str());
  const GridCoord grid{dims.d / side, dims.h / side, dims.w / side};
  const std::size_t tile_voxels = side * side * side;
  std::vector<Tile<V>> tiles;
  tiles.reserve(grid[0] * grid[1] * grid[2]);
  for (std::size_t gz = 0; gz < grid[0]; ++gz)
    for (std::size_t gy = 0; gy < grid[1]; ++gy)
      for (std::size_t gx = 0; gx < grid[2]; ++gx) {
        Tile<V> t;
        t.grid = {gz, gy, gx};
        t.data.resize(channels * tile_voxels);
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t z = 0; z < side; ++z)
            for (std::size_t y = 0; y < side; ++y) {
              const std::size_t src = c * dims.voxels() + ((gz * side + z) * dims.h + gy * side + y) * dims.w + gx * side;
              std::memcpy(&t.data[c * tile_voxels + (z * side + y) * side], &data[src], side * sizeof(V));
            }
        tiles.push_back(std::move(t));
      }
  return tiles;
}

template <typename V>
std::vector<V> reassemble(std::span<const Tile<V>> tiles, std::size_t channels, const Dims& dims, std::size_t side) {
  check_divisible(dims, side);
  const GridCoord grid{dims.d / side, dims.h / side, dims.w / side};
  const std::size_t tile_voxels = side * side * side;
  std::vector<bool> seen(grid[0] * grid[1] * grid[2], false);
  std::vector<V> out(channels * dims.voxels());
  auto coord = [](const GridCoord& g) {
    return "(" + std::to_string(g[0]) + "," + std::to_string(g[1]) + "," + std::to_string(g[2]) + ")";
  };
  for (const Tile<V>& t : tiles) {
    if (t.grid[0] >= grid[0] || t.grid[1] >= grid[1] || t.grid[2] >= grid[2])
      throw DataError("reassemble: tile " + coord(t.grid) + " lies outside the grid of " + dims.str());
    const std::size_t slot = (t.grid[0] * grid[1] + t.grid[1]) * grid[2] + t.grid[2];
    if (seen[slot]) throw DataError("reassemble: duplicate tile " + coord(t.grid));
    if (t.data.size() != channels * tile_voxels)
      throw ShapeError("reassemble: tile " + coord(t.grid) + " has " + std::to_string(t.data.size()) + " values");
    seen[slot] = true;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t z = 0; z < side; ++z)
        for (std::size_t y = 0; y < side; ++y) {
          const std::size_t dst =
              c * dims.voxels() + ((t.grid[0] * side + z) * dims.h + t.grid[1] * side + y) * dims.w + t.grid[2] * side;
          std::memcpy(&out[dst], &t.data[c * tile_voxels + (z * side + y) * side], side * sizeof(V));
        }
  }
  for (std::size_t slot = 0; slot < seen.size(); ++slot)
    if (!seen[slot]) {
      const GridCoord g{slot / (grid[1] * grid[2]), (slot / grid[2]) % grid[1], slot % grid[2]};
      throw DataError("reassemble: missing tile " + coord(g));
    }
  return out;
}

#define BVXL_INSTANTIATE(V)                                                                                      \
  template std::vector<Tile<V>> split_subvolumes(std::span<const V>, std::size_t, const Dims&, std::size_t);     \
  template std::vector<V> reassemble(std::span<const Tile<V>>, std::size_t, const Dims&, std::size_t);

BVXL_INSTANTIATE(float)
BVXL_INSTANTIATE(double)
BVXL_INSTANTIATE(std::int32_t)
#undef BVXL_INSTANTIATE

}  // namespace bvxl
