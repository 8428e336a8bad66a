#include "treefield/ingestion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "treefield/edt.hpp"
#include "treefield/errors.hpp"

namespace treefield {

GridOracle::GridOracle(VoxelGrid binary_grid) : grid_(std::move(binary_grid)) {
  if (grid_.d != 2 && grid_.d != 3)
    throw ShapeError("GridOracle: d must be 2 or 3");
  if (grid_.n < 1) throw ShapeError("GridOracle: empty grid");
  for (float v : grid_.values)
    if (v != 0.0f && v != 1.0f)
      throw DataError("GridOracle: grid is not binary");
  sd_ = signed_distance_field(grid_, 0.5f);
}

int64_t GridOracle::cell_index(const Vec3& x) const {
  const int64_t n = grid_.n;
  const double inv_spacing = static_cast<double>(n) / 2.0;
  int64_t idx = 0;
  for (int axis = grid_.d - 1; axis >= 0; --axis) {
    const auto i = static_cast<int64_t>(std::floor((x[static_cast<size_t>(axis)] + 1.0) * inv_spacing));
    idx = idx * n + std::clamp<int64_t>(i, 0, n - 1);
  }
  return idx;
}

double GridOracle::signed_distance(const Vec3& x) const {
  return sd_[cell_index(x)];
}

double GridOracle::target(const Vec3& x) const {
  return grid_.values[cell_index(x)];
}

GridOracle load_voxel_volume(const std::string& path, float threshold) {
  VoxelGrid grid = load_grid(path);
  for (float v : grid.values)
    if (!std::isfinite(v))
      throw DataError(path + ": non-finite voxel value");
  for (float& v : grid.values) v = v >= threshold ? 1.0f : 0.0f;
  return GridOracle(std::move(grid));
}

VoxelGrid load_raw_volume(const std::string& path, int d, int64_t n) {
  if (d != 2 && d != 3) throw ConfigError("load_raw_volume: d must be 2 or 3");
  if (n < 1) throw ConfigError("load_raw_volume: n must be >= 1");
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw DataError("cannot open " + path);
  const auto file_size = static_cast<int64_t>(in.tellg());
  int64_t numel = 1;
  for (int i = 0; i < d; ++i) numel *= n;
  if (file_size != numel * 4)
    throw DataError(path + ": expected " + std::to_string(numel * 4) +
                    " bytes for a " + std::to_string(n) + "^" +
                    std::to_string(d) + " float volume, found " +
                    std::to_string(file_size));
  in.seekg(0);
  VoxelGrid grid(d, n);
  in.read(reinterpret_cast<char*>(grid.values.data()),
          static_cast<std::streamsize>(grid.values.size() * 4));
  if (!in) throw DataError(path + ": short read");
  for (float v : grid.values)
    if (!std::isfinite(v))
      throw DataError(path + ": non-finite voxel value");
  return grid;
}

}  // namespace treefield
