#pragma once

#include <cstdint>
#include <string>

#include "treefield/grid.hpp"
#include "treefield/sampling.hpp"

namespace treefield {

// Oracle backed by a binary grid instead of an analytic tree: occupancy is
// the nearest-cell value, signed distance comes from two one-sided exact
// distance transforms (negative inside), both in domain units. This is the
// hook for supervising fits from external volumes.
class GridOracle : public Oracle {
 public:
  explicit GridOracle(VoxelGrid binary_grid);

  int dim() const override { return grid_.d; }
  double signed_distance(const Vec3& x) const override;
  double target(const Vec3& x) const override;
  const VoxelGrid& grid() const { return grid_; }

 private:
  int64_t cell_index(const Vec3& x) const;

  VoxelGrid grid_;
  std::vector<float> sd_;
};

// Load a `VOX1` grid, binarize at `threshold`, and wrap it in a GridOracle.
GridOracle load_voxel_volume(const std::string& path, float threshold = 0.5f);

// Raw little-endian float32 volume with dimensions passed explicitly
// (n voxels per axis, d axes, x fastest). Rejects size mismatches and
// non-finite values.
VoxelGrid load_raw_volume(const std::string& path, int d, int64_t n);

}  // namespace treefield
