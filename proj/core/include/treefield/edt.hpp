#pragma once

#include <cstdint>
#include <vector>

#include "treefield/grid.hpp"

namespace treefield {

// Exact squared Euclidean distance (in voxel units) to the nearest set
// voxel. `dims` orders axes slowest-to-fastest alongside the x-fastest
// linear layout used by VoxelGrid (dims = {nz, ny, nx} in 3D). Voxels with
// no reachable site hold a value >= kEdtUnreachable.
inline constexpr double kEdtUnreachable = 1e12;
std::vector<double> edt_squared(const std::vector<uint8_t>& sites,
                                const std::vector<int64_t>& dims);

// Signed distance in domain units from a binarized grid: negative inside
// (value >= threshold), positive outside, zero never (voxel centers are
// strictly inside or outside). Distances where the opposite phase is empty
// clamp to +-kEdtFarValue, which exceeds any in-domain distance.
inline constexpr float kEdtFarValue = 4.0f;
std::vector<float> signed_distance_field(const VoxelGrid& grid,
                                         float threshold = 0.5f);

}  // namespace treefield
