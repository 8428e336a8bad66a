#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "treefield/grid.hpp"
#include "treefield/tree.hpp"

namespace treefield {

struct SkeletonBranch {
  std::vector<std::array<int64_t, 3>> voxels;  // ordered path, ends inclusive
  double arc_length = 0.0;    // domain units, sum of voxel steps
  double chord_length = 0.0;  // domain units, endpoint distance
  double tortuosity = 1.0;    // arc / chord
  double mean_radius = 0.0;   // distance transform of the input shape
};

struct Skeleton {
  int64_t n = 0;
  std::vector<uint8_t> mask;  // 1 on skeleton voxels, x-fastest layout
  std::vector<SkeletonBranch> branches;
  int64_t junction_count = 0;  // 26-connected clusters of degree>=3 voxels
  int64_t endpoint_count = 0;
};

// Curve skeleton of the binarized foreground by directional homotopic
// thinning: repeated sweeps peel one face-exposed layer per axis direction,
// removing voxels one at a time only while simple under (26, 6)
// connectivity, not an endpoint, and still supported from the opposite
// side. Component counts of foreground and background are preserved
// exactly. Two artifact classes are pruned afterwards: endpoint-terminated
// twigs shorter than twice the tube radius at their attachment (surface
// bumps spawn those, genuine terminal branches run several radii), and
// sub-tube-scale self-loops on a single junction (digital handles where
// tube surfaces touch diagonally; a genuine loop encloses background at
// tube scale). Foreground component counts are still preserved.
Skeleton skeletonize(const VoxelGrid& grid, float threshold = 0.5f);

// Branch statistics of the skeleton in TreeStats form: junction clusters as
// bifurcations, branch arc lengths, arc/chord tortuosity, mean distance-
// transform radius over skeleton voxels.
TreeStats skeleton_stats(const VoxelGrid& grid, float threshold = 0.5f);

}  // namespace treefield
