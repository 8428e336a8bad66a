#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "treefield/geometry.hpp"
#include "treefield/grid.hpp"

namespace treefield {

// Rooted tubular tree: nodes with radii, parent->child edges. Geometry is
// the union of tapered capsules (one per edge, radii lerped along it), so
// occupancy and signed distance are analytically exact. 2D trees keep
// z = 0 everywhere.
struct TreeNode {
  Vec3 pos{0.0, 0.0, 0.0};
  double radius = 0.0;
};

struct TreeGraph {
  int d = 3;
  std::vector<TreeNode> nodes;
  std::vector<std::pair<int32_t, int32_t>> edges;  // parent -> child
  int32_t root = 0;

  double max_radius() const;
  // Checks: single connected rooted tree, radii positive and monotonically
  // tapering, all nodes inside Omega with margin >= max radius.
  void validate() const;
};

struct TreeStats {
  int bifurcation_count = 0;
  double total_length = 0.0;
  std::vector<double> tortuosity_per_branch;
  double average_radius = 0.0;
};

// Exact signed distance to one tapered capsule (segment a-b with end radii
// ra, rb). Works for d=2 when all z components are zero.
double capsule_sd(const Vec3& p, const Vec3& a, const Vec3& b, double ra, double rb);

double signed_distance(const TreeGraph& tree, const Vec3& x);
inline int occupancy(const TreeGraph& tree, const Vec3& x) {
  return signed_distance(tree, x) <= 0.0 ? 1 : 0;
}

// Random tree with exactly `target_bifurcations` bifurcation nodes. Each
// branch is a 6-segment polyline bent sideways by `wiggle` in [0,1]
// (wiggle = 0 gives straight branches). Child branch radii are 0.8x the
// parent's, root radius 0.08. Deterministic per seed; throws DataError if
// the tree cannot be placed inside Omega after bounded retries.
TreeGraph generate_tree(uint64_t seed, int d, int target_bifurcations, double wiggle);

TreeStats tree_stats(const TreeGraph& tree);

// Occupancy sampled at the cell centers of an n^d grid over Omega.
VoxelGrid voxelize(const TreeGraph& tree, int64_t n);

// Plain-text edge list: "TREEGRAPH v1 d=<2|3>", then one line per node and
// per edge. load_tree validates the parsed graph.
void save_tree(const TreeGraph& tree, const std::string& path);
TreeGraph load_tree(const std::string& path);

}  // namespace treefield
