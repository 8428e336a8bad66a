#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "treefield/geometry.hpp"

namespace treefield {

// Exact nearest-neighbour index over a fixed 3D point set.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);

  int64_t size() const { return static_cast<int64_t>(points_.size()); }

  // Index of the nearest point and its squared distance.
  std::pair<int64_t, double> nearest(const Vec3& q) const;
  // Same, but never returns `skip` (for leave-one-out queries).
  std::pair<int64_t, double> nearest_excluding(const Vec3& q,
                                               int64_t skip) const;

 private:
  struct Node {
    int32_t left = -1;
    int32_t right = -1;
    int32_t point = -1;  // original index
    int8_t axis = 0;
  };

  int32_t build(int64_t begin, int64_t end);
  void search(int32_t node, const Vec3& q, int64_t skip, int64_t& best,
              double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<int32_t> order_;  // permutation being partitioned during build
  std::vector<Node> nodes_;
  int32_t root_ = -1;
};

}  // namespace treefield
