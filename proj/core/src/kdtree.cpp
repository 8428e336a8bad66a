#include "treefield/kdtree.hpp"

#include <algorithm>
#include <limits>

#include "treefield/errors.hpp"

namespace treefield {

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  if (points_.empty()) throw ShapeError("kdtree: empty point set");
  order_.resize(points_.size());
  for (size_t i = 0; i < points_.size(); ++i)
    order_[i] = static_cast<int32_t>(i);
  nodes_.reserve(points_.size());
  root_ = build(0, static_cast<int64_t>(points_.size()));
}

int32_t KdTree::build(int64_t begin, int64_t end) {
  if (begin >= end) return -1;

  // Split on the widest axis of the subset's bounding box.
  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (int64_t i = begin + 1; i < end; ++i) {
    const Vec3& p = points_[order_[i]];
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  }
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (hi[a] - lo[a] > hi[axis] - lo[axis]) axis = a;

  const int64_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid,
                   order_.begin() + end, [&](int32_t a, int32_t b) {
                     return points_[a][axis] < points_[b][axis];
                   });

  const int32_t id = static_cast<int32_t>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].point = order_[mid];
  nodes_[id].axis = static_cast<int8_t>(axis);
  const int32_t left = build(begin, mid);
  const int32_t right = build(mid + 1, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int32_t node, const Vec3& q, int64_t skip, int64_t& best,
                    double& best_d2) const {
  if (node < 0) return;
  const Node& n = nodes_[node];
  const Vec3& p = points_[n.point];
  if (n.point != skip) {
    const double d2 = dist2(p, q);
    if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
      best_d2 = d2;
      best = n.point;
    }
  }
  const double delta = q[n.axis] - p[n.axis];
  const int32_t near = delta < 0.0 ? n.left : n.right;
  const int32_t far = delta < 0.0 ? n.right : n.left;
  search(near, q, skip, best, best_d2);
  if (delta * delta <= best_d2) search(far, q, skip, best, best_d2);
}

std::pair<int64_t, double> KdTree::nearest(const Vec3& q) const {
  return nearest_excluding(q, -1);
}

std::pair<int64_t, double> KdTree::nearest_excluding(const Vec3& q,
                                                     int64_t skip) const {
  if (skip >= 0 && size() < 2)
    throw ShapeError("kdtree: leave-one-out query on a single point");
  int64_t best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(root_, q, skip, best, best_d2);
  return {best, best_d2};
}

}  // namespace treefield
