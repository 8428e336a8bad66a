#pragma once

#include <cstdint>

#include "treefield/array.hpp"
#include "treefield/tree.hpp"

namespace treefield {

// Supervision source for INR fitting: a signed distance (drives the
// surface-band sampler) and a target value in [0,1] (occupancy for shapes,
// intensity for images) at any point of Omega.
struct Oracle {
  virtual ~Oracle() = default;
  virtual int dim() const = 0;
  virtual double signed_distance(const Vec3& x) const = 0;
  virtual double target(const Vec3& x) const = 0;
};

class TreeOracle : public Oracle {
 public:
  explicit TreeOracle(TreeGraph tree) : tree_(std::move(tree)) {}
  int dim() const override { return tree_.d; }
  double signed_distance(const Vec3& x) const override {
    return treefield::signed_distance(tree_, x);
  }
  double target(const Vec3& x) const override { return signed_distance(x) <= 0.0 ? 1.0 : 0.0; }
  const TreeGraph& tree() const { return tree_; }

 private:
  TreeGraph tree_;
};

struct SampleBatch {
  grad::ArrayF points;   // [M x d]
  grad::ArrayF targets;  // [M x 1]
};

// floor(surface_fraction * m) points rejection-sampled into the band
// |sd| <= band (falling back to plain uniform once 10*m rejections are
// spent), the rest uniform over Omega. Deterministic per seed.
SampleBatch sample_points(const Oracle& oracle, int64_t m, double surface_fraction, double band,
                          uint64_t seed);

}  // namespace treefield
