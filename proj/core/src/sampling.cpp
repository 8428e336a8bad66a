#include "treefield/sampling.hpp"

#include <cmath>

#include "treefield/rng.hpp"

namespace treefield {

SampleBatch sample_points(const Oracle& oracle, int64_t m, double surface_fraction, double band,
                          uint64_t seed) {
  if (m < 1) throw ConfigError("sample_points: batch size must be >= 1");
  if (surface_fraction < 0.0 || surface_fraction > 1.0)
    throw ConfigError("sample_points: surface_fraction must be in [0,1]");
  if (band <= 0.0) throw ConfigError("sample_points: band must be positive");

  const int d = oracle.dim();
  SampleBatch batch;
  batch.points = grad::ArrayF({m, d}, 0.0f);
  batch.targets = grad::ArrayF({m, 1}, 0.0f);

  Rng rng(seed);
  auto draw_uniform = [&](Vec3& x) {
    x = {0.0, 0.0, 0.0};
    for (int k = 0; k < d; ++k) x[k] = rng.uniform(-1.0, 1.0);
  };

  const int64_t n_surface = static_cast<int64_t>(std::floor(surface_fraction * static_cast<double>(m)));
  const int64_t rejection_budget = 10 * m;
  int64_t rejections = 0;

  for (int64_t i = 0; i < m; ++i) {
    Vec3 x;
    draw_uniform(x);
    if (i < n_surface) {
      while (rejections < rejection_budget && std::abs(oracle.signed_distance(x)) > band) {
        ++rejections;
        draw_uniform(x);
      }
    }
    for (int k = 0; k < d; ++k) batch.points.at(i, k) = static_cast<float>(x[k]);
    batch.targets.at(i, 0) = static_cast<float>(oracle.target(x));
  }
  return batch;
}

}  // namespace treefield
