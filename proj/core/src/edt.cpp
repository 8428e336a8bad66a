#include "treefield/edt.hpp"

#include <algorithm>
#include <cmath>

#include "treefield/errors.hpp"

namespace treefield {

namespace {

// Lower envelope of parabolas q -> (q - p)^2 + f(p) (Felzenszwalb &
// Huttenlocher). Exact for integer q, p.
void dt_1d(const double* f, int64_t n, double* d, int64_t* v, double* z) {
  int64_t k = 0;
  v[0] = 0;
  z[0] = -kEdtUnreachable;
  z[1] = kEdtUnreachable;
  for (int64_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int64_t p = v[k];
      s = ((f[q] + static_cast<double>(q) * q) -
           (f[p] + static_cast<double>(p) * p)) /
          (2.0 * static_cast<double>(q - p));
      if (s <= z[k] && k > 0)
        --k;
      else
        break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kEdtUnreachable;
  }
  k = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q - v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

std::vector<double> edt_squared(const std::vector<uint8_t>& sites,
                                const std::vector<int64_t>& dims) {
  if (dims.empty()) throw ShapeError("edt: no dimensions");
  int64_t total = 1;
  for (int64_t n : dims) {
    if (n < 1) throw ShapeError("edt: dimensions must be positive");
    total *= n;
  }
  if (static_cast<int64_t>(sites.size()) != total)
    throw ShapeError("edt: mask size does not match dimensions");

  std::vector<double> dist(sites.size());
  for (size_t i = 0; i < sites.size(); ++i)
    dist[i] = sites[i] ? 0.0 : kEdtUnreachable;

  // One pass per axis. For the axis with element stride `stride`, each
  // 1D line starts at an index enumerated by the remaining axes.
  const int64_t rank = static_cast<int64_t>(dims.size());
  int64_t max_n = 0;
  for (int64_t n : dims) max_n = std::max(max_n, n);
  std::vector<double> f(max_n), d(max_n), z(max_n + 1);
  std::vector<int64_t> v(max_n);

  int64_t stride = 1;  // fastest axis first (dims back() is x)
  for (int64_t axis = rank - 1; axis >= 0; --axis) {
    const int64_t n = dims[axis];
    const int64_t lines = total / n;
    // Lines enumerate all index tuples with this axis fixed at 0; the
    // linear index decomposes as block * (n * stride) + offset.
    const int64_t block_size = n * stride;
    for (int64_t line = 0; line < lines; ++line) {
      const int64_t block = line / stride;
      const int64_t offset = line % stride;
      const int64_t base = block * block_size + offset;
      for (int64_t i = 0; i < n; ++i) f[i] = dist[base + i * stride];
      dt_1d(f.data(), n, d.data(), v.data(), z.data());
      for (int64_t i = 0; i < n; ++i) dist[base + i * stride] = d[i];
    }
    stride *= n;
  }
  return dist;
}

std::vector<float> signed_distance_field(const VoxelGrid& grid,
                                         float threshold) {
  const int64_t n = grid.n;
  std::vector<int64_t> dims(static_cast<size_t>(grid.d), n);
  std::vector<uint8_t> inside(grid.values.size());
  for (size_t i = 0; i < grid.values.size(); ++i)
    inside[i] = grid.values[i] >= threshold ? 1 : 0;
  std::vector<uint8_t> outside(inside.size());
  for (size_t i = 0; i < inside.size(); ++i) outside[i] = 1 - inside[i];

  const std::vector<double> to_fg = edt_squared(inside, dims);
  const std::vector<double> to_bg = edt_squared(outside, dims);
  const double spacing = grid.spacing();

  std::vector<float> sd(inside.size());
  for (size_t i = 0; i < inside.size(); ++i) {
    const double d2 = inside[i] ? to_bg[i] : to_fg[i];
    double d = d2 >= kEdtUnreachable ? kEdtFarValue : std::sqrt(d2) * spacing;
    d = std::min(d, static_cast<double>(kEdtFarValue));
    sd[i] = static_cast<float>(inside[i] ? -d : d);
  }
  return sd;
}

}  // namespace treefield
