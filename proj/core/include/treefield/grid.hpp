#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treefield/errors.hpp"

namespace treefield {

// Dense scalar grid over Omega = [-1,1]^d sampled at cell centers, so axis
// index i maps to coordinate -1 + (i + 0.5) * (2/n). Storage is row-major
// with x fastest: idx = (z*n + y)*n + x in 3D, idx = y*n + x in 2D.
struct VoxelGrid {
  int d = 3;
  int64_t n = 0;
  std::vector<float> values;

  VoxelGrid() = default;
  VoxelGrid(int d_, int64_t n_);

  int64_t numel() const { return static_cast<int64_t>(values.size()); }
  double spacing() const { return 2.0 / static_cast<double>(n); }
  double coord(int64_t i) const { return -1.0 + (static_cast<double>(i) + 0.5) * spacing(); }

  int64_t index2(int64_t x, int64_t y) const { return y * n + x; }
  int64_t index3(int64_t x, int64_t y, int64_t z) const { return (z * n + y) * n + x; }

  float& at2(int64_t x, int64_t y) { return values[index2(x, y)]; }
  float at2(int64_t x, int64_t y) const { return values[index2(x, y)]; }
  float& at3(int64_t x, int64_t y, int64_t z) { return values[index3(x, y, z)]; }
  float at3(int64_t x, int64_t y, int64_t z) const { return values[index3(x, y, z)]; }
};

// Binary grid file: 16-byte header (magic "VOX1", u32 version=1, u32 d,
// u32 n, all little-endian), then n^d little-endian f32 values.
void save_grid(const VoxelGrid& grid, const std::string& path);
VoxelGrid load_grid(const std::string& path);

// 8-bit PGM (P5) preview of a 2D grid, values clamped to [0,1] and scaled
// to 0..255. Row 0 of the image is the y = n-1 grid row so +y points up.
void save_pgm(const VoxelGrid& grid, const std::string& path);

}  // namespace treefield
