#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "treefield/geometry.hpp"
#include "treefield/grid.hpp"
#include "treefield/inr.hpp"

namespace treefield {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int32_t, 3>> faces;

  bool empty() const { return faces.empty(); }
};

struct MeshTopology {
  bool watertight = false;  // every undirected edge on exactly 2 faces
  bool oriented = false;    // every directed edge appears exactly once
  int64_t euler_characteristic = 0;
  int64_t boundary_edges = 0;
};
MeshTopology mesh_topology(const Mesh& mesh);

struct Polyline {
  std::vector<std::array<double, 2>> points;
  bool closed = false;
};

// Unsigned enclosed area of a closed polyline (shoelace).
double polygon_area(const std::vector<std::array<double, 2>>& loop);

// Batched scalar field over Omega: [M x d] points -> [M x 1] values.
using FieldFn = std::function<grad::ArrayF(const grad::ArrayF&)>;

// Field sampled at the n^d cell centers (chunked evaluation).
VoxelGrid sample_grid(const FieldFn& field, int d, int64_t n);
VoxelGrid sample_grid(const InrCheckpoint& ckpt, int64_t n);

// Table-driven marching cubes at `level`; "inside" is value >= level.
// Vertices are interpolated on grid edges and welded by global edge key,
// so the mesh of a closed isosurface is watertight with no epsilon logic.
Mesh marching_cubes(const VoxelGrid& grid, double level = 0.5);

// 16-case marching squares; the two ambiguous cases are resolved by the
// cell-center average. Segments are assembled into polylines (closed loops
// for contours away from the boundary).
std::vector<Polyline> marching_squares(const VoxelGrid& grid, double level = 0.5);

// Plain-text mesh: lines "v x y z" (6 decimals) and "f i j k" (1-based).
void save_mesh(const Mesh& mesh, const std::string& path);
Mesh load_mesh(const std::string& path);

// Area-weighted uniform surface samples, deterministic per seed.
std::vector<Vec3> surface_sample(const Mesh& mesh, int64_t count, uint64_t seed);

}  // namespace treefield
