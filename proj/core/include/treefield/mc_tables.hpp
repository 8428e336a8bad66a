#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace treefield::mc {

// Cube corners: 0:(0,0,0) 1:(1,0,0) 2:(1,1,0) 3:(0,1,0)
//               4:(0,0,1) 5:(1,0,1) 6:(1,1,1) 7:(0,1,1)
extern const int kCornerPos[8][3];
// Edge e connects kEdgeCorners[e][0] -> kEdgeCorners[e][1].
extern const int kEdgeCorners[12][2];
// Global identity of edge e within cell (x,y,z): lattice point
// (x+dx, y+dy, z+dz) along `axis`; used for vertex welding.
struct EdgeAnchor {
  int dx, dy, dz, axis;
};
extern const EdgeAnchor kEdgeAnchor[12];

// 256-entry case tables. Case bit c is set when corner c is inside
// (value >= level). Polygons are ordered cycles of cube-edge indices,
// wound so their normals point outward. Built once by tracing the
// surface polygons of every sign configuration; four-crossing (ambiguous)
// faces are paired by a fixed rule of the corner signs — separate the
// inside diagonal — so the two cells sharing a face always agree.
// Polygons are kept untriangulated: a fan diagonal of a 4+ gon can lie in
// a cell face and collide with the neighbouring cell's triangulation, so
// the extractor triangulates large polygons around a cell-local centroid.
struct Tables {
  std::array<uint16_t, 256> edge_mask{};
  std::array<std::vector<std::vector<int8_t>>, 256> polygons{};
};

const Tables& tables();

}  // namespace treefield::mc
