#include "treefield/isoextract.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "treefield/mc_tables.hpp"
#include "treefield/rng.hpp"

namespace treefield {

namespace {
constexpr int64_t kFieldChunk = 65536;
}

VoxelGrid sample_grid(const FieldFn& field, int d, int64_t n) {
  if (n < 2) throw ConfigError("sample_grid: resolution must be >= 2");
  VoxelGrid g(d, n);
  const int64_t total = g.numel();
  for (int64_t base = 0; base < total; base += kFieldChunk) {
    const int64_t m = std::min(kFieldChunk, total - base);
    grad::ArrayF pts({m, d}, 0.0f);
    for (int64_t i = 0; i < m; ++i) {
      int64_t idx = base + i;
      for (int k = 0; k < d; ++k) {
        pts.at(i, k) = static_cast<float>(g.coord(idx % n));
        idx /= n;
      }
    }
    const grad::ArrayF vals = field(pts);
    if (vals.numel() != m) throw ShapeError("sample_grid: field returned wrong value count");
    for (int64_t i = 0; i < m; ++i) g.values[base + i] = vals.data[i];
  }
  return g;
}

VoxelGrid sample_grid(const InrCheckpoint& ckpt, int64_t n) {
  const InrWeights w = unflatten_weights(ckpt.arch, ckpt.theta);
  return sample_grid([&w](const grad::ArrayF& pts) { return inr_forward(w, pts); }, ckpt.arch.d,
                     n);
}

Mesh marching_cubes(const VoxelGrid& grid, double level) {
  if (grid.d != 3) throw ShapeError("marching_cubes: 3D grids only");
  const mc::Tables& tab = mc::tables();
  const int64_t n = grid.n;
  Mesh mesh;
  std::unordered_map<uint64_t, int32_t> vertex_of_edge;
  vertex_of_edge.reserve(1024);

  auto edge_vertex = [&](int64_t x, int64_t y, int64_t z, int e) -> int32_t {
    const mc::EdgeAnchor& an = mc::kEdgeAnchor[e];
    const int64_t ax = x + an.dx, ay = y + an.dy, az = z + an.dz;
    const uint64_t key = (static_cast<uint64_t>((az * n + ay) * n + ax) << 2) |
                         static_cast<uint64_t>(an.axis);
    auto it = vertex_of_edge.find(key);
    if (it != vertex_of_edge.end()) return it->second;

    const int ca = mc::kEdgeCorners[e][0], cb = mc::kEdgeCorners[e][1];
    const int64_t xa = x + mc::kCornerPos[ca][0], ya = y + mc::kCornerPos[ca][1],
                  za = z + mc::kCornerPos[ca][2];
    const int64_t xb = x + mc::kCornerPos[cb][0], yb = y + mc::kCornerPos[cb][1],
                  zb = z + mc::kCornerPos[cb][2];
    const double va = grid.at3(xa, ya, za);
    const double vb = grid.at3(xb, yb, zb);
    double t = (level - va) / (vb - va);
    t = std::clamp(t, 0.0, 1.0);
    const Vec3 pa{grid.coord(xa), grid.coord(ya), grid.coord(za)};
    const Vec3 pb{grid.coord(xb), grid.coord(yb), grid.coord(zb)};
    const Vec3 p = pa + (pb - pa) * t;
    const int32_t idx = static_cast<int32_t>(mesh.vertices.size());
    mesh.vertices.push_back(p);
    vertex_of_edge.emplace(key, idx);
    return idx;
  };

  for (int64_t z = 0; z + 1 < n; ++z)
    for (int64_t y = 0; y + 1 < n; ++y)
      for (int64_t x = 0; x + 1 < n; ++x) {
        int mask = 0;
        for (int c = 0; c < 8; ++c) {
          const double v = grid.at3(x + mc::kCornerPos[c][0], y + mc::kCornerPos[c][1],
                                    z + mc::kCornerPos[c][2]);
          if (v >= level) mask |= 1 << c;
        }
        for (const auto& poly : tab.polygons[mask]) {
          const size_t k = poly.size();
          if (k == 3) {
            mesh.faces.push_back({edge_vertex(x, y, z, poly[0]), edge_vertex(x, y, z, poly[1]),
                                  edge_vertex(x, y, z, poly[2])});
            continue;
          }
          // Triangulate around the polygon centroid. The centroid is strictly
          // interior to the cell, so unlike a fan diagonal it can never
          // coincide with geometry produced by a neighbouring cell.
          std::vector<int32_t> ids(k);
          Vec3 centroid{0.0, 0.0, 0.0};
          for (size_t i = 0; i < k; ++i) {
            ids[i] = edge_vertex(x, y, z, poly[i]);
            centroid = centroid + mesh.vertices[ids[i]];
          }
          centroid = centroid * (1.0 / static_cast<double>(k));
          const int32_t cm = static_cast<int32_t>(mesh.vertices.size());
          mesh.vertices.push_back(centroid);
          for (size_t i = 0; i < k; ++i)
            mesh.faces.push_back({cm, ids[i], ids[(i + 1) % k]});
        }
      }
  return mesh;
}

MeshTopology mesh_topology(const Mesh& mesh) {
  MeshTopology topo;
  std::map<std::pair<int32_t, int32_t>, int> undirected;
  std::map<std::pair<int32_t, int32_t>, int> directed;
  for (const auto& f : mesh.faces) {
    for (int i = 0; i < 3; ++i) {
      const int32_t a = f[i], b = f[(i + 1) % 3];
      ++directed[{a, b}];
      ++undirected[{std::min(a, b), std::max(a, b)}];
    }
  }
  topo.watertight = !mesh.faces.empty();
  topo.oriented = !mesh.faces.empty();
  for (const auto& [e, cnt] : undirected) {
    if (cnt != 2) {
      topo.watertight = false;
      if (cnt == 1) ++topo.boundary_edges;
    }
  }
  for (const auto& [e, cnt] : directed)
    if (cnt != 1) topo.oriented = false;
  topo.euler_characteristic = static_cast<int64_t>(mesh.vertices.size()) -
                              static_cast<int64_t>(undirected.size()) +
                              static_cast<int64_t>(mesh.faces.size());
  return topo;
}

namespace {

// 2D cell edges: 0 bottom, 1 right, 2 top, 3 left. Key identifies the
// global grid edge for endpoint welding.
uint64_t ms_edge_key(int64_t n, int64_t x, int64_t y, int e) {
  int64_t ax = x, ay = y;
  int axis = 0;
  switch (e) {
    case 0: axis = 0; break;
    case 1: ax = x + 1; axis = 1; break;
    case 2: ay = y + 1; axis = 0; break;
    case 3: axis = 1; break;
  }
  return (static_cast<uint64_t>(ay * n + ax) << 1) | static_cast<uint64_t>(axis);
}

}  // namespace

std::vector<Polyline> marching_squares(const VoxelGrid& grid, double level) {
  if (grid.d != 2) throw ShapeError("marching_squares: 2D grids only");
  const int64_t n = grid.n;

  // corner c of cell (x,y): 0:(x,y) 1:(x+1,y) 2:(x+1,y+1) 3:(x,y+1)
  const int corner_dx[4] = {0, 1, 1, 0};
  const int corner_dy[4] = {0, 0, 1, 1};
  // cell edge e connects corners (e, e+1 mod 4)
  std::unordered_map<uint64_t, std::array<double, 2>> point_of_edge;
  std::vector<std::array<uint64_t, 2>> segments;

  auto edge_point = [&](int64_t x, int64_t y, int e) -> uint64_t {
    const uint64_t key = ms_edge_key(n, x, y, e);
    if (point_of_edge.count(key)) return key;
    const int ca = e, cb = (e + 1) % 4;
    const int64_t xa = x + corner_dx[ca], ya = y + corner_dy[ca];
    const int64_t xb = x + corner_dx[cb], yb = y + corner_dy[cb];
    const double va = grid.at2(xa, ya), vb = grid.at2(xb, yb);
    double t = (level - va) / (vb - va);
    t = std::clamp(t, 0.0, 1.0);
    point_of_edge[key] = {grid.coord(xa) + (grid.coord(xb) - grid.coord(xa)) * t,
                          grid.coord(ya) + (grid.coord(yb) - grid.coord(ya)) * t};
    return key;
  };
  auto emit = [&](int64_t x, int64_t y, int e1, int e2) {
    segments.push_back({edge_point(x, y, e1), edge_point(x, y, e2)});
  };

  for (int64_t y = 0; y + 1 < n; ++y)
    for (int64_t x = 0; x + 1 < n; ++x) {
      int mask = 0;
      for (int c = 0; c < 4; ++c)
        if (grid.at2(x + corner_dx[c], y + corner_dy[c]) >= level) mask |= 1 << c;
      switch (mask) {
        case 0:
        case 15: break;
        case 1: emit(x, y, 3, 0); break;
        case 2: emit(x, y, 0, 1); break;
        case 3: emit(x, y, 3, 1); break;
        case 4: emit(x, y, 1, 2); break;
        case 6: emit(x, y, 0, 2); break;
        case 7: emit(x, y, 3, 2); break;
        case 8: emit(x, y, 2, 3); break;
        case 9: emit(x, y, 0, 2); break;
        case 11: emit(x, y, 1, 2); break;
        case 12: emit(x, y, 3, 1); break;
        case 13: emit(x, y, 0, 1); break;
        case 14: emit(x, y, 3, 0); break;
        case 5: {  // corners 0,2 inside
          const double center = 0.25 * (grid.at2(x, y) + grid.at2(x + 1, y) +
                                        grid.at2(x + 1, y + 1) + grid.at2(x, y + 1));
          if (center >= level) {  // inside diagonal connected: cut corners 1,3
            emit(x, y, 0, 1);
            emit(x, y, 2, 3);
          } else {  // cut corners 0,2
            emit(x, y, 3, 0);
            emit(x, y, 1, 2);
          }
          break;
        }
        case 10: {  // corners 1,3 inside
          const double center = 0.25 * (grid.at2(x, y) + grid.at2(x + 1, y) +
                                        grid.at2(x + 1, y + 1) + grid.at2(x, y + 1));
          if (center >= level) {  // cut corners 0,2
            emit(x, y, 3, 0);
            emit(x, y, 1, 2);
          } else {  // cut corners 1,3
            emit(x, y, 0, 1);
            emit(x, y, 2, 3);
          }
          break;
        }
      }
    }

  // Chain segments into polylines: walk open chains from degree-1 points
  // first, then the remaining closed loops.
  std::unordered_map<uint64_t, std::vector<size_t>> incident;
  for (size_t i = 0; i < segments.size(); ++i) {
    incident[segments[i][0]].push_back(i);
    incident[segments[i][1]].push_back(i);
  }
  std::vector<bool> used(segments.size(), false);
  std::vector<Polyline> out;

  auto walk = [&](size_t seg, uint64_t from) {
    Polyline pl;
    pl.points.push_back(point_of_edge[from]);
    uint64_t cur = from;
    size_t s = seg;
    while (true) {
      used[s] = true;
      const uint64_t nxt = segments[s][0] == cur ? segments[s][1] : segments[s][0];
      pl.points.push_back(point_of_edge[nxt]);
      cur = nxt;
      size_t next_seg = SIZE_MAX;
      for (size_t cand : incident[cur])
        if (!used[cand]) next_seg = cand;
      if (next_seg == SIZE_MAX) break;
      s = next_seg;
    }
    pl.closed = pl.points.size() > 2 && pl.points.front() == pl.points.back();
    if (pl.closed) pl.points.pop_back();
    return pl;
  };

  for (const auto& [key, segs] : incident) {
    if (segs.size() != 1) continue;
    if (!used[segs[0]]) out.push_back(walk(segs[0], key));
  }
  for (size_t i = 0; i < segments.size(); ++i)
    if (!used[i]) out.push_back(walk(i, segments[i][0]));

  // Deterministic order regardless of hash-map iteration.
  std::sort(out.begin(), out.end(), [](const Polyline& a, const Polyline& b) {
    return a.points < b.points;
  });
  return out;
}

double polygon_area(const std::vector<std::array<double, 2>>& loop) {
  double acc = 0.0;
  for (size_t i = 0; i < loop.size(); ++i) {
    const auto& a = loop[i];
    const auto& b = loop[(i + 1) % loop.size()];
    acc += a[0] * b[1] - b[0] * a[1];
  }
  return std::abs(acc) * 0.5;
}

void save_mesh(const Mesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  char buf[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.6f %.6f %.6f\n", v[0], v[1], v[2]);
    out << buf;
  }
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
  if (!out) throw DataError("write failed for " + path);
}

Mesh load_mesh(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  Mesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "v") {
      Vec3 v{};
      ls >> v[0] >> v[1] >> v[2];
      if (!ls) throw DataError(path + ":" + std::to_string(lineno) + ": malformed vertex line");
      mesh.vertices.push_back(v);
    } else if (kind == "f") {
      int64_t i = 0, j = 0, k = 0;
      ls >> i >> j >> k;
      if (!ls) throw DataError(path + ":" + std::to_string(lineno) + ": malformed face line");
      const int64_t nv = static_cast<int64_t>(mesh.vertices.size());
      for (int64_t idx : {i, j, k})
        if (idx < 1 || idx > nv)
          throw DataError(path + ":" + std::to_string(lineno) + ": face index " +
                          std::to_string(idx) + " out of range 1.." + std::to_string(nv));
      mesh.faces.push_back({static_cast<int32_t>(i - 1), static_cast<int32_t>(j - 1),
                            static_cast<int32_t>(k - 1)});
    } else {
      throw DataError(path + ":" + std::to_string(lineno) + ": unknown record '" + kind + "'");
    }
  }
  return mesh;
}

std::vector<Vec3> surface_sample(const Mesh& mesh, int64_t count, uint64_t seed) {
  if (mesh.faces.empty()) throw DataError("surface_sample: empty mesh");
  if (count < 1) throw ConfigError("surface_sample: count must be >= 1");
  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (size_t i = 0; i < mesh.faces.size(); ++i) {
    const auto& f = mesh.faces[i];
    const Vec3 e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
    const Vec3 e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
    total += 0.5 * norm(cross(e1, e2));
    cumulative[i] = total;
  }
  if (!(total > 0.0)) throw DataError("surface_sample: mesh has zero total area");

  Rng rng(seed);
  std::vector<Vec3> pts(count);
  for (int64_t s = 0; s < count; ++s) {
    const double r = rng.uniform01() * total;
    const size_t fi = static_cast<size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), r) - cumulative.begin());
    const auto& f = mesh.faces[std::min(fi, mesh.faces.size() - 1)];
    double u = rng.uniform01(), v = rng.uniform01();
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const Vec3& a = mesh.vertices[f[0]];
    pts[s] = a + (mesh.vertices[f[1]] - a) * u + (mesh.vertices[f[2]] - a) * v;
  }
  return pts;
}

}  // namespace treefield
