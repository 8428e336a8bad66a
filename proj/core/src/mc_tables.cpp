#include "treefield/mc_tables.hpp"

namespace treefield::mc {

const int kCornerPos[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                              {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};

const int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                 {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

const EdgeAnchor kEdgeAnchor[12] = {
    {0, 0, 0, 0}, {1, 0, 0, 1}, {0, 1, 0, 0}, {0, 0, 0, 1},
    {0, 0, 1, 0}, {1, 0, 1, 1}, {0, 1, 1, 0}, {0, 0, 1, 1},
    {0, 0, 0, 2}, {1, 0, 0, 2}, {1, 1, 0, 2}, {0, 1, 0, 2}};

namespace {

// Cube faces as corner cycles; consecutive corners are joined by cube edges.
const int kFaces[6][4] = {
    {0, 1, 2, 3},  // z = 0
    {4, 5, 6, 7},  // z = 1
    {0, 1, 5, 4},  // y = 0
    {3, 2, 6, 7},  // y = 1
    {0, 3, 7, 4},  // x = 0
    {1, 2, 6, 5},  // x = 1
};

int edge_between(int a, int b) {
  for (int e = 0; e < 12; ++e) {
    const int u = kEdgeCorners[e][0], v = kEdgeCorners[e][1];
    if ((u == a && v == b) || (u == b && v == a)) return e;
  }
  return -1;
}

struct Vec {
  double x, y, z;
};
Vec operator-(const Vec& a, const Vec& b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec operator+(const Vec& a, const Vec& b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec cross(const Vec& a, const Vec& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
double dot(const Vec& a, const Vec& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec corner_vec(int c) {
  return {static_cast<double>(kCornerPos[c][0]), static_cast<double>(kCornerPos[c][1]),
          static_cast<double>(kCornerPos[c][2])};
}

Tables build() {
  Tables t;
  for (int mask = 0; mask < 256; ++mask) {
    auto inside = [&](int corner) { return (mask >> corner) & 1; };

    bool crossed[12];
    uint16_t emask = 0;
    for (int e = 0; e < 12; ++e) {
      crossed[e] = inside(kEdgeCorners[e][0]) != inside(kEdgeCorners[e][1]);
      if (crossed[e]) emask |= static_cast<uint16_t>(1u << e);
    }
    t.edge_mask[mask] = emask;
    if (emask == 0) continue;

    // Each crossed edge gets exactly one partner per incident face; the
    // resulting 2-regular graph decomposes into the surface polygons.
    std::array<std::array<int, 2>, 12> partner;
    std::array<int, 12> partner_count{};
    partner_count.fill(0);
    auto pair_edges = [&](int a, int b) {
      partner[a][partner_count[a]++] = b;
      partner[b][partner_count[b]++] = a;
    };

    for (const auto& face : kFaces) {
      int fe[4];
      bool fc[4];
      int ncross = 0;
      for (int j = 0; j < 4; ++j) {
        fe[j] = edge_between(face[j], face[(j + 1) % 4]);
        fc[j] = crossed[fe[j]];
        if (fc[j]) ++ncross;
      }
      if (ncross == 2) {
        int first = -1;
        for (int j = 0; j < 4; ++j)
          if (fc[j]) {
            if (first < 0)
              first = fe[j];
            else
              pair_edges(first, fe[j]);
          }
      } else if (ncross == 4) {
        // Ambiguous: inside corners sit on a diagonal. Cut each inside
        // corner off by pairing its two adjacent face edges.
        for (int j = 0; j < 4; ++j) {
          if (!inside(face[j])) continue;
          pair_edges(fe[(j + 3) % 4], fe[j]);
        }
      }
    }

    bool visited[12] = {};
    for (int start = 0; start < 12; ++start) {
      if (!crossed[start] || visited[start]) continue;
      std::vector<int> poly;
      int prev = -1, cur = start;
      while (true) {
        poly.push_back(cur);
        visited[cur] = true;
        const int nxt = partner[cur][0] == prev ? partner[cur][1] : partner[cur][0];
        prev = cur;
        cur = nxt;
        if (cur == start) break;
      }

      // Orient so the polygon normal points from inside to outside.
      Vec nrm{0, 0, 0};
      Vec outward{0, 0, 0};
      std::vector<Vec> mid(poly.size());
      for (size_t i = 0; i < poly.size(); ++i) {
        const int e = poly[i];
        const Vec a = corner_vec(kEdgeCorners[e][0]);
        const Vec b = corner_vec(kEdgeCorners[e][1]);
        mid[i] = {(a.x + b.x) * 0.5, (a.y + b.y) * 0.5, (a.z + b.z) * 0.5};
        const bool a_in = inside(kEdgeCorners[e][0]);
        outward = outward + (a_in ? b - a : a - b);
      }
      for (size_t i = 0; i < poly.size(); ++i)
        nrm = nrm + cross(mid[i], mid[(i + 1) % poly.size()]);
      if (dot(nrm, outward) < 0.0) {
        for (size_t i = 0, j = poly.size() - 1; i < j; ++i, --j) std::swap(poly[i], poly[j]);
      }

      std::vector<int8_t> out(poly.size());
      for (size_t i = 0; i < poly.size(); ++i) out[i] = static_cast<int8_t>(poly[i]);
      t.polygons[mask].push_back(std::move(out));
    }
  }
  return t;
}

}  // namespace

const Tables& tables() {
  static const Tables t = build();
  return t;
}

}  // namespace treefield::mc
