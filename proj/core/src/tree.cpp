#include "treefield/tree.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "treefield/rng.hpp"

namespace treefield {

namespace {

constexpr double kRootRadius = 0.08;
constexpr double kTaper = 0.8;
constexpr int kSegmentsPerBranch = 6;
constexpr int kPlacementAttempts = 64;

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Unit vector perpendicular to unit u. In 2D (z = 0 everywhere) this is the
// left normal; in 3D the azimuth picks a direction in the perpendicular plane.
Vec3 perp_dir(const Vec3& u, int d, double azimuth) {
  if (d == 2) return {-u[1], u[0], 0.0};
  const Vec3 ref = std::abs(u[0]) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
  const Vec3 e1 = normalized(cross(u, ref));
  const Vec3 e2 = cross(u, e1);
  return e1 * std::cos(azimuth) + e2 * std::sin(azimuth);
}

struct BranchTip {
  int32_t node = -1;
  Vec3 dir{0.0, 1.0, 0.0};
  double radius = 0.0;
};

// Appends a 6-segment polyline starting at node `from`, heading `u`, bent
// sideways by a two-harmonic bump that vanishes at both endpoints (so
// wiggle = 0 keeps branches exactly straight).
BranchTip grow_branch(TreeGraph& t, Rng& rng, int32_t from, const Vec3& u, double radius,
                      double wiggle, int d) {
  const Vec3 start = t.nodes[from].pos;
  const double length = 4.5 * radius;
  const double azimuth = d == 3 ? rng.uniform(0.0, 2.0 * kPi) : (rng.uniform01() < 0.5 ? 0.0 : kPi);
  const Vec3 w = perp_dir(u, d, azimuth);
  const double a1 = rng.uniform(0.5, 1.0);
  const double a2 = rng.uniform(-0.5, 0.5);

  int32_t prev = from;
  Vec3 prev_pos = start;
  Vec3 tip_dir = u;
  for (int i = 1; i <= kSegmentsPerBranch; ++i) {
    const double f = static_cast<double>(i) / kSegmentsPerBranch;
    const double bump = a1 * std::sin(kPi * f) + a2 * std::sin(2.0 * kPi * f);
    const Vec3 pos = start + u * (length * f) + w * (wiggle * 0.12 * length * bump);
    t.nodes.push_back({pos, radius});
    const int32_t cur = static_cast<int32_t>(t.nodes.size() - 1);
    t.edges.emplace_back(prev, cur);
    tip_dir = normalized(pos - prev_pos);
    prev_pos = pos;
    prev = cur;
  }
  return {prev, tip_dir, radius};
}

TreeGraph try_generate(Rng& rng, int d, int target_bifurcations, double wiggle) {
  TreeGraph t;
  t.d = d;
  t.root = 0;

  Vec3 start{rng.uniform(-0.08, 0.08), -0.72, 0.0};
  if (d == 3) start[2] = rng.uniform(-0.08, 0.08);
  const double tilt = rng.uniform(0.0, 8.0 * kPi / 180.0);
  const double tilt_az = rng.uniform(0.0, 2.0 * kPi);
  Vec3 up{0.0, 1.0, 0.0};
  Vec3 dir = normalized(up * std::cos(tilt) + perp_dir(up, d, tilt_az) * std::sin(tilt));

  t.nodes.push_back({start, kRootRadius});
  std::vector<BranchTip> leaves;
  leaves.push_back(grow_branch(t, rng, 0, dir, kRootRadius, wiggle, d));

  for (int s = 0; s < target_bifurcations; ++s) {
    size_t pick = 0;
    for (size_t i = 1; i < leaves.size(); ++i)
      if (leaves[i].radius > leaves[pick].radius) pick = i;
    const BranchTip parent = leaves[pick];
    leaves.erase(leaves.begin() + static_cast<std::ptrdiff_t>(pick));

    const double plane_az = d == 3 ? rng.uniform(0.0, 2.0 * kPi) : 0.0;
    const Vec3 w = perp_dir(parent.dir, d, plane_az);
    const double child_r = kTaper * parent.radius;
    for (double side : {1.0, -1.0}) {
      const double ang = rng.uniform(20.0, 60.0) * kPi / 180.0;
      const Vec3 cdir = normalized(parent.dir * std::cos(ang) + w * (side * std::sin(ang)));
      leaves.push_back(grow_branch(t, rng, parent.node, cdir, child_r, wiggle, d));
    }
  }
  return t;
}

bool inside_domain(const TreeGraph& t) {
  const double margin = t.max_radius();
  for (const TreeNode& n : t.nodes)
    for (int k = 0; k < t.d; ++k)
      if (std::abs(n.pos[k]) > 1.0 - margin) return false;
  return true;
}

}  // namespace

double TreeGraph::max_radius() const {
  double r = 0.0;
  for (const TreeNode& n : nodes) r = std::max(r, n.radius);
  return r;
}

void TreeGraph::validate() const {
  if (d != 2 && d != 3) throw DataError("tree: dimension must be 2 or 3");
  if (nodes.empty()) throw DataError("tree: no nodes");
  if (root < 0 || root >= static_cast<int32_t>(nodes.size()))
    throw DataError("tree: root index out of range");
  for (const TreeNode& n : nodes) {
    if (!(n.radius > 0.0)) throw DataError("tree: node radius must be positive");
    if (d == 2 && n.pos[2] != 0.0) throw DataError("tree: 2D node with nonzero z");
  }

  std::vector<int32_t> parent(nodes.size(), -1);
  std::vector<std::vector<int32_t>> children(nodes.size());
  for (const auto& [p, c] : edges) {
    if (p < 0 || c < 0 || p >= static_cast<int32_t>(nodes.size()) ||
        c >= static_cast<int32_t>(nodes.size()))
      throw DataError("tree: edge index out of range");
    if (parent[c] != -1) throw DataError("tree: node " + std::to_string(c) + " has two parents");
    parent[c] = p;
    children[p].push_back(c);
  }
  if (parent[root] != -1) throw DataError("tree: root has a parent");
  for (size_t i = 0; i < nodes.size(); ++i)
    if (static_cast<int32_t>(i) != root && parent[i] == -1)
      throw DataError("tree: node " + std::to_string(i) + " unreachable (no parent)");

  std::vector<int32_t> stack{root};
  size_t seen = 0;
  while (!stack.empty()) {
    const int32_t v = stack.back();
    stack.pop_back();
    ++seen;
    for (int32_t c : children[v]) stack.push_back(c);
  }
  if (seen != nodes.size()) throw DataError("tree: graph is not a single connected tree");

  for (const auto& [p, c] : edges)
    if (nodes[c].radius > nodes[p].radius + 1e-12)
      throw DataError("tree: child radius exceeds parent radius on edge " + std::to_string(p) +
                      "->" + std::to_string(c));

  const double margin = max_radius();
  for (const TreeNode& n : nodes)
    for (int k = 0; k < d; ++k)
      if (std::abs(n.pos[k]) > 1.0 - margin + 1e-12)
        throw DataError("tree: node outside domain margin");
}

double capsule_sd(const Vec3& p, const Vec3& a, const Vec3& b, double ra, double rb) {
  const Vec3 ba = b - a;
  const double l2 = dot(ba, ba);
  const double rr = ra - rb;
  const double a2 = l2 - rr * rr;
  if (l2 < 1e-24 || a2 <= 0.0) {
    // One end sphere contains the whole capsule; the union's distance is
    // the smaller of the two sphere distances.
    const Vec3 pa = p - a;
    const Vec3 pb = p - b;
    return std::min(norm(pa) - ra, norm(pb) - rb);
  }
  const double il2 = 1.0 / l2;
  const Vec3 pa = p - a;
  const double y = dot(pa, ba);
  const double z = y - l2;
  const Vec3 q = pa * l2 - ba * y;
  const double x2 = dot(q, q);
  const double y2 = y * y * l2;
  const double z2 = z * z * l2;
  const double k = sgn(rr) * rr * rr * x2;
  if (sgn(z) * a2 * z2 > k) return std::sqrt(x2 + z2) * il2 - rb;
  if (sgn(y) * a2 * y2 < k) return std::sqrt(x2 + y2) * il2 - ra;
  return (std::sqrt(x2 * a2 * il2) + y * rr) * il2 - ra;
}

double signed_distance(const TreeGraph& tree, const Vec3& x) {
  if (tree.edges.empty()) {
    const TreeNode& n = tree.nodes.at(tree.root);
    return norm(x - n.pos) - n.radius;
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [p, c] : tree.edges) {
    const TreeNode& np = tree.nodes[p];
    const TreeNode& nc = tree.nodes[c];
    best = std::min(best, capsule_sd(x, np.pos, nc.pos, np.radius, nc.radius));
  }
  return best;
}

TreeGraph generate_tree(uint64_t seed, int d, int target_bifurcations, double wiggle) {
  if (d != 2 && d != 3) throw ConfigError("generate_tree: d must be 2 or 3");
  if (target_bifurcations < 0) throw ConfigError("generate_tree: negative bifurcation count");
  if (wiggle < 0.0 || wiggle > 1.0) throw ConfigError("generate_tree: wiggle must be in [0,1]");

  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(attempt)));
    TreeGraph t = try_generate(rng, d, target_bifurcations, wiggle);
    if (inside_domain(t)) {
      t.validate();
      return t;
    }
  }
  throw DataError("generate_tree: could not place tree inside domain after " +
                  std::to_string(kPlacementAttempts) + " attempts (seed " + std::to_string(seed) +
                  ", " + std::to_string(target_bifurcations) + " bifurcations)");
}

TreeStats tree_stats(const TreeGraph& tree) {
  std::vector<std::vector<int32_t>> children(tree.nodes.size());
  for (const auto& [p, c] : tree.edges) children[p].push_back(c);

  TreeStats st;
  double radius_sum = 0.0;
  for (const TreeNode& n : tree.nodes) radius_sum += n.radius;
  st.average_radius = radius_sum / static_cast<double>(tree.nodes.size());

  for (const auto& [p, c] : tree.edges)
    st.total_length += norm(tree.nodes[c].pos - tree.nodes[p].pos);

  for (size_t i = 0; i < tree.nodes.size(); ++i)
    if (children[i].size() >= 2) ++st.bifurcation_count;

  // A branch runs from a topology node (root or bifurcation) through
  // degree-1 chain nodes to the next topology node or leaf.
  for (size_t i = 0; i < tree.nodes.size(); ++i) {
    const bool is_topo = static_cast<int32_t>(i) == tree.root || children[i].size() >= 2;
    if (!is_topo) continue;
    for (int32_t child : children[i]) {
      double arc = norm(tree.nodes[child].pos - tree.nodes[i].pos);
      int32_t cur = child;
      while (children[cur].size() == 1) {
        const int32_t nxt = children[cur][0];
        arc += norm(tree.nodes[nxt].pos - tree.nodes[cur].pos);
        cur = nxt;
      }
      const double chord = norm(tree.nodes[cur].pos - tree.nodes[i].pos);
      st.tortuosity_per_branch.push_back(chord > 1e-12 ? arc / chord : 1.0);
    }
  }
  return st;
}

VoxelGrid voxelize(const TreeGraph& tree, int64_t n) {
  if (n < 8) throw ConfigError("voxelize: resolution must be >= 8");
  VoxelGrid g(tree.d, n);
  const double h = g.spacing();

  // Index range of cell centers within [lo, hi], padded one cell.
  auto range = [&](double lo, double hi, int64_t& ilo, int64_t& ihi) {
    ilo = static_cast<int64_t>(std::ceil((lo + 1.0) / h - 0.5 - 1e-9)) - 1;
    ihi = static_cast<int64_t>(std::floor((hi + 1.0) / h - 0.5 + 1e-9)) + 1;
    ilo = std::max<int64_t>(0, ilo);
    ihi = std::min<int64_t>(n - 1, ihi);
  };

  for (const auto& [pi, ci] : tree.edges) {
    const TreeNode& a = tree.nodes[pi];
    const TreeNode& b = tree.nodes[ci];
    const double pad = std::max(a.radius, b.radius);
    int64_t lo[3] = {0, 0, 0}, hi[3] = {0, 0, 0};
    for (int k = 0; k < tree.d; ++k)
      range(std::min(a.pos[k], b.pos[k]) - pad, std::max(a.pos[k], b.pos[k]) + pad, lo[k], hi[k]);

    if (tree.d == 2) {
      for (int64_t y = lo[1]; y <= hi[1]; ++y)
        for (int64_t x = lo[0]; x <= hi[0]; ++x) {
          if (g.at2(x, y) != 0.0f) continue;
          const Vec3 p{g.coord(x), g.coord(y), 0.0};
          if (capsule_sd(p, a.pos, b.pos, a.radius, b.radius) <= 0.0) g.at2(x, y) = 1.0f;
        }
    } else {
      for (int64_t z = lo[2]; z <= hi[2]; ++z)
        for (int64_t y = lo[1]; y <= hi[1]; ++y)
          for (int64_t x = lo[0]; x <= hi[0]; ++x) {
            if (g.at3(x, y, z) != 0.0f) continue;
            const Vec3 p{g.coord(x), g.coord(y), g.coord(z)};
            if (capsule_sd(p, a.pos, b.pos, a.radius, b.radius) <= 0.0) g.at3(x, y, z) = 1.0f;
          }
    }
  }
  return g;
}

void save_tree(const TreeGraph& tree, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "TREEGRAPH v1 d=" << tree.d << "\n";
  out << std::setprecision(17);
  for (size_t i = 0; i < tree.nodes.size(); ++i) {
    const TreeNode& n = tree.nodes[i];
    out << "node " << i << " " << n.pos[0] << " " << n.pos[1];
    if (tree.d == 3) out << " " << n.pos[2];
    out << " " << n.radius << "\n";
  }
  for (const auto& [p, c] : tree.edges) out << "edge " << p << " " << c << "\n";
  if (!out) throw DataError("write failed for " + path);
}

TreeGraph load_tree(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  auto fail = [&](int lineno, const std::string& what) {
    throw DataError(path + ":" + std::to_string(lineno) + ": " + what);
  };

  std::string line;
  int lineno = 0;
  TreeGraph t;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (!header_seen) {
      std::string magic, version, dim;
      ls >> magic >> version >> dim;
      if (magic != "TREEGRAPH" || version != "v1" || (dim != "d=2" && dim != "d=3"))
        fail(lineno, "expected header 'TREEGRAPH v1 d=<2|3>'");
      t.d = dim == "d=2" ? 2 : 3;
      header_seen = true;
      continue;
    }
    std::string kind;
    ls >> kind;
    if (kind == "node") {
      int64_t idx = -1;
      TreeNode n;
      ls >> idx >> n.pos[0] >> n.pos[1];
      if (t.d == 3) ls >> n.pos[2];
      ls >> n.radius;
      if (!ls) fail(lineno, "malformed node line");
      if (idx != static_cast<int64_t>(t.nodes.size()))
        fail(lineno, "node indices must be consecutive from 0");
      t.nodes.push_back(n);
    } else if (kind == "edge") {
      int64_t p = -1, c = -1;
      ls >> p >> c;
      if (!ls) fail(lineno, "malformed edge line");
      t.edges.emplace_back(static_cast<int32_t>(p), static_cast<int32_t>(c));
    } else {
      fail(lineno, "unknown record '" + kind + "'");
    }
  }
  if (!header_seen) throw DataError(path + ": empty tree file");

  // Root is the unique node that never appears as a child.
  std::vector<bool> is_child(t.nodes.size(), false);
  for (const auto& [p, c] : t.edges)
    if (c >= 0 && c < static_cast<int32_t>(t.nodes.size())) is_child[c] = true;
  t.root = -1;
  for (size_t i = 0; i < t.nodes.size(); ++i)
    if (!is_child[i]) {
      if (t.root != -1) throw DataError(path + ": multiple root candidates");
      t.root = static_cast<int32_t>(i);
    }
  if (t.root == -1) throw DataError(path + ": no root (cycle?)");
  t.validate();
  return t;
}

}  // namespace treefield
