#include "treefield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "treefield/errors.hpp"
#include "treefield/kdtree.hpp"

namespace treefield {

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw ShapeError("chamfer: empty point set");
  const KdTree tree_b(b);
  double sum_ab = 0.0;
  for (const Vec3& p : a) sum_ab += tree_b.nearest(p).second;
  const KdTree tree_a(a);
  double sum_ba = 0.0;
  for (const Vec3& p : b) sum_ba += tree_a.nearest(p).second;
  return sum_ab / static_cast<double>(a.size()) +
         sum_ba / static_cast<double>(b.size());
}

double hausdorff(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw ShapeError("hausdorff: empty point set");
  const KdTree tree_b(b);
  double worst = 0.0;
  for (const Vec3& p : a) worst = std::max(worst, tree_b.nearest(p).second);
  const KdTree tree_a(a);
  for (const Vec3& p : b) worst = std::max(worst, tree_a.nearest(p).second);
  return std::sqrt(worst);
}

double compression_ratio(int64_t input_bytes, const InrCheckpoint& ckpt) {
  if (input_bytes <= 0)
    throw ShapeError("compression_ratio: input size must be positive");
  return static_cast<double>(input_bytes) /
         static_cast<double>(ckpt.arch.checkpoint_size_bytes());
}

double relative_error(const std::vector<float>& recon,
                      const std::vector<float>& gt) {
  if (recon.size() != gt.size())
    throw ShapeError("relative_error: length mismatch");
  if (gt.empty()) throw ShapeError("relative_error: empty input");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < gt.size(); ++i) {
    num += std::fabs(static_cast<double>(recon[i]) - gt[i]);
    den += std::fabs(static_cast<double>(gt[i]));
  }
  if (den == 0.0) throw DataError("relative_error: ground truth is all zero");
  return 100.0 * num / den;
}

GenSetMetrics generative_set_metrics(const std::vector<std::vector<Vec3>>& gen,
                                     const std::vector<std::vector<Vec3>>& ref) {
  if (gen.empty() || ref.empty())
    throw ShapeError("generative_set_metrics: empty set list");
  const int64_t G = static_cast<int64_t>(gen.size());
  const int64_t R = static_cast<int64_t>(ref.size());

  std::vector<std::vector<double>> cross(G, std::vector<double>(R));
  for (int64_t g = 0; g < G; ++g)
    for (int64_t r = 0; r < R; ++r) cross[g][r] = chamfer(gen[g], ref[r]);

  GenSetMetrics out;

  double mmd = 0.0;
  for (int64_t r = 0; r < R; ++r) {
    double best = std::numeric_limits<double>::infinity();
    for (int64_t g = 0; g < G; ++g) best = std::min(best, cross[g][r]);
    mmd += best;
  }
  out.mmd = mmd / static_cast<double>(R);

  std::vector<char> covered(R, 0);
  for (int64_t g = 0; g < G; ++g) {
    int64_t arg = 0;
    for (int64_t r = 1; r < R; ++r)
      if (cross[g][r] < cross[g][arg]) arg = r;
    covered[arg] = 1;
  }
  int64_t ncov = 0;
  for (char c : covered) ncov += c;
  out.cov = static_cast<double>(ncov) / static_cast<double>(R);

  // Leave-one-out 1-NN over the union; distances needed within each side too.
  const int64_t n = G + R;
  auto dist = [&](int64_t i, int64_t j) {
    const std::vector<Vec3>& a = i < G ? gen[i] : ref[i - G];
    const std::vector<Vec3>& b = j < G ? gen[j] : ref[j - G];
    return chamfer(a, b);
  };
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) {
      const double v = i < G && j >= G ? cross[i][j - G] : dist(i, j);
      d[i][j] = v;
      d[j][i] = v;
    }
  double credit = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t nn = -1;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (nn < 0 || d[i][j] < d[i][nn]) nn = j;
    }
    if (d[i][nn] == 0.0)
      credit += 0.5;  // duplicate: indistinguishable, half credit
    else if ((i < G) == (nn < G))
      credit += 1.0;
  }
  out.one_nna_pct = 100.0 * credit / static_cast<double>(n);
  return out;
}

WeightDistanceMatrix weight_distance_matrix(
    const std::vector<std::pair<int, std::vector<InrCheckpoint>>>& groups) {
  if (groups.empty()) throw ShapeError("weight_distance_matrix: no groups");
  const InrArch arch = groups.front().second.front().arch;
  for (const auto& [count, list] : groups) {
    if (list.empty())
      throw DataError("weight_distance_matrix: empty group " +
                      std::to_string(count));
    for (const InrCheckpoint& c : list)
      if (!(c.arch == arch))
        throw DataError("weight_distance_matrix: mixed architectures");
  }
  std::vector<std::pair<int, std::vector<InrCheckpoint>>> sorted(groups);
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  auto l2 = [](const std::vector<float>& a, const std::vector<float>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
      const double diff = static_cast<double>(a[i]) - b[i];
      s += diff * diff;
    }
    return std::sqrt(s);
  };

  const int64_t K = static_cast<int64_t>(sorted.size());
  WeightDistanceMatrix out;
  out.counts.reserve(K);
  for (const auto& [count, list] : sorted) out.counts.push_back(count);
  out.mean_l2.assign(K, std::vector<double>(K, 0.0));
  for (int64_t i = 0; i < K; ++i)
    for (int64_t j = i; j < K; ++j) {
      const auto& gi = sorted[i].second;
      const auto& gj = sorted[j].second;
      double sum = 0.0;
      int64_t pairs = 0;
      if (i == j) {
        for (size_t a = 0; a < gi.size(); ++a)
          for (size_t b = a + 1; b < gi.size(); ++b, ++pairs)
            sum += l2(gi[a].theta, gi[b].theta);
      } else {
        for (const InrCheckpoint& a : gi)
          for (const InrCheckpoint& b : gj) {
            sum += l2(a.theta, b.theta);
            ++pairs;
          }
      }
      const double mean = pairs > 0 ? sum / static_cast<double>(pairs) : 0.0;
      out.mean_l2[i][j] = mean;
      out.mean_l2[j][i] = mean;
    }
  return out;
}

double weight_space_mmd(const std::vector<std::vector<float>>& gen,
                        const std::vector<std::vector<float>>& ref) {
  if (gen.empty() || ref.empty())
    throw ShapeError("weight_space_mmd: empty set");
  const size_t P = ref.front().size();
  for (const auto& v : gen)
    if (v.size() != P) throw ShapeError("weight_space_mmd: length mismatch");
  for (const auto& v : ref)
    if (v.size() != P) throw ShapeError("weight_space_mmd: length mismatch");
  double total = 0.0;
  for (const auto& r : ref) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& g : gen) {
      double s = 0.0;
      for (size_t i = 0; i < P; ++i) {
        const double diff = static_cast<double>(g[i]) - r[i];
        s += diff * diff;
      }
      best = std::min(best, s / static_cast<double>(P));
    }
    total += best;
  }
  return total / static_cast<double>(ref.size());
}

Histogram histogram(const std::vector<double>& values, double lo, double hi,
                    int bins) {
  if (bins < 1) throw ShapeError("histogram: need at least one bin");
  if (!(hi > lo)) throw ShapeError("histogram: empty range");
  Histogram h;
  h.bin_centers.resize(bins);
  h.counts.assign(bins, 0.0);
  const double width = (hi - lo) / bins;
  for (int i = 0; i < bins; ++i) h.bin_centers[i] = lo + (i + 0.5) * width;
  for (double v : values) {
    if (v < lo || v > hi) continue;
    int idx = static_cast<int>((v - lo) / width);
    idx = std::min(idx, bins - 1);  // v == hi lands in the last bin
    h.counts[idx] += 1.0;
  }
  return h;
}

double histogram_intersection(const Histogram& a, const Histogram& b) {
  if (a.counts.size() != b.counts.size() || a.bin_centers != b.bin_centers)
    throw ShapeError("histogram_intersection: bins do not match");
  double ta = 0.0, tb = 0.0;
  for (double v : a.counts) ta += v;
  for (double v : b.counts) tb += v;
  if (ta == 0.0 || tb == 0.0)
    throw DataError("histogram_intersection: empty histogram");
  double overlap = 0.0;
  for (size_t i = 0; i < a.counts.size(); ++i)
    overlap += std::min(a.counts[i] / ta, b.counts[i] / tb);
  return overlap;
}

void MetricsReport::set(const std::string& name, double value) {
  for (auto& [n, v] : values)
    if (n == name) {
      v = value;
      return;
    }
  values.emplace_back(name, value);
}

double MetricsReport::get(const std::string& name) const {
  for (const auto& [n, v] : values)
    if (n == name) return v;
  throw DataError("metrics report: no entry named " + name);
}

bool MetricsReport::has(const std::string& name) const {
  for (const auto& [n, v] : values)
    if (n == name) return true;
  return false;
}

void MetricsReport::note(const std::string& key, const std::string& value) {
  for (auto& [k, v] : provenance)
    if (k == key) {
      v = value;
      return;
    }
  provenance.emplace_back(key, value);
}

namespace {
std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}
}  // namespace

void save_report_csv(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "name,value\n";
  out.precision(17);
  for (const auto& [name, value] : report.values)
    out << csv_quote(name) << ',' << value << '\n';
  for (const auto& [key, value] : report.provenance)
    out << csv_quote("# " + key) << ',' << csv_quote(value) << '\n';
  if (!out) throw DataError("write failed for " + path);
}

void append_report_jsonl(const MetricsReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot open " + path + " for writing");
  nlohmann::json j;
  for (const auto& [name, value] : report.values) j["values"][name] = value;
  for (const auto& [key, value] : report.provenance)
    j["provenance"][key] = value;
  out << j.dump() << '\n';
  if (!out) throw DataError("write failed for " + path);
}

MetricsReport load_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  MetricsReport report;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "name,value")
        throw DataError(path + ": unexpected CSV header");
      continue;
    }
    if (line.empty()) continue;
    const size_t comma = line.rfind(',');
    if (comma == std::string::npos)
      throw DataError(path + ":" + std::to_string(lineno) + ": not a CSV row");
    const std::string name = line.substr(0, comma);
    const std::string value = line.substr(comma + 1);
    if (name.rfind("\"# ", 0) == 0 || name.rfind("# ", 0) == 0) continue;
    try {
      report.values.emplace_back(name, std::stod(value));
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": bad numeric value '" + value + "'");
    }
  }
  return report;
}

void save_histogram_csv(const Histogram& h, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << "bin_center,count\n";
  out.precision(17);
  for (size_t i = 0; i < h.bin_centers.size(); ++i)
    out << h.bin_centers[i] << ',' << h.counts[i] << '\n';
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace treefield
