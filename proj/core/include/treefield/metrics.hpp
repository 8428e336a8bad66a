#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treefield/geometry.hpp"
#include "treefield/inr.hpp"

namespace treefield {

// Symmetric mean-of-squared-nearest-distances Chamfer distance, exact.
// Reported values multiply by 1e3 by convention (cd_e3).
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

// max over one set of the (unsquared) distance to the other, symmetrized.
double hausdorff(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

double compression_ratio(int64_t input_bytes, const InrCheckpoint& ckpt);

// 100 * |recon - gt|_1 / |gt|_1 over aligned sample vectors.
double relative_error(const std::vector<float>& recon,
                      const std::vector<float>& gt);

struct GenSetMetrics {
  double mmd = 0.0;          // mean over ref of min Chamfer to gen
  double cov = 0.0;          // fraction of ref covered as some gen's nearest
  double one_nna_pct = 0.0;  // leave-one-out 1-NN accuracy, percent
};

// Pairwise distance = Chamfer on the point sets. 1-NN ties break toward the
// lower index (self excluded); a nearest neighbour at exactly distance zero
// counts as half correct, which makes gen == ref score exactly 50%.
GenSetMetrics generative_set_metrics(const std::vector<std::vector<Vec3>>& gen,
                                     const std::vector<std::vector<Vec3>>& ref);

// Mean pairwise L2 between flat weight vectors, per group pair. Group keys
// are bifurcation counts; assumes all fits share one initialization.
struct WeightDistanceMatrix {
  std::vector<int> counts;              // sorted group keys
  std::vector<std::vector<double>> mean_l2;  // [K x K], symmetric
};
WeightDistanceMatrix weight_distance_matrix(
    const std::vector<std::pair<int, std::vector<InrCheckpoint>>>& groups);

// Weight-space MMD: mean over ref of the min per-coordinate mean squared
// distance to gen. Callers normalize the vectors first when comparing in
// normalized units.
double weight_space_mmd(const std::vector<std::vector<float>>& gen,
                        const std::vector<std::vector<float>>& ref);

struct Histogram {
  std::vector<double> bin_centers;
  std::vector<double> counts;
};
Histogram histogram(const std::vector<double>& values, double lo, double hi,
                    int bins);
// Overlap of the two mass-normalized histograms, in [0, 1].
double histogram_intersection(const Histogram& a, const Histogram& b);

// Ordered name -> value map with string provenance, written as CSV and as
// line-delimited JSON.
struct MetricsReport {
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::pair<std::string, std::string>> provenance;

  void set(const std::string& name, double value);
  double get(const std::string& name) const;  // throws if absent
  bool has(const std::string& name) const;
  void note(const std::string& key, const std::string& value);
};

void save_report_csv(const MetricsReport& report, const std::string& path);
void append_report_jsonl(const MetricsReport& report, const std::string& path);
MetricsReport load_report_csv(const std::string& path);
void save_histogram_csv(const Histogram& h, const std::string& path);

}  // namespace treefield
