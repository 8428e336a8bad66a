#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "treefield/diffusion.hpp"
#include "treefield/inr.hpp"
#include "treefield/manifest.hpp"

namespace treefield {

// Worker count for fan-out stages: `requested` (or hardware concurrency
// when <= 0), capped by the TREEFIELD_THREADS environment variable.
int resolve_worker_count(int requested);

// Every stage writes `<stage>.resolved.cfg` beside its primary outputs so
// runs are reproducible from artifacts alone. All stage outputs are
// deterministic functions of their options; seeds are split hierarchically
// (master -> stage -> item) so extending a corpus never reshuffles
// existing items.

struct GenDataOptions {
  std::string out_dir;
  int count = 16;
  int d = 3;
  int bif_min = 1;
  int bif_max = 4;
  double wiggle = 0.3;
  uint64_t seed = 1;
  // Recorded in the manifest for the downstream stages; d follows `d`.
  int arch_width = 128;
  int arch_blocks = 3;
};
// Writes tree files plus manifest.json; returns the manifest path.
std::string gen_data(const GenDataOptions& opt);

struct FitStageOptions {
  std::string manifest_path;
  int max_iters = 5000;
  double lr = 1e-3;
  int64_t batch = 4096;
  double tol = 0.0;
  double surface_fraction = 0.5;
  double band = 0.05;
  // One shared initialization for the whole corpus (weight-space protocol).
  bool shared_init = false;
  int threads = 0;
};
// Fits every item lacking a valid checkpoint, then rewrites the manifest.
void fit_stage(const FitStageOptions& opt);

struct ExtractOptions {
  std::string manifest_path;
  std::vector<int64_t> resolutions{64};
  std::string out_dir;  // empty = manifest directory
  double level = 0.5;
  bool write_grids = false;  // also store sampled VOX1 grids (3D)
};
// 3D checkpoints -> meshes per resolution; 2D -> grids + PGM previews.
void extract_stage(const ExtractOptions& opt);

struct TrainDdmOptions {
  std::string manifest_path;
  std::string out_path;  // empty = <manifest dir>/denoiser.ddm
  // train.seed == 0 derives the seed from the manifest's master seed.
  DiffusionTrainConfig train;
};
// Trains on all corpus checkpoints; writes the model plus a loss-curve CSV.
void train_ddm_stage(const TrainDdmOptions& opt);

struct SampleOptions {
  std::string model_path;
  std::string out_dir;
  int count = 8;
  int steps = 50;
  double eta = 0.0;
  uint64_t seed = 7;
};
// Writes sample_###.inr checkpoints drawn from the trained model.
void sample_stage(const SampleOptions& opt);

struct EvaluateOptions {
  std::string manifest_path;
  std::string samples_dir;  // empty = skip generative metrics/histograms
  std::string out_dir;
  int64_t mesh_res = 64;
  int64_t stats_res = 64;
  int64_t surface_samples = 8192;
  int histogram_bins = 12;
  bool table1 = true;
  bool fidelity = true;
  bool gen_metrics = true;
  bool histograms = true;
  uint64_t seed = 99;
};
// Writes CSV tables (parameter counts, per-tree fidelity, set metrics,
// vessel-statistic histograms) plus an aggregated summary report.
void evaluate_stage(const EvaluateOptions& opt);

struct SegmentOptions {
  std::string out_dir;
  int64_t image_res = 128;
  int bifurcations = 2;
  double wiggle = 0.25;
  uint64_t seed = 5;
  int arch_width = 64;
  int arch_blocks = 2;
  int max_iters = 3000;
  int64_t batch = 4096;
  double lr = 1e-3;
  int snapshot_every = 500;
  float tau = 0.5f;
};
// Runs the synthetic 2D vessel fixture end to end: image + ground truth,
// intensity fit with mask snapshots, final mask, and a metrics report.
void segment_stage(const SegmentOptions& opt);

struct ReportOptions {
  std::string run_dir;
  std::string out_path;  // empty = <run_dir>/summary.csv
};
// Aggregates every metrics-report CSV under run_dir into one summary.
void report_stage(const ReportOptions& opt);

}  // namespace treefield
