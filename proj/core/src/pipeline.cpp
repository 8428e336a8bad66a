#include "treefield/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "treefield/config.hpp"
#include "treefield/errors.hpp"
#include "treefield/isoextract.hpp"
#include "treefield/metrics.hpp"
#include "treefield/rng.hpp"
#include "treefield/segmentation.hpp"
#include "treefield/skeleton.hpp"

namespace treefield {

namespace fs = std::filesystem;

int resolve_worker_count(int requested) {
  int workers = requested > 0
                    ? requested
                    : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  if (const char* env = std::getenv("TREEFIELD_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap < 1) throw std::invalid_argument(env);
      workers = std::min(workers, cap);
    } catch (const std::exception&) {
      throw ConfigError(std::string("TREEFIELD_THREADS=\"") + env +
                        "\" is not a positive integer");
    }
  }
  return workers;
}

namespace {

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("output directory must not be empty");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

std::string item_name(const char* prefix, int64_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03lld%s", prefix,
                static_cast<long long>(i), ext);
  return buf;
}

std::string replace_ext(const std::string& name, const std::string& ext) {
  const size_t dot = name.rfind('.');
  return (dot == std::string::npos ? name : name.substr(0, dot)) + ext;
}

// Runs fn(0..count-1) on `workers` threads; items are claimed atomically so
// the assignment of items to threads never affects outputs. The first
// exception wins and stops the pool.
void run_parallel(int64_t count, int workers,
                  const std::function<void(int64_t)>& fn) {
  workers = static_cast<int>(std::min<int64_t>(workers, count));
  if (workers <= 1) {
    for (int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto body = [&] {
    while (!failed.load()) {
      const int64_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

std::string gen_data(const GenDataOptions& opt) {
  if (opt.count < 1) throw ConfigError("gen-data: count must be >= 1");
  if (opt.d != 2 && opt.d != 3) throw ConfigError("gen-data: d must be 2 or 3");
  if (opt.bif_min < 0 || opt.bif_max < opt.bif_min)
    throw ConfigError("gen-data: need 0 <= bif_min <= bif_max");
  if (opt.wiggle < 0.0 || opt.wiggle > 1.0)
    throw ConfigError("gen-data: wiggle must lie in [0,1]");
  ensure_dir(opt.out_dir);

  DatasetManifest manifest;
  manifest.arch = InrArch{opt.d, opt.arch_width, opt.arch_blocks};
  manifest.master_seed = opt.seed;
  manifest.wiggle = opt.wiggle;

  const uint64_t stage_seed = derive_seed(opt.seed, "gen-data");
  const int span = opt.bif_max - opt.bif_min + 1;
  for (int64_t i = 0; i < opt.count; ++i) {
    ManifestItem item;
    item.seed = derive_seed(stage_seed, static_cast<uint64_t>(i));
    item.bifurcations = opt.bif_min + static_cast<int>(i % span);
    const TreeGraph tree =
        generate_tree(item.seed, opt.d, item.bifurcations, opt.wiggle);
    item.tree_file = item_name("tree", i, ".txt");
    item.stats = tree_stats(tree);
    save_tree(tree, join_path(opt.out_dir, item.tree_file));
    manifest.items.push_back(std::move(item));
  }

  const std::string manifest_path = join_path(opt.out_dir, "manifest.json");
  save_manifest(manifest, manifest_path);

  ConfigMap cfg;
  cfg.set("stage", "gen-data");
  cfg.set_int("count", opt.count);
  cfg.set_int("d", opt.d);
  cfg.set_int("bif_min", opt.bif_min);
  cfg.set_int("bif_max", opt.bif_max);
  cfg.set_double("wiggle", opt.wiggle);
  cfg.set_u64("seed", opt.seed);
  cfg.set_int("arch_width", opt.arch_width);
  cfg.set_int("arch_blocks", opt.arch_blocks);
  cfg.save(join_path(opt.out_dir, "gen-data.resolved.cfg"));
  return manifest_path;
}

void fit_stage(const FitStageOptions& opt) {
  if (opt.max_iters < 1) throw ConfigError("fit: max_iters must be >= 1");
  if (opt.batch < 1) throw ConfigError("fit: batch must be >= 1");
  DatasetManifest manifest = load_manifest(opt.manifest_path);
  const std::string dir = parent_dir(opt.manifest_path);
  const uint64_t shared_init_seed =
      derive_seed(manifest.master_seed, "shared-init");

  std::mutex manifest_mu;
  auto fit_item = [&](int64_t i) {
    ManifestItem snapshot;
    {
      std::lock_guard<std::mutex> lock(manifest_mu);
      snapshot = manifest.items[static_cast<size_t>(i)];
    }
    const std::string ckpt_name = replace_ext(snapshot.tree_file, ".inr");
    const std::string ckpt_path = join_path(dir, ckpt_name);

    // Restartability: a checkpoint that exists and validates is adopted
    // instead of refit.
    double fit_loss = snapshot.fit_loss;
    bool have = false;
    if (fs::exists(ckpt_path)) {
      try {
        const InrCheckpoint existing = load_checkpoint(ckpt_path);
        if (existing.arch == manifest.arch) {
          have = true;
          try {
            fit_loss = nlohmann::json::parse(existing.metadata)
                           .value("final_loss", fit_loss);
          } catch (const nlohmann::json::exception&) {
            // metadata is free-form; keep the manifest's loss
          }
        }
      } catch (const std::exception&) {
        have = false;  // unreadable or corrupt: refit below
      }
    }

    if (!have) {
      const TreeGraph tree = load_tree(join_path(dir, snapshot.tree_file));
      const TreeOracle oracle(tree);
      FitConfig cfg;
      cfg.max_iters = opt.max_iters;
      cfg.lr = opt.lr;
      cfg.batch = opt.batch;
      cfg.tol = opt.tol;
      cfg.surface_fraction = opt.surface_fraction;
      cfg.band = opt.band;
      cfg.seed = derive_seed(snapshot.seed, "fit");
      if (opt.shared_init) cfg.init_seed = shared_init_seed;
      cfg.source_id = snapshot.tree_file;
      const FitResult res = fit_inr(oracle, manifest.arch, cfg);
      save_checkpoint(res.checkpoint, ckpt_path);
      fit_loss = res.final_loss;
    }

    std::lock_guard<std::mutex> lock(manifest_mu);
    manifest.items[static_cast<size_t>(i)].checkpoint_file = ckpt_name;
    manifest.items[static_cast<size_t>(i)].fit_loss = fit_loss;
  };

  run_parallel(static_cast<int64_t>(manifest.items.size()),
               resolve_worker_count(opt.threads), fit_item);
  save_manifest(manifest, opt.manifest_path);

  ConfigMap cfg;
  cfg.set("stage", "fit");
  cfg.set("manifest", opt.manifest_path);
  cfg.set_int("max_iters", opt.max_iters);
  cfg.set_double("lr", opt.lr);
  cfg.set_int("batch", opt.batch);
  cfg.set_double("tol", opt.tol);
  cfg.set_double("surface_fraction", opt.surface_fraction);
  cfg.set_double("band", opt.band);
  cfg.set("shared_init", opt.shared_init ? "true" : "false");
  cfg.save(join_path(dir, "fit.resolved.cfg"));
}

void extract_stage(const ExtractOptions& opt) {
  if (opt.resolutions.empty())
    throw ConfigError("extract: at least one resolution required");
  for (int64_t n : opt.resolutions)
    if (n < 2) throw ConfigError("extract: resolutions must be >= 2");
  if (opt.level <= 0.0 || opt.level >= 1.0)
    throw ConfigError("extract: level must lie in (0,1)");

  const DatasetManifest manifest = load_manifest(opt.manifest_path);
  const std::string dir = parent_dir(opt.manifest_path);
  const std::string out_dir = opt.out_dir.empty() ? dir : opt.out_dir;
  ensure_dir(out_dir);

  for (const ManifestItem& item : manifest.items) {
    if (item.checkpoint_file.empty())
      throw DataError("extract: item " + item.tree_file +
                      " has no checkpoint; run fit first");
    const InrCheckpoint ckpt =
        load_checkpoint(join_path(dir, item.checkpoint_file));
    const std::string stem = replace_ext(item.checkpoint_file, "");
    for (int64_t n : opt.resolutions) {
      const VoxelGrid grid = sample_grid(ckpt, n);
      const std::string res_stem = stem + "_res" + std::to_string(n);
      if (manifest.arch.d == 3) {
        const Mesh mesh = marching_cubes(grid, opt.level);
        save_mesh(mesh, join_path(out_dir, res_stem + ".obj"));
        if (opt.write_grids)
          save_grid(grid, join_path(out_dir, res_stem + ".vox"));
      } else {
        save_grid(grid, join_path(out_dir, res_stem + ".vox"));
        save_pgm(grid, join_path(out_dir, res_stem + ".pgm"));
      }
    }
  }

  ConfigMap cfg;
  cfg.set("stage", "extract");
  cfg.set("manifest", opt.manifest_path);
  std::string res_list;
  for (size_t i = 0; i < opt.resolutions.size(); ++i) {
    if (i) res_list += ',';
    res_list += std::to_string(opt.resolutions[i]);
  }
  cfg.set("resolutions", res_list);
  cfg.set_double("level", opt.level);
  cfg.set("write_grids", opt.write_grids ? "true" : "false");
  cfg.save(join_path(out_dir, "extract.resolved.cfg"));
}

void train_ddm_stage(const TrainDdmOptions& opt) {
  const DatasetManifest manifest = load_manifest(opt.manifest_path);
  const std::string dir = parent_dir(opt.manifest_path);

  std::vector<InrCheckpoint> dataset;
  dataset.reserve(manifest.items.size());
  for (const ManifestItem& item : manifest.items) {
    if (item.checkpoint_file.empty())
      throw DataError("train-ddm: item " + item.tree_file +
                      " has no checkpoint; run fit first");
    dataset.push_back(load_checkpoint(join_path(dir, item.checkpoint_file)));
  }

  DiffusionTrainConfig cfg = opt.train;
  if (cfg.seed == 0) cfg.seed = derive_seed(manifest.master_seed, "train-ddm");
  const DiffusionTrainResult result = train_diffusion(dataset, cfg);

  const std::string out_path =
      opt.out_path.empty() ? join_path(dir, "denoiser.ddm") : opt.out_path;
  ensure_dir(parent_dir(out_path).empty() ? "." : parent_dir(out_path));
  save_denoiser(result.model, out_path);

  std::ofstream loss_out(replace_ext(out_path, ".loss.csv"), std::ios::binary);
  if (!loss_out) throw DataError("cannot write loss log for " + out_path);
  loss_out << "epoch,loss\n";
  loss_out.precision(9);
  for (size_t e = 0; e < result.loss_history.size(); ++e)
    loss_out << (e + 1) << ',' << result.loss_history[e] << '\n';

  ConfigMap rc;
  rc.set("stage", "train-ddm");
  rc.set("manifest", opt.manifest_path);
  rc.set_int("epochs", cfg.epochs);
  rc.set_int("batch", cfg.batch);
  rc.set_double("lr", cfg.lr);
  rc.set_double("lr_decay", cfg.lr_decay);
  rc.set_int("decay_every", cfg.decay_every);
  rc.set_double("tol", cfg.tol);
  rc.set_u64("seed", cfg.seed);
  rc.set_int("schedule_T", cfg.schedule_T);
  rc.set_double("beta_min", cfg.beta_min);
  rc.set_double("beta_max", cfg.beta_max);
  rc.set_int("hidden", cfg.denoiser.hidden);
  rc.set_int("chunk", cfg.denoiser.chunk);
  rc.set_int("blocks", cfg.denoiser.blocks);
  rc.set_int("heads", cfg.denoiser.heads);
  const std::string cfg_dir = parent_dir(out_path);
  rc.save(join_path(cfg_dir.empty() ? "." : cfg_dir, "train-ddm.resolved.cfg"));
}

void sample_stage(const SampleOptions& opt) {
  if (opt.count < 1) throw ConfigError("sample: count must be >= 1");
  if (opt.steps < 1) throw ConfigError("sample: steps must be >= 1");
  if (opt.eta < 0.0) throw ConfigError("sample: eta must be >= 0");
  const DenoiserModel model = load_denoiser(opt.model_path);
  ensure_dir(opt.out_dir);

  const uint64_t stage_seed = derive_seed(opt.seed, "sample");
  for (int64_t k = 0; k < opt.count; ++k) {
    const InrCheckpoint ckpt = ddim_sample(
        model, opt.steps, opt.eta, derive_seed(stage_seed, static_cast<uint64_t>(k)));
    save_checkpoint(ckpt, join_path(opt.out_dir, item_name("sample", k, ".inr")));
  }

  ConfigMap cfg;
  cfg.set("stage", "sample");
  cfg.set("model", opt.model_path);
  cfg.set_int("count", opt.count);
  cfg.set_int("steps", opt.steps);
  cfg.set_double("eta", opt.eta);
  cfg.set_u64("seed", opt.seed);
  cfg.save(join_path(opt.out_dir, "sample.resolved.cfg"));
}

namespace {

std::vector<std::string> list_sample_checkpoints(const std::string& dir) {
  std::vector<std::string> paths;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".inr")
      paths.push_back(entry.path().string());
  std::sort(paths.begin(), paths.end());
  if (paths.empty())
    throw DataError("evaluate: no .inr checkpoints found in " + dir);
  return paths;
}

Histogram clamped_histogram(const std::vector<double>& ref,
                            const std::vector<double>& gen, int bins,
                            const std::vector<double>& values) {
  double lo = 1e300, hi = -1e300;
  for (double v : ref) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double v : gen) lo = std::min(lo, v), hi = std::max(hi, v);
  if (hi <= lo) hi = lo + 1e-6;
  return histogram(values, lo, hi, bins);
}

struct VesselStatSets {
  std::vector<double> tortuosity;
  std::vector<double> total_length;
  std::vector<double> average_radius;
};

}  // namespace

void evaluate_stage(const EvaluateOptions& opt) {
  if (opt.mesh_res < 2 || opt.stats_res < 2)
    throw ConfigError("evaluate: resolutions must be >= 2");
  if (opt.surface_samples < 1)
    throw ConfigError("evaluate: surface_samples must be >= 1");
  if (opt.histogram_bins < 1)
    throw ConfigError("evaluate: histogram_bins must be >= 1");

  const DatasetManifest manifest = load_manifest(opt.manifest_path);
  const std::string dir = parent_dir(opt.manifest_path);
  const std::string out_dir = opt.out_dir.empty() ? dir : opt.out_dir;
  ensure_dir(out_dir);
  const int d = manifest.arch.d;

  MetricsReport summary;
  summary.note("manifest", opt.manifest_path);
  summary.note("mesh_res", std::to_string(opt.mesh_res));
  summary.note("stats_res", std::to_string(opt.stats_res));
  summary.note("surface_samples", std::to_string(opt.surface_samples));

  if (opt.table1) {
    const int widths[] = {16, 32, 64, 128, 256};
    const int depths[] = {1, 3, 5};
    std::ofstream out(join_path(out_dir, "table1.csv"), std::ios::binary);
    if (!out) throw DataError("cannot write table1.csv");
    out << "D,L,params,params_M,size_MB\n";
    char row[128];
    for (int D : widths)
      for (int L : depths) {
        const InrArch arch{d, D, L};
        const double params_m =
            static_cast<double>(arch.param_count()) / 1e6;
        const double size_mb =
            static_cast<double>(arch.checkpoint_size_bytes()) / (1 << 20);
        std::snprintf(row, sizeof row, "%d,%d,%lld,%.2f,%.2f\n", D, L,
                      static_cast<long long>(arch.param_count()), params_m,
                      size_mb);
        out << row;
      }
  }

  // Ground-truth meshes and point sets are shared by the fidelity and
  // generative-metric blocks.
  std::vector<std::vector<Vec3>> ref_points;
  auto build_ref_points = [&]() {
    if (!ref_points.empty() || d != 3) return;
    for (size_t i = 0; i < manifest.items.size(); ++i) {
      const TreeGraph tree =
          load_tree(join_path(dir, manifest.items[i].tree_file));
      const Mesh mesh = marching_cubes(voxelize(tree, opt.mesh_res), 0.5);
      ref_points.push_back(surface_sample(
          mesh, opt.surface_samples,
          derive_seed(derive_seed(opt.seed, "ref-surface"), i)));
    }
  };

  if (opt.fidelity) {
    std::ofstream out(join_path(out_dir, "fidelity.csv"), std::ios::binary);
    if (!out) throw DataError("cannot write fidelity.csv");
    out << "item,fit_loss,rel_err_pct,cd_e3\n";
    build_ref_points();
    double cd_sum = 0.0, rel_sum = 0.0;
    int64_t cd_count = 0;
    for (size_t i = 0; i < manifest.items.size(); ++i) {
      const ManifestItem& item = manifest.items[i];
      if (item.checkpoint_file.empty())
        throw DataError("evaluate: item " + item.tree_file +
                        " has no checkpoint; run fit first");
      const InrCheckpoint ckpt =
          load_checkpoint(join_path(dir, item.checkpoint_file));
      const TreeGraph tree = load_tree(join_path(dir, item.tree_file));
      const VoxelGrid inr_grid = sample_grid(ckpt, opt.mesh_res);
      const VoxelGrid gt_grid = voxelize(tree, opt.mesh_res);
      const double rel = relative_error(inr_grid.values, gt_grid.values);
      rel_sum += rel;
      out << item.tree_file << ',' << item.fit_loss << ',' << rel;
      if (d == 3) {
        const Mesh mesh = marching_cubes(inr_grid, 0.5);
        if (!mesh.empty()) {
          const std::vector<Vec3> pts = surface_sample(
              mesh, opt.surface_samples,
              derive_seed(derive_seed(opt.seed, "fit-surface"), i));
          const double cd = chamfer(pts, ref_points[i]) * 1e3;
          cd_sum += cd;
          ++cd_count;
          out << ',' << cd << '\n';
          continue;
        }
      }
      out << ",\n";
    }
    const auto item_count = static_cast<double>(manifest.items.size());
    summary.set("mean_rel_err_pct", rel_sum / item_count);
    if (cd_count > 0)
      summary.set("mean_cd_e3", cd_sum / static_cast<double>(cd_count));
    int64_t input_bytes = 4;
    for (int axis = 0; axis < d; ++axis) input_bytes *= 128;
    summary.set("compression_ratio_128",
                compression_ratio(input_bytes,
                                  InrCheckpoint{manifest.arch, {}, ""}));
  }

  const bool have_samples = !opt.samples_dir.empty();
  std::vector<InrCheckpoint> samples;
  if (have_samples)
    for (const std::string& path : list_sample_checkpoints(opt.samples_dir))
      samples.push_back(load_checkpoint(path));

  if (opt.gen_metrics && have_samples && d == 3) {
    build_ref_points();
    std::vector<std::vector<Vec3>> gen_points;
    int64_t skipped = 0;
    for (size_t k = 0; k < samples.size(); ++k) {
      const Mesh mesh =
          marching_cubes(sample_grid(samples[k], opt.mesh_res), 0.5);
      if (mesh.empty()) {
        ++skipped;
        continue;
      }
      gen_points.push_back(surface_sample(
          mesh, opt.surface_samples,
          derive_seed(derive_seed(opt.seed, "gen-surface"), k)));
    }
    if (!gen_points.empty()) {
      const GenSetMetrics m = generative_set_metrics(gen_points, ref_points);
      summary.set("mmd_e3", m.mmd * 1e3);
      summary.set("cov", m.cov);
      summary.set("one_nna_pct", m.one_nna_pct);
    }
    summary.set("gen_meshes_empty", static_cast<double>(skipped));
  }

  if (opt.histograms && d == 3) {
    VesselStatSets ref_stats, gen_stats;
    for (const ManifestItem& item : manifest.items) {
      ref_stats.tortuosity.insert(ref_stats.tortuosity.end(),
                                  item.stats.tortuosity_per_branch.begin(),
                                  item.stats.tortuosity_per_branch.end());
      ref_stats.total_length.push_back(item.stats.total_length);
      ref_stats.average_radius.push_back(item.stats.average_radius);
    }
    if (have_samples) {
      for (const InrCheckpoint& ckpt : samples) {
        VoxelGrid grid = sample_grid(ckpt, opt.stats_res);
        for (float& v : grid.values) v = v >= 0.5f ? 1.0f : 0.0f;
        try {
          const TreeStats stats = skeleton_stats(grid, 0.5f);
          gen_stats.tortuosity.insert(gen_stats.tortuosity.end(),
                                      stats.tortuosity_per_branch.begin(),
                                      stats.tortuosity_per_branch.end());
          gen_stats.total_length.push_back(stats.total_length);
          gen_stats.average_radius.push_back(stats.average_radius);
        } catch (const DataError&) {
          // empty foreground: skip this sample's statistics
        }
      }
    }
    const struct {
      const char* name;
      const std::vector<double>* ref;
      const std::vector<double>* gen;
    } stats[] = {
        {"tortuosity", &ref_stats.tortuosity, &gen_stats.tortuosity},
        {"total_length", &ref_stats.total_length, &gen_stats.total_length},
        {"average_radius", &ref_stats.average_radius,
         &gen_stats.average_radius},
    };
    for (const auto& s : stats) {
      if (s.ref->empty()) continue;
      const Histogram href = clamped_histogram(*s.ref, *s.gen,
                                               opt.histogram_bins, *s.ref);
      save_histogram_csv(href, join_path(out_dir, std::string("hist_") +
                                                      s.name + "_ref.csv"));
      if (!s.gen->empty()) {
        const Histogram hgen = clamped_histogram(*s.ref, *s.gen,
                                                 opt.histogram_bins, *s.gen);
        save_histogram_csv(hgen, join_path(out_dir, std::string("hist_") +
                                                        s.name + "_gen.csv"));
        summary.set(std::string("hist_") + s.name + "_intersection",
                    histogram_intersection(href, hgen));
      }
    }

    // Pairwise weight distances grouped by bifurcation count. Only
    // meaningful when the corpus was fit with a shared initialization.
    std::vector<std::pair<int, std::vector<InrCheckpoint>>> groups;
    for (const ManifestItem& item : manifest.items) {
      if (item.checkpoint_file.empty()) continue;
      const InrCheckpoint ckpt =
          load_checkpoint(join_path(dir, item.checkpoint_file));
      auto it = std::find_if(groups.begin(), groups.end(),
                             [&](const auto& g) {
                               return g.first == item.bifurcations;
                             });
      if (it == groups.end())
        groups.push_back({item.bifurcations, {ckpt}});
      else
        it->second.push_back(ckpt);
    }
    if (groups.size() >= 2) {
      const WeightDistanceMatrix wdm = weight_distance_matrix(groups);
      std::ofstream out(join_path(out_dir, "weight_distance.csv"),
                        std::ios::binary);
      if (!out) throw DataError("cannot write weight_distance.csv");
      out << "bifurcations";
      for (int c : wdm.counts) out << ',' << c;
      out << '\n';
      out.precision(9);
      for (size_t r = 0; r < wdm.counts.size(); ++r) {
        out << wdm.counts[r];
        for (size_t c = 0; c < wdm.counts.size(); ++c)
          out << ',' << wdm.mean_l2[r][c];
        out << '\n';
      }
    }
  }

  save_report_csv(summary, join_path(out_dir, "evaluate_summary.csv"));
  append_report_jsonl(summary, join_path(out_dir, "report.jsonl"));

  ConfigMap cfg;
  cfg.set("stage", "evaluate");
  cfg.set("manifest", opt.manifest_path);
  cfg.set("samples_dir", opt.samples_dir);
  cfg.set_int("mesh_res", opt.mesh_res);
  cfg.set_int("stats_res", opt.stats_res);
  cfg.set_int("surface_samples", opt.surface_samples);
  cfg.set_int("histogram_bins", opt.histogram_bins);
  cfg.set("table1", opt.table1 ? "true" : "false");
  cfg.set("fidelity", opt.fidelity ? "true" : "false");
  cfg.set("gen_metrics", opt.gen_metrics ? "true" : "false");
  cfg.set("histograms", opt.histograms ? "true" : "false");
  cfg.set_u64("seed", opt.seed);
  cfg.save(join_path(out_dir, "evaluate.resolved.cfg"));
}

void segment_stage(const SegmentOptions& opt) {
  if (opt.image_res < 8) throw ConfigError("segment: image_res must be >= 8");
  if (opt.snapshot_every < 0)
    throw ConfigError("segment: snapshot_every must be >= 0");
  ensure_dir(opt.out_dir);

  const TreeGraph tree = generate_tree(derive_seed(opt.seed, "tree"), 2,
                                       opt.bifurcations, opt.wiggle);
  VoxelGrid gt_mask = voxelize(tree, opt.image_res);
  const ImageField image = render_tree_image(tree, opt.image_res, 0.9f, 0.1f,
                                             1.0, 0.02, opt.seed);
  save_grid(image, join_path(opt.out_dir, "image.vox"));
  save_pgm(image, join_path(opt.out_dir, "image.pgm"));
  save_grid(gt_mask, join_path(opt.out_dir, "gt_mask.vox"));
  save_pgm(gt_mask, join_path(opt.out_dir, "gt_mask.pgm"));

  SegmentationConfig cfg;
  cfg.fit.max_iters = opt.max_iters;
  cfg.fit.batch = opt.batch;
  cfg.fit.lr = opt.lr;
  cfg.fit.seed = derive_seed(opt.seed, "fit");
  cfg.snapshot_every = opt.snapshot_every;
  cfg.tau = opt.tau;
  const InrArch arch{2, opt.arch_width, opt.arch_blocks};
  const SegmentationResult res = fit_image(image, arch, cfg);

  save_checkpoint(res.checkpoint, join_path(opt.out_dir, "segment.inr"));
  std::ofstream snap_out(join_path(opt.out_dir, "segment_snapshots.csv"),
                         std::ios::binary);
  if (!snap_out) throw DataError("cannot write segment_snapshots.csv");
  snap_out << "iteration,dice\n";
  snap_out.precision(9);
  for (const MaskSnapshot& snap : res.snapshots) {
    char name[64];
    std::snprintf(name, sizeof name, "mask_%05d", snap.iteration);
    save_grid(snap.mask, join_path(opt.out_dir, std::string(name) + ".vox"));
    save_pgm(snap.mask, join_path(opt.out_dir, std::string(name) + ".pgm"));
    snap_out << snap.iteration << ',' << dice(snap.mask, gt_mask) << '\n';
  }

  const VoxelGrid final_mask =
      threshold_mask(res.checkpoint, opt.image_res, opt.tau);
  save_grid(final_mask, join_path(opt.out_dir, "final_mask.vox"));
  save_pgm(final_mask, join_path(opt.out_dir, "final_mask.pgm"));

  const VoxelGrid recon = sample_grid(res.checkpoint, opt.image_res);
  MetricsReport report;
  report.set("rel_err_pct", relative_error(recon.values, image.values));
  report.set("dice", dice(final_mask, gt_mask));
  report.set("final_loss", res.final_loss);
  report.set("iterations", static_cast<double>(res.iterations));
  report.note("tau", std::to_string(opt.tau));
  report.note("image_res", std::to_string(opt.image_res));
  save_report_csv(report, join_path(opt.out_dir, "segment_metrics.csv"));

  ConfigMap rc;
  rc.set("stage", "segment");
  rc.set_int("image_res", opt.image_res);
  rc.set_int("bifurcations", opt.bifurcations);
  rc.set_double("wiggle", opt.wiggle);
  rc.set_u64("seed", opt.seed);
  rc.set_int("arch_width", opt.arch_width);
  rc.set_int("arch_blocks", opt.arch_blocks);
  rc.set_int("max_iters", opt.max_iters);
  rc.set_int("batch", opt.batch);
  rc.set_double("lr", opt.lr);
  rc.set_int("snapshot_every", opt.snapshot_every);
  rc.set_double("tau", opt.tau);
  rc.save(join_path(opt.out_dir, "segment.resolved.cfg"));
}

void report_stage(const ReportOptions& opt) {
  if (opt.run_dir.empty()) throw ConfigError("report: run_dir required");
  if (!fs::is_directory(opt.run_dir))
    throw DataError("report: " + opt.run_dir + " is not a directory");
  const std::string out_path = opt.out_path.empty()
                                   ? join_path(opt.run_dir, "summary.csv")
                                   : opt.out_path;

  std::vector<std::string> csvs;
  for (const fs::directory_entry& entry :
       fs::recursive_directory_iterator(opt.run_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv")
      continue;
    if (fs::weakly_canonical(entry.path()) ==
        fs::weakly_canonical(fs::path(out_path)))
      continue;
    csvs.push_back(entry.path().string());
  }
  std::sort(csvs.begin(), csvs.end());

  MetricsReport merged;
  for (const std::string& path : csvs) {
    MetricsReport report;
    try {
      report = load_report_csv(path);
    } catch (const std::exception&) {
      continue;  // table-shaped CSV, not a name/value report
    }
    if (report.values.empty()) continue;
    const std::string prefix =
        fs::relative(path, opt.run_dir).replace_extension("").string();
    for (const auto& [name, value] : report.values)
      merged.set(prefix + "/" + name, value);
  }
  save_report_csv(merged, out_path);

  ConfigMap rc;
  rc.set("stage", "report");
  rc.set("run_dir", opt.run_dir);
  const std::string cfg_dir = parent_dir(out_path);
  rc.save(join_path(cfg_dir.empty() ? "." : cfg_dir, "report.resolved.cfg"));
}

}  // namespace treefield
