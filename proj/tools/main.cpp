#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "treefield/config.hpp"
#include "treefield/errors.hpp"
#include "treefield/pipeline.hpp"

namespace {

using treefield::ConfigMap;

// Bridges `--config file` into a subcommand: config values fill in options
// the user did not pass on the command line, and unknown keys are rejected.
class ConfigBinder {
 public:
  explicit ConfigBinder(CLI::App* cmd) {
    config_opt_ = cmd->add_option("--config", path_,
                                  "key = value config file; explicit flags win")
                      ->check(CLI::ExistingFile);
  }

  template <typename T>
  void bind(CLI::Option* opt, const std::string& key, T& target) {
    keys_.push_back(key);
    appliers_.emplace_back([opt, key, &target](const ConfigMap& cfg) {
      if (opt->count() > 0 || !cfg.has(key)) return;
      assign(cfg, key, target);
    });
  }

  void apply() const {
    if (config_opt_->count() == 0) return;
    const ConfigMap cfg = ConfigMap::parse_file(path_);
    cfg.require_known(keys_);
    for (const auto& fn : appliers_) fn(cfg);
  }

 private:
  static void assign(const ConfigMap& c, const std::string& k, std::string& v) {
    v = c.get_str(k);
  }
  static void assign(const ConfigMap& c, const std::string& k, int& v) {
    v = static_cast<int>(c.get_int(k));
  }
  static void assign(const ConfigMap& c, const std::string& k, int64_t& v) {
    v = c.get_int(k);
  }
  static void assign(const ConfigMap& c, const std::string& k, uint64_t& v) {
    v = c.get_u64(k);
  }
  static void assign(const ConfigMap& c, const std::string& k, double& v) {
    v = c.get_double(k);
  }
  static void assign(const ConfigMap& c, const std::string& k, float& v) {
    v = static_cast<float>(c.get_double(k));
  }
  static void assign(const ConfigMap& c, const std::string& k, bool& v) {
    v = c.get_bool_or(k, v);
  }
  static void assign(const ConfigMap& c, const std::string& k,
                     std::vector<int64_t>& v) {
    v.clear();
    std::string text = c.get_str(k);
    size_t start = 0;
    while (start <= text.size()) {
      const size_t comma = text.find(',', start);
      const std::string piece =
          text.substr(start, comma == std::string::npos ? std::string::npos
                                                        : comma - start);
      try {
        v.push_back(std::stoll(piece));
      } catch (const std::exception&) {
        throw treefield::ConfigError("config key \"" + k + "\": \"" + piece +
                                     "\" is not an integer");
      }
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }

  CLI::Option* config_opt_ = nullptr;
  std::string path_;
  std::vector<std::string> keys_;
  std::vector<std::function<void(const ConfigMap&)>> appliers_;
};

void add_gen_data(CLI::App& app) {
  auto opt = std::make_shared<treefield::GenDataOptions>();
  CLI::App* cmd =
      app.add_subcommand("gen-data", "Generate a synthetic tree corpus");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--out", opt->out_dir, "Output directory"),
               "out", opt->out_dir);
  binder->bind(cmd->add_option("--n,--count", opt->count, "Number of trees"),
               "count", opt->count);
  binder->bind(cmd->add_option("--d", opt->d, "Domain dimension (2 or 3)"),
               "d", opt->d);
  binder->bind(cmd->add_option("--bif-min", opt->bif_min,
                               "Minimum bifurcation count"),
               "bif_min", opt->bif_min);
  binder->bind(cmd->add_option("--bif-max", opt->bif_max,
                               "Maximum bifurcation count"),
               "bif_max", opt->bif_max);
  binder->bind(cmd->add_option("--wiggle", opt->wiggle,
                               "Branch waviness in [0,1]"),
               "wiggle", opt->wiggle);
  binder->bind(cmd->add_option("--seed", opt->seed, "Master seed"), "seed",
               opt->seed);
  binder->bind(cmd->add_option("--arch-width", opt->arch_width,
                               "Hidden width recorded for fits"),
               "arch_width", opt->arch_width);
  binder->bind(cmd->add_option("--arch-blocks", opt->arch_blocks,
                               "Residual blocks recorded for fits"),
               "arch_blocks", opt->arch_blocks);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->out_dir.empty())
      throw treefield::ConfigError("gen-data: --out is required");
    treefield::gen_data(*opt);
  });
}

void add_fit(CLI::App& app) {
  auto opt = std::make_shared<treefield::FitStageOptions>();
  CLI::App* cmd = app.add_subcommand("fit", "Fit one INR per corpus tree");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--manifest", opt->manifest_path,
                               "Corpus manifest.json"),
               "manifest", opt->manifest_path);
  binder->bind(cmd->add_option("--iters", opt->max_iters, "Adam iterations"),
               "max_iters", opt->max_iters);
  binder->bind(cmd->add_option("--lr", opt->lr, "Learning rate"), "lr",
               opt->lr);
  binder->bind(cmd->add_option("--batch", opt->batch, "Points per batch"),
               "batch", opt->batch);
  binder->bind(cmd->add_option("--tol", opt->tol,
                               "Early-stop running-loss tolerance (0 = off)"),
               "tol", opt->tol);
  binder->bind(cmd->add_option("--surface-fraction", opt->surface_fraction,
                               "Fraction of near-surface samples"),
               "surface_fraction", opt->surface_fraction);
  binder->bind(cmd->add_option("--band", opt->band, "Surface band half-width"),
               "band", opt->band);
  binder->bind(cmd->add_flag("--shared-init", opt->shared_init,
                             "One shared initialization across the corpus"),
               "shared_init", opt->shared_init);
  binder->bind(cmd->add_option("--threads", opt->threads,
                               "Worker threads (0 = auto)"),
               "threads", opt->threads);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->manifest_path.empty())
      throw treefield::ConfigError("fit: --manifest is required");
    treefield::fit_stage(*opt);
  });
}

void add_extract(CLI::App& app) {
  auto opt = std::make_shared<treefield::ExtractOptions>();
  CLI::App* cmd =
      app.add_subcommand("extract", "Extract meshes/grids from checkpoints");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--manifest", opt->manifest_path,
                               "Corpus manifest.json"),
               "manifest", opt->manifest_path);
  binder->bind(cmd->add_option("--res", opt->resolutions,
                               "Grid resolutions, e.g. 32,64")
                   ->delimiter(','),
               "resolutions", opt->resolutions);
  binder->bind(cmd->add_option("--out", opt->out_dir,
                               "Output directory (default: manifest dir)"),
               "out", opt->out_dir);
  binder->bind(cmd->add_option("--level", opt->level, "Iso level"), "level",
               opt->level);
  binder->bind(cmd->add_flag("--grids", opt->write_grids,
                             "Also write sampled VOX1 grids"),
               "write_grids", opt->write_grids);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->manifest_path.empty())
      throw treefield::ConfigError("extract: --manifest is required");
    treefield::extract_stage(*opt);
  });
}

void add_train_ddm(CLI::App& app) {
  auto opt = std::make_shared<treefield::TrainDdmOptions>();
  CLI::App* cmd = app.add_subcommand(
      "train-ddm", "Train the weight-space denoising diffusion model");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--manifest", opt->manifest_path,
                               "Corpus manifest.json"),
               "manifest", opt->manifest_path);
  binder->bind(cmd->add_option("--out", opt->out_path,
                               "Model file (default: <dir>/denoiser.ddm)"),
               "out", opt->out_path);
  binder->bind(cmd->add_option("--epochs", opt->train.epochs, "Epochs"),
               "epochs", opt->train.epochs);
  binder->bind(cmd->add_option("--batch", opt->train.batch, "Batch size"),
               "batch", opt->train.batch);
  binder->bind(cmd->add_option("--lr", opt->train.lr, "Learning rate"), "lr",
               opt->train.lr);
  binder->bind(cmd->add_option("--lr-decay", opt->train.lr_decay,
                               "Multiplicative decay factor"),
               "lr_decay", opt->train.lr_decay);
  binder->bind(cmd->add_option("--tol", opt->train.tol,
                               "Stop once an epoch loss dips below (0 = off)"),
               "tol", opt->train.tol);
  binder->bind(cmd->add_option("--decay-every", opt->train.decay_every,
                               "Epochs between decays"),
               "decay_every", opt->train.decay_every);
  binder->bind(cmd->add_option("--seed", opt->train.seed,
                               "Training seed (0 = derive from manifest)"),
               "seed", opt->train.seed);
  binder->bind(cmd->add_option("--T", opt->train.schedule_T,
                               "Diffusion timesteps"),
               "schedule_T", opt->train.schedule_T);
  binder->bind(cmd->add_option("--beta-min", opt->train.beta_min,
                               "Schedule beta(1)"),
               "beta_min", opt->train.beta_min);
  binder->bind(cmd->add_option("--beta-max", opt->train.beta_max,
                               "Schedule beta(T)"),
               "beta_max", opt->train.beta_max);
  binder->bind(cmd->add_option("--hidden", opt->train.denoiser.hidden,
                               "Denoiser hidden width"),
               "hidden", opt->train.denoiser.hidden);
  binder->bind(cmd->add_option("--chunk", opt->train.denoiser.chunk,
                               "Token chunk size"),
               "chunk", opt->train.denoiser.chunk);
  binder->bind(cmd->add_option("--blocks", opt->train.denoiser.blocks,
                               "Transformer blocks"),
               "blocks", opt->train.denoiser.blocks);
  binder->bind(cmd->add_option("--heads", opt->train.denoiser.heads,
                               "Attention heads"),
               "heads", opt->train.denoiser.heads);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->manifest_path.empty())
      throw treefield::ConfigError("train-ddm: --manifest is required");
    treefield::train_ddm_stage(*opt);
  });
}

void add_sample(CLI::App& app) {
  auto opt = std::make_shared<treefield::SampleOptions>();
  CLI::App* cmd =
      app.add_subcommand("sample", "Draw new INR checkpoints via DDIM");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--model", opt->model_path, "Trained .ddm file"),
               "model", opt->model_path);
  binder->bind(cmd->add_option("--out", opt->out_dir, "Output directory"),
               "out", opt->out_dir);
  binder->bind(cmd->add_option("--n,--count", opt->count, "Number of samples"),
               "count", opt->count);
  binder->bind(cmd->add_option("--steps", opt->steps, "DDIM steps"), "steps",
               opt->steps);
  binder->bind(cmd->add_option("--eta", opt->eta, "DDIM stochasticity"), "eta",
               opt->eta);
  binder->bind(cmd->add_option("--seed", opt->seed, "Sampling seed"), "seed",
               opt->seed);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->model_path.empty())
      throw treefield::ConfigError("sample: --model is required");
    if (opt->out_dir.empty())
      throw treefield::ConfigError("sample: --out is required");
    treefield::sample_stage(*opt);
  });
}

void add_evaluate(CLI::App& app) {
  auto opt = std::make_shared<treefield::EvaluateOptions>();
  CLI::App* cmd =
      app.add_subcommand("evaluate", "Write metric tables and histograms");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--manifest", opt->manifest_path,
                               "Corpus manifest.json"),
               "manifest", opt->manifest_path);
  binder->bind(cmd->add_option("--samples", opt->samples_dir,
                               "Directory of sampled .inr checkpoints"),
               "samples", opt->samples_dir);
  binder->bind(cmd->add_option("--out", opt->out_dir,
                               "Output directory (default: manifest dir)"),
               "out", opt->out_dir);
  binder->bind(cmd->add_option("--mesh-res", opt->mesh_res,
                               "Extraction resolution for meshes"),
               "mesh_res", opt->mesh_res);
  binder->bind(cmd->add_option("--stats-res", opt->stats_res,
                               "Resolution for skeleton statistics"),
               "stats_res", opt->stats_res);
  binder->bind(cmd->add_option("--surface-samples", opt->surface_samples,
                               "Surface points per mesh"),
               "surface_samples", opt->surface_samples);
  binder->bind(cmd->add_option("--bins", opt->histogram_bins,
                               "Histogram bins"),
               "histogram_bins", opt->histogram_bins);
  binder->bind(cmd->add_flag("--table1,!--no-table1", opt->table1,
                             "Parameter-count table"),
               "table1", opt->table1);
  binder->bind(cmd->add_flag("--fidelity,!--no-fidelity", opt->fidelity,
                             "Per-tree fidelity table"),
               "fidelity", opt->fidelity);
  binder->bind(cmd->add_flag("--gen-metrics,!--no-gen-metrics",
                             opt->gen_metrics, "MMD/COV/1-NNA block"),
               "gen_metrics", opt->gen_metrics);
  binder->bind(cmd->add_flag("--histograms,!--no-histograms", opt->histograms,
                             "Vessel-statistic histograms"),
               "histograms", opt->histograms);
  binder->bind(cmd->add_option("--seed", opt->seed, "Sampling seed"), "seed",
               opt->seed);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->manifest_path.empty())
      throw treefield::ConfigError("evaluate: --manifest is required");
    treefield::evaluate_stage(*opt);
  });
}

void add_segment(CLI::App& app) {
  auto opt = std::make_shared<treefield::SegmentOptions>();
  CLI::App* cmd = app.add_subcommand(
      "segment", "Run the synthetic 2D vessel segmentation fixture");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--out", opt->out_dir, "Output directory"),
               "out", opt->out_dir);
  binder->bind(cmd->add_option("--res", opt->image_res, "Image resolution"),
               "image_res", opt->image_res);
  binder->bind(cmd->add_option("--bifurcations", opt->bifurcations,
                               "Fixture tree bifurcations"),
               "bifurcations", opt->bifurcations);
  binder->bind(cmd->add_option("--wiggle", opt->wiggle, "Fixture waviness"),
               "wiggle", opt->wiggle);
  binder->bind(cmd->add_option("--seed", opt->seed, "Fixture + fit seed"),
               "seed", opt->seed);
  binder->bind(cmd->add_option("--arch-width", opt->arch_width,
                               "INR hidden width"),
               "arch_width", opt->arch_width);
  binder->bind(cmd->add_option("--arch-blocks", opt->arch_blocks,
                               "INR residual blocks"),
               "arch_blocks", opt->arch_blocks);
  binder->bind(cmd->add_option("--iters", opt->max_iters, "Fit iterations"),
               "max_iters", opt->max_iters);
  binder->bind(cmd->add_option("--batch", opt->batch, "Points per batch"),
               "batch", opt->batch);
  binder->bind(cmd->add_option("--lr", opt->lr, "Learning rate"), "lr",
               opt->lr);
  binder->bind(cmd->add_option("--snapshot-every", opt->snapshot_every,
                               "Iterations between mask snapshots"),
               "snapshot_every", opt->snapshot_every);
  binder->bind(cmd->add_option("--tau", opt->tau, "Mask threshold in (0,1)"),
               "tau", opt->tau);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->out_dir.empty())
      throw treefield::ConfigError("segment: --out is required");
    treefield::segment_stage(*opt);
  });
}

void add_report(CLI::App& app) {
  auto opt = std::make_shared<treefield::ReportOptions>();
  CLI::App* cmd = app.add_subcommand(
      "report", "Aggregate metric CSVs under a run directory");
  auto binder = std::make_shared<ConfigBinder>(cmd);
  binder->bind(cmd->add_option("--run", opt->run_dir, "Run directory to scan"),
               "run_dir", opt->run_dir);
  binder->bind(cmd->add_option("--out", opt->out_path,
                               "Summary path (default: <run>/summary.csv)"),
               "out", opt->out_path);
  cmd->callback([opt, binder] {
    binder->apply();
    if (opt->run_dir.empty())
      throw treefield::ConfigError("report: --run is required");
    treefield::report_stage(*opt);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"treefield: implicit tubular-tree shapes and weight-space diffusion"};
  app.require_subcommand(1);
  add_gen_data(app);
  add_fit(app);
  add_extract(app);
  add_train_ddm(app);
  add_sample(app);
  add_evaluate(app);
  add_segment(app);
  add_report(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const treefield::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const treefield::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 4;
  } catch (const treefield::ShapeError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  }
  return 0;
}
