#include "treefield/segmentation.hpp"

#include <algorithm>
#include <cmath>

#include "treefield/edt.hpp"
#include "treefield/errors.hpp"
#include "treefield/isoextract.hpp"
#include "treefield/rng.hpp"

namespace treefield {

namespace {

void check_image(const ImageField& image, const char* who) {
  if (image.d != 2 && image.d != 3)
    throw ShapeError(std::string(who) + ": d must be 2 or 3");
  if (image.n < 1) throw ShapeError(std::string(who) + ": empty image");
  for (float v : image.values) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f)
      throw DataError(std::string(who) + ": intensities must lie in [0,1]");
  }
}

}  // namespace

ImageOracle::ImageOracle(ImageField image) : image_(std::move(image)) {
  check_image(image_, "ImageOracle");
  sd_ = signed_distance_field(image_, 0.5f);
}

int64_t ImageOracle::cell_index(const Vec3& x) const {
  const int64_t n = image_.n;
  const double inv_spacing = static_cast<double>(n) / 2.0;
  int64_t idx = 0;
  for (int axis = image_.d - 1; axis >= 0; --axis) {
    const auto i = static_cast<int64_t>(std::floor((x[static_cast<size_t>(axis)] + 1.0) * inv_spacing));
    idx = idx * n + std::clamp<int64_t>(i, 0, n - 1);
  }
  return idx;
}

double ImageOracle::signed_distance(const Vec3& x) const {
  return sd_[cell_index(x)];
}

double ImageOracle::target(const Vec3& x) const {
  return image_.values[cell_index(x)];
}

SegmentationResult fit_image(const ImageField& image, const InrArch& arch,
                             const SegmentationConfig& cfg) {
  if (cfg.tau <= 0.0f || cfg.tau >= 1.0f)
    throw ConfigError("fit_image: tau must lie in (0,1)");
  if (cfg.snapshot_every < 0)
    throw ConfigError("fit_image: snapshot_every must be >= 0");
  ImageOracle oracle(image);

  SegmentationResult res;
  FitConfig fit_cfg = cfg.fit;
  fit_cfg.surface_fraction = 0.0;  // intensity fits sample uniformly
  fit_cfg.observer = [&](int iter, const InrWeightsT<float>& w) {
    if (cfg.fit.observer) cfg.fit.observer(iter, w);
    if (cfg.snapshot_every == 0 || iter % cfg.snapshot_every != 0) return;
    const FieldFn field = [&w](const grad::ArrayF& pts) {
      return inr_forward(w, pts);
    };
    VoxelGrid mask = sample_grid(field, image.d, image.n);
    for (float& v : mask.values) v = v >= cfg.tau ? 1.0f : 0.0f;
    res.snapshots.push_back({iter, std::move(mask)});
  };

  FitResult fit = fit_inr(oracle, arch, fit_cfg);
  res.checkpoint = std::move(fit.checkpoint);
  res.final_loss = fit.final_loss;
  res.iterations = fit.iterations;
  return res;
}

VoxelGrid threshold_mask(const InrCheckpoint& ckpt, int64_t resolution,
                         double tau) {
  if (tau <= 0.0 || tau >= 1.0)
    throw ConfigError("threshold_mask: tau must lie in (0,1)");
  VoxelGrid grid = sample_grid(ckpt, resolution);
  for (float& v : grid.values) v = v >= tau ? 1.0f : 0.0f;
  return grid;
}

double dice(const VoxelGrid& a, const VoxelGrid& b) {
  if (a.d != b.d || a.n != b.n)
    throw ShapeError("dice: grid shapes differ");
  int64_t both = 0, total = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const bool ia = a.values[i] >= 0.5f, ib = b.values[i] >= 0.5f;
    both += (ia && ib) ? 1 : 0;
    total += (ia ? 1 : 0) + (ib ? 1 : 0);
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(total);
}

namespace {

// Separable Gaussian blur with clamp-to-edge boundary, kernel cut at 3
// sigma. Axis decomposition mirrors the grid's x-fastest layout.
void blur_axis(std::vector<float>& values, int64_t n, int64_t stride,
               const std::vector<double>& kernel) {
  const auto radius = static_cast<int64_t>(kernel.size() / 2);
  const int64_t total = static_cast<int64_t>(values.size());
  const int64_t lines = total / n;
  std::vector<float> line(static_cast<size_t>(n));
  for (int64_t l = 0; l < lines; ++l) {
    const int64_t base = (l / stride) * (n * stride) + l % stride;
    for (int64_t i = 0; i < n; ++i) line[i] = values[base + i * stride];
    for (int64_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int64_t k = -radius; k <= radius; ++k) {
        const int64_t j = std::clamp<int64_t>(i + k, 0, n - 1);
        acc += kernel[static_cast<size_t>(k + radius)] * line[j];
      }
      values[base + i * stride] = static_cast<float>(acc);
    }
  }
}

}  // namespace

ImageField render_tree_image(const TreeGraph& tree, int64_t n, float fg,
                             float bg, double blur_sigma_px,
                             double noise_sigma, uint64_t seed) {
  if (fg < 0.0f || fg > 1.0f || bg < 0.0f || bg > 1.0f)
    throw ConfigError("render_tree_image: intensities must lie in [0,1]");
  ImageField img = voxelize(tree, n);
  for (float& v : img.values) v = v >= 0.5f ? fg : bg;

  if (blur_sigma_px > 0.0) {
    const auto radius = static_cast<int64_t>(std::ceil(3.0 * blur_sigma_px));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int64_t k = -radius; k <= radius; ++k) {
      const double w = std::exp(-0.5 * (k / blur_sigma_px) * (k / blur_sigma_px));
      kernel[static_cast<size_t>(k + radius)] = w;
      sum += w;
    }
    for (double& w : kernel) w /= sum;
    int64_t stride = 1;
    for (int axis = 0; axis < img.d; ++axis) {
      blur_axis(img.values, n, stride, kernel);
      stride *= n;
    }
  }

  if (noise_sigma > 0.0) {
    Rng rng(derive_seed(seed, "image-noise"));
    for (float& v : img.values) {
      const double noisy = v + noise_sigma * rng.normal();
      v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
  }
  return img;
}

}  // namespace treefield
