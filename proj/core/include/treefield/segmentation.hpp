#pragma once

#include <cstdint>
#include <vector>

#include "treefield/grid.hpp"
#include "treefield/inr.hpp"
#include "treefield/sampling.hpp"
#include "treefield/tree.hpp"

namespace treefield {

// Intensity images reuse the grid container: d in {2,3}, values in [0,1].
using ImageField = VoxelGrid;

// Supervision from a stored image: target is the nearest-pixel intensity.
// The signed distance comes from the mask thresholded at 0.5 so band
// sampling still works, though image fits default to uniform sampling.
class ImageOracle : public Oracle {
 public:
  explicit ImageOracle(ImageField image);

  int dim() const override { return image_.d; }
  double signed_distance(const Vec3& x) const override;
  double target(const Vec3& x) const override;
  const ImageField& image() const { return image_; }

 private:
  int64_t cell_index(const Vec3& x) const;

  ImageField image_;
  std::vector<float> sd_;
};

struct SegmentationConfig {
  FitConfig fit;           // fit.surface_fraction is forced to 0 (uniform)
  int snapshot_every = 0;  // iterations between mask snapshots, 0 = none
  float tau = 0.5f;        // threshold for snapshot masks
};

struct MaskSnapshot {
  int iteration = 0;
  VoxelGrid mask;  // binary, at the image resolution
};

struct SegmentationResult {
  InrCheckpoint checkpoint;
  double final_loss = 0.0;
  int iterations = 0;
  std::vector<MaskSnapshot> snapshots;
};

// fit_inr against the image intensities with uniform point sampling,
// thresholding the field on the full image grid every `snapshot_every`
// iterations.
SegmentationResult fit_image(const ImageField& image, const InrArch& arch,
                             const SegmentationConfig& cfg);

// Field >= tau on an n^d grid as a 0/1 mask. tau must lie in (0, 1).
VoxelGrid threshold_mask(const InrCheckpoint& ckpt, int64_t resolution,
                         double tau);

// Dice overlap of two binary grids; both empty counts as 1.
double dice(const VoxelGrid& a, const VoxelGrid& b);

// Synthetic 2D vessel fixture: the tree rendered as foreground/background
// intensities, Gaussian-blurred (sigma in pixels), plus clipped Gaussian
// noise. The matching ground-truth mask is the unblurred occupancy.
ImageField render_tree_image(const TreeGraph& tree, int64_t n, float fg,
                             float bg, double blur_sigma_px,
                             double noise_sigma, uint64_t seed);

}  // namespace treefield
