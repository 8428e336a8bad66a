#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "treefield/array.hpp"
#include "treefield/inr.hpp"
#include "treefield/rng.hpp"
#include "treefield/tape.hpp"

namespace treefield {

// DDPM noise schedule, kept in double precision.
struct NoiseSchedule {
  static NoiseSchedule linear(int T = 1000, double beta_min = 1e-4,
                              double beta_max = 1e-2);

  int T = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;

  double beta(int t) const;       // t in [1, T]
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;  // t in [0, T]; alpha_bar(0) == 1

 private:
  std::vector<double> beta_;       // index 0 unused
  std::vector<double> alpha_bar_;  // alpha_bar_[0] == 1
};

// theta_star = sqrt(abar_t) * theta0 + sqrt(1 - abar_t) * eps.
template <typename S>
std::vector<S> forward_noise(const std::vector<S>& theta0, int t,
                             const std::vector<S>& eps,
                             const NoiseSchedule& schedule);

// Chunking of the flat weight vector into fixed-width tokens. Each layer
// segment is chunked independently so no token straddles a layer boundary;
// the last token of a segment is zero-padded.
struct TokenSegment {
  int64_t offset = 0;
  int64_t length = 0;
  int64_t token_count = 0;
};

struct TokenLayout {
  int64_t chunk = 0;  // C
  std::vector<TokenSegment> segments;

  static TokenLayout from_segments(const std::vector<int64_t>& lengths,
                                   int64_t chunk);
  // One segment per linear layer of the network: input, per residual block
  // its two inner layers, output. Weights and bias of a layer share a
  // segment (they are contiguous in the flat order).
  static TokenLayout for_arch(const InrArch& arch, int64_t chunk = 576);

  int64_t param_count() const;  // P
  int64_t token_count() const;  // k
  std::vector<int64_t> segment_lengths() const;
};

template <typename S>
grad::Array<S> tokenize(const std::vector<S>& theta, const TokenLayout& layout);
template <typename S>
std::vector<S> detokenize(const grad::Array<S>& tokens, const TokenLayout& layout);

// Transformer denoiser dimensions.
struct DenoiserConfig {
  int64_t hidden = 128;  // H
  int64_t chunk = 576;   // C, must match the layout
  int blocks = 4;
  int heads = 4;
};

// Parameters in declaration order; this order is also the serialization
// and optimizer-slot order.
template <typename S>
struct DenoiserParamsT {
  struct Block {
    grad::Array<S> ln1_gain, ln1_shift;
    grad::Array<S> wq, bq, wk, bk, wv, bv, wo, bo;
    grad::Array<S> ln2_gain, ln2_shift;
    grad::Array<S> ff_w1, ff_b1, ff_w2, ff_b2;
  };

  DenoiserConfig cfg;
  std::vector<grad::Array<S>> in_w;  // per token position, [C x H]
  std::vector<grad::Array<S>> in_b;  // per token position, [H]
  grad::Array<S> pos_enc;            // [k x H]
  grad::Array<S> t_w;                // [H x H], applied to the sinusoidal embedding
  grad::Array<S> t_b;                // [H]
  std::vector<Block> blocks;
  std::vector<grad::Array<S>> out_w;  // per token position, [H x C], zero-init
  std::vector<grad::Array<S>> out_b;  // per token position, [C], zero-init

  // Pointers plus names in declaration order.
  std::vector<grad::Array<S>*> param_ptrs();
  std::vector<const grad::Array<S>*> param_ptrs() const;
  std::vector<std::string> param_names() const;
  int64_t param_count() const;

  template <typename T>
  DenoiserParamsT<T> cast() const;
};
using DenoiserParams = DenoiserParamsT<float>;

// Output projections start at zero, so the initial prediction is the zero
// vector for any input.
template <typename S>
DenoiserParamsT<S> init_denoiser(const DenoiserConfig& cfg,
                                 const TokenLayout& layout, uint64_t seed);

// sin/cos pairs at frequencies 10000^(-2j/H).
std::vector<double> sinusoidal_embedding(int t, int64_t hidden);

// Forward graph over a position-major token stack [k*B x C] (row =
// position * B + b). `timesteps` holds one t per batch item.
template <typename S>
struct DenoiserGraph {
  std::vector<typename grad::Tape<S>::Id> params;  // declaration order
  std::vector<std::string> param_names;
  typename grad::Tape<S>::Id output;  // [k*B x C]
};
template <typename S>
DenoiserGraph<S> denoiser_graph(grad::Tape<S>& tape,
                                const DenoiserParamsT<S>& params,
                                const TokenLayout& layout,
                                const grad::Array<S>& noisy_tokens,
                                const std::vector<int>& timesteps);

// Single-vector x0 prediction (no gradients). Operates in whatever space
// the parameters were trained in; callers handle normalization.
template <typename S>
std::vector<S> denoise(const std::vector<S>& theta_star, int t,
                       const DenoiserParamsT<S>& params,
                       const TokenLayout& layout,
                       const NoiseSchedule& schedule);

// Per-coordinate dataset statistics; std floored at 1e-6.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> stdev;
};

// Everything needed to sample: trained weights plus the bookkeeping to map
// a flat vector back to an architecture.
struct DenoiserModel {
  InrArch arch;
  DenoiserConfig cfg;
  TokenLayout layout;
  NoiseSchedule schedule;
  NormStats norm;
  DenoiserParams params;
};

struct DiffusionTrainConfig {
  int epochs = 6000;
  int batch = 8;
  double lr = 1e-3;
  double lr_decay = 0.9;
  int decay_every = 200;  // epochs
  // Early stop once an epoch's mean loss drops below tol (0 = off). The
  // per-epoch estimate is noisy (few timestep draws), so this is a
  // "reached the target at least once" stop, not a convergence guarantee.
  double tol = 0.0;
  uint64_t seed = 0;
  int schedule_T = 1000;
  double beta_min = 1e-4;
  double beta_max = 1e-2;
  DenoiserConfig denoiser;
};

struct DiffusionTrainResult {
  DenoiserModel model;
  std::vector<float> loss_history;  // one mean loss per epoch
};

// Adam on MSE(theta_hat, theta) with a uniformly drawn timestep per
// example. The loss is normalized by true coordinates (P per example), not
// token slots, so the initial loss on normalized data is ~1.
DiffusionTrainResult train_diffusion(const std::vector<InrCheckpoint>& dataset,
                                     const DiffusionTrainConfig& cfg);

// DDIM update over an S-step subsequence, eta scaling the stochastic term.
// The denoise callback maps (theta_t, t) -> theta0_hat in normalized space.
std::vector<double> ddim_sample_core(
    const std::function<std::vector<double>(const std::vector<double>&, int)>&
        denoise_fn,
    int64_t dim, const NoiseSchedule& schedule, int steps, double eta,
    Rng& rng);

InrCheckpoint ddim_sample(const DenoiserModel& model, int steps, double eta,
                          uint64_t seed);

void save_denoiser(const DenoiserModel& model, const std::string& path);
DenoiserModel load_denoiser(const std::string& path);

}  // namespace treefield
