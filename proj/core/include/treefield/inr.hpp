#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "treefield/array.hpp"
#include "treefield/sampling.hpp"
#include "treefield/tape.hpp"

namespace treefield {

// Occupancy network f(x; theta): input linear -> relu, then L residual
// blocks h + W2*relu(W1*h + b1) + b2, then sigmoid(output linear).
struct InrArch {
  int d = 3;
  int D = 64;
  int L = 1;

  int64_t param_count() const;
  // Raw parameter payload (4 bytes per weight, header excluded); this is
  // the size used by compression ratios.
  int64_t checkpoint_size_bytes() const { return 4 * param_count(); }
  bool operator==(const InrArch&) const = default;
};

// Structured weights. Flatten order is canonical: input weight (row-major
// [d x D]), input bias, then per block W1, b1, W2, b2, then output weight,
// output bias.
template <typename S>
struct InrWeightsT {
  struct Block {
    grad::Array<S> w1, b1, w2, b2;
  };
  InrArch arch;
  grad::Array<S> w_in, b_in;
  std::vector<Block> blocks;
  grad::Array<S> w_out, b_out;

  template <typename T>
  InrWeightsT<T> cast() const {
    InrWeightsT<T> out;
    out.arch = arch;
    out.w_in = w_in.template cast<T>();
    out.b_in = b_in.template cast<T>();
    for (const Block& b : blocks)
      out.blocks.push_back({b.w1.template cast<T>(), b.b1.template cast<T>(),
                            b.w2.template cast<T>(), b.b2.template cast<T>()});
    out.w_out = w_out.template cast<T>();
    out.b_out = b_out.template cast<T>();
    return out;
  }
};
using InrWeights = InrWeightsT<float>;

template <typename S>
std::vector<S> flatten_weights(const InrWeightsT<S>& w);
template <typename S>
InrWeightsT<S> unflatten_weights(const InrArch& arch, const std::vector<S>& theta);

// He-uniform weights, zero biases.
InrWeights init_weights(const InrArch& arch, uint64_t seed);

struct InrCheckpoint {
  InrArch arch;
  std::vector<float> theta;  // length arch.param_count()
  std::string metadata;      // UTF-8, JSON by convention

  bool operator==(const InrCheckpoint&) const = default;
};

// Tape graph of the forward pass; returns ids of the registered parameter
// leaves (flatten order) and of the sigmoid output [M x 1].
template <typename S>
struct InrGraph {
  std::vector<typename grad::Tape<S>::Id> params;  // one id per layer array
  std::vector<std::string> param_names;
  typename grad::Tape<S>::Id output;
};
template <typename S>
InrGraph<S> inr_forward_graph(grad::Tape<S>& tape, const InrWeightsT<S>& w,
                              const grad::Array<S>& points);

// Inference path without a tape, chunked to bound memory. points [M x d],
// result [M x 1] in (0,1).
grad::ArrayF inr_forward(const InrWeights& w, const grad::ArrayF& points);
grad::ArrayF inr_forward(const InrCheckpoint& ckpt, const grad::ArrayF& points);

struct FitConfig {
  int max_iters = 5000;
  double lr = 1e-3;
  int64_t batch = 16384;
  uint64_t seed = 0;
  // Early stop once the window-100 running loss drops below tol (0 = off).
  double tol = 0.0;
  double surface_fraction = 0.5;
  double band = 0.05;
  // When set, initialization uses exactly this seed (shared-init protocol
  // for weight-space comparisons); otherwise it derives from `seed`.
  std::optional<uint64_t> init_seed;
  std::string source_id;
  // Called after every optimizer step with the 1-based iteration index and
  // the current weights; used for snapshotting. Not part of determinism.
  std::function<void(int, const InrWeightsT<float>&)> observer;
};

struct FitResult {
  InrCheckpoint checkpoint;
  double final_loss = 0.0;  // running mean over the last (up to) 100 iters
  int iterations = 0;
  std::vector<float> loss_history;
};

// Minimizes MSE(f(x), oracle targets) with Adam on fresh sample batches.
// Deterministic per cfg.seed. Non-finite loss raises NumericError naming
// the failing iteration.
FitResult fit_inr(const Oracle& oracle, const InrArch& arch, const FitConfig& cfg);

// Binary format: magic "INR1", u32 d, D, L, P, P little-endian f32 in
// canonical order, u64 metadata byte length, metadata.
void save_checkpoint(const InrCheckpoint& ckpt, const std::string& path);
InrCheckpoint load_checkpoint(const std::string& path);

}  // namespace treefield
