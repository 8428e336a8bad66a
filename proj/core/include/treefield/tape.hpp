#pragma once

#include <functional>
#include <string>
#include <vector>

#include "treefield/array.hpp"

namespace treefield::grad {

// Reverse-mode tape. Each op appends one node holding the forward value and
// a closure that scatters vector-Jacobian products into the input grads.
// backward() replays nodes in exact reverse recording order, so gradient
// accumulation order is fixed and runs are reproducible.
//
// Token stacks use a position-major row layout: a [K x B x H] batch of K
// tokens is stored as a 2D array with row = position * batch + b. Positions
// are then contiguous row blocks, which keeps the per-position projections
// of the denoiser plain `linear` calls on `slice_rows` views.
template <typename S>
class Tape {
 public:
  using Id = int32_t;

  // Leaves. `leaf` tracks gradients (parameters), `constant` does not
  // (input batches, targets).
  Id leaf(Array<S> value);
  Id constant(Array<S> value);

  // y[N x O] = x[N x I] * w[I x O] + b[O]
  Id linear(Id x, Id w, Id b);
  // c[M x N] = a[M x K] * b[K x N]
  Id matmul(Id a, Id b);

  Id relu(Id x);
  Id sigmoid(Id x);
  Id add(Id a, Id b);
  Id scale(Id x, S factor);

  // Row-wise normalization over the last dimension, eps = 1e-5.
  Id layer_norm(Id x, Id gain, Id shift);
  Id softmax_lastdim(Id x);

  // Scaled dot-product attention pieces over the position-major layout.
  // q,k,v are [seq*batch x width]; scores are [(batch*heads*seq) x seq],
  // scaled by 1/sqrt(width/heads).
  Id qk_scores(Id q, Id k, int64_t batch, int64_t seq, int heads);
  Id attn_mix(Id probs, Id v, int64_t batch, int64_t seq, int heads);

  Id slice_rows(Id x, int64_t row0, int64_t nrows);
  Id concat_rows(const std::vector<Id>& parts);

  // out[pos*batch+b, :] = x[pos*batch+b, :] + per_pos[pos, :]
  Id broadcast_add_rows(Id x, Id per_pos, int64_t batch);
  // out[pos*batch+b, :] = x[pos*batch+b, :] + per_item[b, :]
  Id broadcast_add_batch(Id x, Id per_item, int64_t batch);

  // Mean squared error against a constant target. Scalar output.
  Id mse(Id pred, const Array<S>& target);
  Id sum(Id x);

  const Array<S>& value(Id id) const { return vals_[id]; }
  const Array<S>& gradient(Id id) const;

  // Seeds d(loss)/d(loss) = 1 and replays the tape backward. Checks every
  // accumulated gradient for non-finite values (hard error).
  void backward(Id loss);

  size_t size() const { return vals_.size(); }

 private:
  struct Node {
    const char* op;
    bool requires_grad;
    std::function<void(Tape&)> back;  // empty for leaves/constants
  };

  Id push(const char* op, bool requires_grad, Array<S> value,
          std::function<void(Tape&)> back);
  void check_finite_value(Id id) const;
  Array<S>& grad_buf(Id id);
  bool needs(Id id) const { return nodes_[id].requires_grad; }

  std::vector<Array<S>> vals_;
  std::vector<Array<S>> grads_;
  std::vector<Node> nodes_;
  bool grads_valid_ = false;
};

// Weight ids for one attention block, all [H x H] / [H].
template <typename S>
struct AttentionIds {
  typename Tape<S>::Id wq, bq, wk, bk, wv, bv, wo, bo;
};

// Full multi-head self-attention over a position-major token stack:
// per-head scaled dot-product attention, concatenated, output-projected.
template <typename S>
typename Tape<S>::Id multihead_self_attention(Tape<S>& tape, typename Tape<S>::Id tokens,
                                              const AttentionIds<S>& w, int64_t batch,
                                              int64_t seq, int heads);

}  // namespace treefield::grad
