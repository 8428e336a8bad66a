#include "treefield/tape.hpp"

#include <algorithm>
#include <cmath>

#include "treefield/gemm.hpp"

namespace treefield::grad {

namespace {
constexpr double kLayerNormEps = 1e-5;

template <typename S>
void require_2d(const Array<S>& a, const char* op) {
  if (a.rank() != 2) throw ShapeError(std::string(op) + ": expected 2D array, got " + shape_str(a.shape));
}
}  // namespace

template <typename S>
typename Tape<S>::Id Tape<S>::push(const char* op, bool requires_grad, Array<S> value,
                                   std::function<void(Tape&)> back) {
  vals_.push_back(std::move(value));
  nodes_.push_back(Node{op, requires_grad, std::move(back)});
  grads_valid_ = false;
  Id id = static_cast<Id>(vals_.size() - 1);
  check_finite_value(id);
  return id;
}

template <typename S>
void Tape<S>::check_finite_value(Id id) const {
  if (!vals_[id].all_finite())
    throw NumericError(std::string("non-finite values in forward output of op '") +
                       nodes_[id].op + "'");
}

template <typename S>
Array<S>& Tape<S>::grad_buf(Id id) {
  return grads_[id];
}

template <typename S>
const Array<S>& Tape<S>::gradient(Id id) const {
  if (!grads_valid_) throw ShapeError("Tape::gradient: call backward() first");
  return grads_[id];
}

template <typename S>
typename Tape<S>::Id Tape<S>::leaf(Array<S> value) {
  return push("leaf", true, std::move(value), {});
}

template <typename S>
typename Tape<S>::Id Tape<S>::constant(Array<S> value) {
  return push("constant", false, std::move(value), {});
}

template <typename S>
typename Tape<S>::Id Tape<S>::linear(Id x, Id w, Id b) {
  const Array<S>& xv = vals_[x];
  const Array<S>& wv = vals_[w];
  const Array<S>& bv = vals_[b];
  require_2d(xv, "linear");
  require_2d(wv, "linear");
  const int64_t n = xv.shape[0], in = xv.shape[1];
  const int64_t out = wv.shape[1];
  if (wv.shape[0] != in)
    throw ShapeError("linear: inner dimensions disagree, input " + shape_str(xv.shape) +
                     " vs weight " + shape_str(wv.shape));
  if (bv.numel() != out)
    throw ShapeError("linear: bias length " + std::to_string(bv.numel()) +
                     " does not match output width " + std::to_string(out));

  Array<S> y({n, out}, S(0));
  for (int64_t i = 0; i < n; ++i) {
    S* row = y.data.data() + i * out;
    for (int64_t j = 0; j < out; ++j) row[j] = bv.data[j];
  }
  gemm_nn(xv.data.data(), wv.data.data(), y.data.data(), n, in, out);

  bool rg = needs(x) || needs(w) || needs(b);
  Id y_id = push("linear", rg, std::move(y), {});
  nodes_[y_id].back = [x, w, b, y_id, n, in, out](Tape& t) {
    const Array<S>& dy = t.grads_[y_id];
    if (t.needs(x))
      gemm_nt(dy.data.data(), t.vals_[w].data.data(), t.grads_[x].data.data(), n, out, in);
    if (t.needs(w))
      gemm_tn(t.vals_[x].data.data(), dy.data.data(), t.grads_[w].data.data(), in, n, out);
    if (t.needs(b)) {
      Array<S>& db = t.grads_[b];
      for (int64_t i = 0; i < n; ++i) {
        const S* row = dy.data.data() + i * out;
        for (int64_t j = 0; j < out; ++j) db.data[j] += row[j];
      }
    }
  };
  return y_id;
}

template <typename S>
typename Tape<S>::Id Tape<S>::matmul(Id a, Id b) {
  const Array<S>& av = vals_[a];
  const Array<S>& bv = vals_[b];
  require_2d(av, "matmul");
  require_2d(bv, "matmul");
  const int64_t m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  if (bv.shape[0] != k)
    throw ShapeError("matmul: inner dimensions disagree " + shape_str(av.shape) + " * " +
                     shape_str(bv.shape));
  Array<S> y({m, n}, S(0));
  gemm_nn(av.data.data(), bv.data.data(), y.data.data(), m, k, n);
  bool rg = needs(a) || needs(b);
  Id out = push("matmul", rg, std::move(y), {});
  nodes_[out].back = [a, b, out, m, k, n](Tape& t) {
    const Array<S>& dy = t.grads_[out];
    if (t.needs(a))
      gemm_nt(dy.data.data(), t.vals_[b].data.data(), t.grads_[a].data.data(), m, n, k);
    if (t.needs(b))
      gemm_tn(t.vals_[a].data.data(), dy.data.data(), t.grads_[b].data.data(), k, m, n);
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::relu(Id x) {
  Array<S> y = vals_[x];
  for (S& v : y.data) v = v > S(0) ? v : S(0);
  Id out = push("relu", needs(x), std::move(y), {});
  nodes_[out].back = [x, out](Tape& t) {
    if (!t.needs(x)) return;
    const Array<S>& xv = t.vals_[x];
    const Array<S>& dy = t.grads_[out];
    Array<S>& dx = t.grads_[x];
    for (int64_t i = 0; i < xv.numel(); ++i)
      if (xv.data[i] > S(0)) dx.data[i] += dy.data[i];
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::sigmoid(Id x) {
  Array<S> y = vals_[x];
  for (S& v : y.data) v = S(1) / (S(1) + std::exp(-v));
  Id out = push("sigmoid", needs(x), std::move(y), {});
  nodes_[out].back = [x, out](Tape& t) {
    if (!t.needs(x)) return;
    const Array<S>& yv = t.vals_[out];
    const Array<S>& dy = t.grads_[out];
    Array<S>& dx = t.grads_[x];
    for (int64_t i = 0; i < yv.numel(); ++i)
      dx.data[i] += dy.data[i] * yv.data[i] * (S(1) - yv.data[i]);
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::add(Id a, Id b) {
  const Array<S>& av = vals_[a];
  const Array<S>& bv = vals_[b];
  if (av.shape != bv.shape)
    throw ShapeError("add: shape mismatch " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  Array<S> y = av;
  for (int64_t i = 0; i < y.numel(); ++i) y.data[i] += bv.data[i];
  Id out = push("add", needs(a) || needs(b), std::move(y), {});
  nodes_[out].back = [a, b, out](Tape& t) {
    const Array<S>& dy = t.grads_[out];
    if (t.needs(a)) {
      Array<S>& da = t.grads_[a];
      for (int64_t i = 0; i < dy.numel(); ++i) da.data[i] += dy.data[i];
    }
    if (t.needs(b)) {
      Array<S>& db = t.grads_[b];
      for (int64_t i = 0; i < dy.numel(); ++i) db.data[i] += dy.data[i];
    }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::scale(Id x, S factor) {
  Array<S> y = vals_[x];
  for (S& v : y.data) v *= factor;
  Id out = push("scale", needs(x), std::move(y), {});
  nodes_[out].back = [x, out, factor](Tape& t) {
    if (!t.needs(x)) return;
    const Array<S>& dy = t.grads_[out];
    Array<S>& dx = t.grads_[x];
    for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += factor * dy.data[i];
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::layer_norm(Id x, Id gain, Id shift) {
  const Array<S>& xv = vals_[x];
  require_2d(xv, "layer_norm");
  const int64_t n = xv.shape[0], h = xv.shape[1];
  if (vals_[gain].numel() != h || vals_[shift].numel() != h)
    throw ShapeError("layer_norm: gain/shift length must equal last dim " + std::to_string(h));

  Array<S> y({n, h}, S(0));
  Array<S> xhat({n, h}, S(0));
  Array<S> inv_std({n}, S(0));
  const Array<S>& g = vals_[gain];
  const Array<S>& s = vals_[shift];
  for (int64_t i = 0; i < n; ++i) {
    const S* row = xv.data.data() + i * h;
    S mu = S(0);
    for (int64_t j = 0; j < h; ++j) mu += row[j];
    mu /= S(h);
    S var = S(0);
    for (int64_t j = 0; j < h; ++j) {
      const S d = row[j] - mu;
      var += d * d;
    }
    var /= S(h);
    const S inv = S(1) / std::sqrt(var + S(kLayerNormEps));
    inv_std.data[i] = inv;
    S* xh = xhat.data.data() + i * h;
    S* yr = y.data.data() + i * h;
    for (int64_t j = 0; j < h; ++j) {
      xh[j] = (row[j] - mu) * inv;
      yr[j] = xh[j] * g.data[j] + s.data[j];
    }
  }

  bool rg = needs(x) || needs(gain) || needs(shift);
  Id out = push("layer_norm", rg, std::move(y), {});
  // Saved tensors live in the closure; the tape only stores the output.
  nodes_[out].back = [x, gain, shift, out, n, h, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](Tape& t) {
    const Array<S>& dy = t.grads_[out];
    const Array<S>& g = t.vals_[gain];
    if (t.needs(gain) || t.needs(shift)) {
      Array<S>& dg = t.grads_[gain];
      Array<S>& ds = t.grads_[shift];
      for (int64_t i = 0; i < n; ++i) {
        const S* dyr = dy.data.data() + i * h;
        const S* xh = xhat.data.data() + i * h;
        for (int64_t j = 0; j < h; ++j) {
          dg.data[j] += dyr[j] * xh[j];
          ds.data[j] += dyr[j];
        }
      }
    }
    if (t.needs(x)) {
      Array<S>& dx = t.grads_[x];
      for (int64_t i = 0; i < n; ++i) {
        const S* dyr = dy.data.data() + i * h;
        const S* xh = xhat.data.data() + i * h;
        S mean_dxhat = S(0), mean_dxhat_xhat = S(0);
        for (int64_t j = 0; j < h; ++j) {
          const S dxh = dyr[j] * g.data[j];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xh[j];
        }
        mean_dxhat /= S(h);
        mean_dxhat_xhat /= S(h);
        S* dxr = dx.data.data() + i * h;
        const S inv = inv_std.data[i];
        for (int64_t j = 0; j < h; ++j) {
          const S dxh = dyr[j] * g.data[j];
          dxr[j] += inv * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
      }
    }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::softmax_lastdim(Id x) {
  const Array<S>& xv = vals_[x];
  require_2d(xv, "softmax_lastdim");
  const int64_t n = xv.shape[0], k = xv.shape[1];
  Array<S> y({n, k}, S(0));
  for (int64_t i = 0; i < n; ++i) {
    const S* row = xv.data.data() + i * k;
    S* yr = y.data.data() + i * k;
    S mx = row[0];
    for (int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (int64_t j = 0; j < k; ++j) {
      yr[j] = std::exp(row[j] - mx);
      sum += yr[j];
    }
    const S inv = S(1) / sum;
    for (int64_t j = 0; j < k; ++j) yr[j] *= inv;
  }
  Id out = push("softmax_lastdim", needs(x), std::move(y), {});
  nodes_[out].back = [x, out, n, k](Tape& t) {
    if (!t.needs(x)) return;
    const Array<S>& yv = t.vals_[out];
    const Array<S>& dy = t.grads_[out];
    Array<S>& dx = t.grads_[x];
    for (int64_t i = 0; i < n; ++i) {
      const S* yr = yv.data.data() + i * k;
      const S* dyr = dy.data.data() + i * k;
      S dot = S(0);
      for (int64_t j = 0; j < k; ++j) dot += yr[j] * dyr[j];
      S* dxr = dx.data.data() + i * k;
      for (int64_t j = 0; j < k; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::qk_scores(Id q, Id k, int64_t batch, int64_t seq, int heads) {
  const Array<S>& qv = vals_[q];
  const Array<S>& kv = vals_[k];
  require_2d(qv, "qk_scores");
  if (qv.shape != kv.shape)
    throw ShapeError("qk_scores: q/k shape mismatch");
  const int64_t width = qv.shape[1];
  if (width % heads != 0)
    throw ConfigError("qk_scores: width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (qv.shape[0] != seq * batch)
    throw ShapeError("qk_scores: expected seq*batch rows");
  const int64_t dh = width / heads;
  const S sc = S(1) / static_cast<S>(std::sqrt(static_cast<double>(dh)));

  Array<S> scores({batch * heads * seq, seq}, S(0));
  for (int64_t b = 0; b < batch; ++b)
    for (int hh = 0; hh < heads; ++hh)
      for (int64_t i = 0; i < seq; ++i) {
        const S* qrow = qv.data.data() + (i * batch + b) * width + hh * dh;
        S* srow = scores.data.data() + ((b * heads + hh) * seq + i) * seq;
        for (int64_t j = 0; j < seq; ++j) {
          const S* krow = kv.data.data() + (j * batch + b) * width + hh * dh;
          S acc = S(0);
          for (int64_t c = 0; c < dh; ++c) acc += qrow[c] * krow[c];
          srow[j] = acc * sc;
        }
      }

  Id out = push("qk_scores", needs(q) || needs(k), std::move(scores), {});
  nodes_[out].back = [q, k, out, batch, seq, heads, dh, sc](Tape& t) {
    const Array<S>& ds = t.grads_[out];
    const Array<S>& qv = t.vals_[q];
    const Array<S>& kv = t.vals_[k];
    const int64_t width = qv.shape[1];
    for (int64_t b = 0; b < batch; ++b)
      for (int hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < seq; ++i) {
          const S* dsrow = ds.data.data() + ((b * heads + hh) * seq + i) * seq;
          if (t.needs(q)) {
            S* dq = t.grads_[q].data.data() + (i * batch + b) * width + hh * dh;
            for (int64_t j = 0; j < seq; ++j) {
              const S g = dsrow[j] * sc;
              const S* krow = kv.data.data() + (j * batch + b) * width + hh * dh;
              for (int64_t c = 0; c < dh; ++c) dq[c] += g * krow[c];
            }
          }
          if (t.needs(k)) {
            const S* qrow = qv.data.data() + (i * batch + b) * width + hh * dh;
            for (int64_t j = 0; j < seq; ++j) {
              const S g = dsrow[j] * sc;
              S* dk = t.grads_[k].data.data() + (j * batch + b) * width + hh * dh;
              for (int64_t c = 0; c < dh; ++c) dk[c] += g * qrow[c];
            }
          }
        }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::attn_mix(Id probs, Id v, int64_t batch, int64_t seq, int heads) {
  const Array<S>& pv = vals_[probs];
  const Array<S>& vv = vals_[v];
  require_2d(pv, "attn_mix");
  require_2d(vv, "attn_mix");
  const int64_t width = vv.shape[1];
  if (width % heads != 0) throw ConfigError("attn_mix: width not divisible by heads");
  const int64_t dh = width / heads;
  if (pv.shape[0] != batch * heads * seq || pv.shape[1] != seq)
    throw ShapeError("attn_mix: probs shape mismatch");
  if (vv.shape[0] != seq * batch) throw ShapeError("attn_mix: expected seq*batch rows in v");

  Array<S> y({seq * batch, width}, S(0));
  for (int64_t b = 0; b < batch; ++b)
    for (int hh = 0; hh < heads; ++hh)
      for (int64_t i = 0; i < seq; ++i) {
        const S* prow = pv.data.data() + ((b * heads + hh) * seq + i) * seq;
        S* yrow = y.data.data() + (i * batch + b) * width + hh * dh;
        for (int64_t j = 0; j < seq; ++j) {
          const S p = prow[j];
          const S* vrow = vv.data.data() + (j * batch + b) * width + hh * dh;
          for (int64_t c = 0; c < dh; ++c) yrow[c] += p * vrow[c];
        }
      }

  Id out = push("attn_mix", needs(probs) || needs(v), std::move(y), {});
  nodes_[out].back = [probs, v, out, batch, seq, heads, dh](Tape& t) {
    const Array<S>& dy = t.grads_[out];
    const Array<S>& pv = t.vals_[probs];
    const Array<S>& vv = t.vals_[v];
    const int64_t width = vv.shape[1];
    for (int64_t b = 0; b < batch; ++b)
      for (int hh = 0; hh < heads; ++hh)
        for (int64_t i = 0; i < seq; ++i) {
          const S* dyrow = dy.data.data() + (i * batch + b) * width + hh * dh;
          if (t.needs(probs)) {
            S* dp = t.grads_[probs].data.data() + ((b * heads + hh) * seq + i) * seq;
            for (int64_t j = 0; j < seq; ++j) {
              const S* vrow = vv.data.data() + (j * batch + b) * width + hh * dh;
              S acc = S(0);
              for (int64_t c = 0; c < dh; ++c) acc += dyrow[c] * vrow[c];
              dp[j] += acc;
            }
          }
          if (t.needs(v)) {
            const S* prow = pv.data.data() + ((b * heads + hh) * seq + i) * seq;
            for (int64_t j = 0; j < seq; ++j) {
              const S p = prow[j];
              S* dv = t.grads_[v].data.data() + (j * batch + b) * width + hh * dh;
              for (int64_t c = 0; c < dh; ++c) dv[c] += p * dyrow[c];
            }
          }
        }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::slice_rows(Id x, int64_t row0, int64_t nrows) {
  const Array<S>& xv = vals_[x];
  require_2d(xv, "slice_rows");
  const int64_t cols = xv.shape[1];
  if (row0 < 0 || row0 + nrows > xv.shape[0])
    throw ShapeError("slice_rows: range out of bounds");
  Array<S> y({nrows, cols}, S(0));
  std::copy_n(xv.data.data() + row0 * cols, nrows * cols, y.data.data());
  Id out = push("slice_rows", needs(x), std::move(y), {});
  nodes_[out].back = [x, out, row0, nrows, cols](Tape& t) {
    if (!t.needs(x)) return;
    const Array<S>& dy = t.grads_[out];
    S* dst = t.grads_[x].data.data() + row0 * cols;
    for (int64_t i = 0; i < nrows * cols; ++i) dst[i] += dy.data[i];
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::concat_rows(const std::vector<Id>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: empty input");
  const int64_t cols = vals_[parts[0]].shape[1];
  int64_t total = 0;
  bool rg = false;
  for (Id p : parts) {
    require_2d(vals_[p], "concat_rows");
    if (vals_[p].shape[1] != cols) throw ShapeError("concat_rows: column mismatch");
    total += vals_[p].shape[0];
    rg = rg || needs(p);
  }
  Array<S> y({total, cols}, S(0));
  int64_t row = 0;
  for (Id p : parts) {
    const Array<S>& pv = vals_[p];
    std::copy_n(pv.data.data(), pv.numel(), y.data.data() + row * cols);
    row += pv.shape[0];
  }
  Id out = push("concat_rows", rg, std::move(y), {});
  nodes_[out].back = [parts, out, cols](Tape& t) {
    const Array<S>& dy = t.grads_[out];
    int64_t row = 0;
    for (Id p : parts) {
      const int64_t nr = t.vals_[p].shape[0];
      if (t.needs(p)) {
        S* dst = t.grads_[p].data.data();
        const S* src = dy.data.data() + row * cols;
        for (int64_t i = 0; i < nr * cols; ++i) dst[i] += src[i];
      }
      row += nr;
    }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::broadcast_add_rows(Id x, Id per_pos, int64_t batch) {
  const Array<S>& xv = vals_[x];
  const Array<S>& pv = vals_[per_pos];
  require_2d(xv, "broadcast_add_rows");
  require_2d(pv, "broadcast_add_rows");
  const int64_t cols = xv.shape[1];
  const int64_t npos = pv.shape[0];
  if (pv.shape[1] != cols || xv.shape[0] != npos * batch)
    throw ShapeError("broadcast_add_rows: shape mismatch");
  Array<S> y = xv;
  for (int64_t p = 0; p < npos; ++p)
    for (int64_t b = 0; b < batch; ++b) {
      S* row = y.data.data() + (p * batch + b) * cols;
      const S* add = pv.data.data() + p * cols;
      for (int64_t c = 0; c < cols; ++c) row[c] += add[c];
    }
  Id out = push("broadcast_add_rows", needs(x) || needs(per_pos), std::move(y), {});
  nodes_[out].back = [x, per_pos, out, batch, npos, cols](Tape& t) {
    const Array<S>& dy = t.grads_[out];
    if (t.needs(x)) {
      Array<S>& dx = t.grads_[x];
      for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i];
    }
    if (t.needs(per_pos)) {
      Array<S>& dp = t.grads_[per_pos];
      for (int64_t p = 0; p < npos; ++p)
        for (int64_t b = 0; b < batch; ++b) {
          const S* row = dy.data.data() + (p * batch + b) * cols;
          S* dst = dp.data.data() + p * cols;
          for (int64_t c = 0; c < cols; ++c) dst[c] += row[c];
        }
    }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::broadcast_add_batch(Id x, Id per_item, int64_t batch) {
  const Array<S>& xv = vals_[x];
  const Array<S>& ev = vals_[per_item];
  require_2d(xv, "broadcast_add_batch");
  require_2d(ev, "broadcast_add_batch");
  const int64_t cols = xv.shape[1];
  if (ev.shape[0] != batch || ev.shape[1] != cols || xv.shape[0] % batch != 0)
    throw ShapeError("broadcast_add_batch: shape mismatch");
  const int64_t npos = xv.shape[0] / batch;
  Array<S> y = xv;
  for (int64_t p = 0; p < npos; ++p)
    for (int64_t b = 0; b < batch; ++b) {
      S* row = y.data.data() + (p * batch + b) * cols;
      const S* add = ev.data.data() + b * cols;
      for (int64_t c = 0; c < cols; ++c) row[c] += add[c];
    }
  Id out = push("broadcast_add_batch", needs(x) || needs(per_item), std::move(y), {});
  nodes_[out].back = [x, per_item, out, batch, npos, cols](Tape& t) {
    const Array<S>& dy = t.grads_[out];
    if (t.needs(x)) {
      Array<S>& dx = t.grads_[x];
      for (int64_t i = 0; i < dy.numel(); ++i) dx.data[i] += dy.data[i];
    }
    if (t.needs(per_item)) {
      Array<S>& de = t.grads_[per_item];
      for (int64_t p = 0; p < npos; ++p)
        for (int64_t b = 0; b < batch; ++b) {
          const S* row = dy.data.data() + (p * batch + b) * cols;
          S* dst = de.data.data() + b * cols;
          for (int64_t c = 0; c < cols; ++c) dst[c] += row[c];
        }
    }
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::mse(Id pred, const Array<S>& target) {
  const Array<S>& pv = vals_[pred];
  if (pv.shape != target.shape)
    throw ShapeError("mse: prediction " + shape_str(pv.shape) + " vs target " +
                     shape_str(target.shape));
  const int64_t n = pv.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pv.data[i]) - static_cast<double>(target.data[i]);
    acc += d * d;
  }
  Array<S> y = Array<S>::scalar(static_cast<S>(acc / static_cast<double>(n)));
  Id out = push("mse", needs(pred), std::move(y), {});
  nodes_[out].back = [pred, out, target, n](Tape& t) {
    if (!t.needs(pred)) return;
    const S g = t.grads_[out].data[0] * S(2) / static_cast<S>(n);
    const Array<S>& pv = t.vals_[pred];
    Array<S>& dp = t.grads_[pred];
    for (int64_t i = 0; i < n; ++i) dp.data[i] += g * (pv.data[i] - target.data[i]);
  };
  return out;
}

template <typename S>
typename Tape<S>::Id Tape<S>::sum(Id x) {
  const Array<S>& xv = vals_[x];
  double acc = 0.0;
  for (S v : xv.data) acc += static_cast<double>(v);
  Id out = push("sum", needs(x), Array<S>::scalar(static_cast<S>(acc)), {});
  nodes_[out].back = [x, out](Tape& t) {
    if (!t.needs(x)) return;
    const S g = t.grads_[out].data[0];
    Array<S>& dx = t.grads_[x];
    for (int64_t i = 0; i < dx.numel(); ++i) dx.data[i] += g;
  };
  return out;
}

template <typename S>
void Tape<S>::backward(Id loss) {
  if (vals_[loss].numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(vals_[loss].shape));
  grads_.clear();
  grads_.reserve(vals_.size());
  for (const Array<S>& v : vals_) grads_.push_back(Array<S>::zeros(v.shape));
  grads_[loss].data[0] = S(1);
  for (int64_t i = loss; i >= 0; --i) {
    if (nodes_[i].back && nodes_[i].requires_grad) nodes_[i].back(*this);
  }
  for (size_t i = 0; i < grads_.size(); ++i) {
    if (nodes_[i].requires_grad && !grads_[i].all_finite())
      throw NumericError(std::string("non-finite gradient for output of op '") + nodes_[i].op +
                         "'");
  }
  grads_valid_ = true;
}

template <typename S>
typename Tape<S>::Id multihead_self_attention(Tape<S>& tape, typename Tape<S>::Id tokens,
                                              const AttentionIds<S>& w, int64_t batch,
                                              int64_t seq, int heads) {
  const int64_t width = tape.value(tokens).shape[1];
  if (width % heads != 0)
    throw ConfigError("multihead_self_attention: hidden width " + std::to_string(width) +
                      " not divisible by " + std::to_string(heads) + " heads");
  auto q = tape.linear(tokens, w.wq, w.bq);
  auto k = tape.linear(tokens, w.wk, w.bk);
  auto v = tape.linear(tokens, w.wv, w.bv);
  auto scores = tape.qk_scores(q, k, batch, seq, heads);
  auto probs = tape.softmax_lastdim(scores);
  auto mixed = tape.attn_mix(probs, v, batch, seq, heads);
  return tape.linear(mixed, w.wo, w.bo);
}

template class Tape<float>;
template class Tape<double>;
template typename Tape<float>::Id multihead_self_attention<float>(Tape<float>&,
                                                                  Tape<float>::Id,
                                                                  const AttentionIds<float>&,
                                                                  int64_t, int64_t, int);
template typename Tape<double>::Id multihead_self_attention<double>(Tape<double>&,
                                                                    Tape<double>::Id,
                                                                    const AttentionIds<double>&,
                                                                    int64_t, int64_t, int);

}  // namespace treefield::grad
