#include "treefield/diffusion.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "treefield/adam.hpp"
#include "treefield/errors.hpp"

namespace treefield {

using grad::Array;
using grad::Tape;

// ---------------------------------------------------------------- schedule

NoiseSchedule NoiseSchedule::linear(int T, double beta_min, double beta_max) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max)
    throw ConfigError("schedule: need 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.beta_.assign(static_cast<size_t>(T) + 1, 0.0);
  s.alpha_bar_.assign(static_cast<size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    s.beta_[t] = T == 1 ? beta_min
                        : beta_min + (beta_max - beta_min) *
                                         static_cast<double>(t - 1) /
                                         static_cast<double>(T - 1);
    s.alpha_bar_[t] = s.alpha_bar_[t - 1] * (1.0 - s.beta_[t]);
  }
  return s;
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T) throw ShapeError("schedule: t out of range [1, T]");
  return beta_[t];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T) throw ShapeError("schedule: t out of range [0, T]");
  return alpha_bar_[t];
}

template <typename S>
std::vector<S> forward_noise(const std::vector<S>& theta0, int t,
                             const std::vector<S>& eps,
                             const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T)
    throw ShapeError("forward_noise: t out of range [1, T]");
  if (theta0.size() != eps.size())
    throw ShapeError("forward_noise: theta0/eps length mismatch");
  const double ab = schedule.alpha_bar(t);
  const double a = std::sqrt(ab);
  const double b = std::sqrt(1.0 - ab);
  std::vector<S> out(theta0.size());
  for (size_t i = 0; i < theta0.size(); ++i)
    out[i] = static_cast<S>(a * theta0[i] + b * eps[i]);
  return out;
}

// ------------------------------------------------------------ token layout

TokenLayout TokenLayout::from_segments(const std::vector<int64_t>& lengths,
                                       int64_t chunk) {
  if (chunk < 1) throw ConfigError("token layout: chunk size must be >= 1");
  if (lengths.empty()) throw ConfigError("token layout: no segments");
  TokenLayout layout;
  layout.chunk = chunk;
  int64_t offset = 0;
  for (int64_t len : lengths) {
    if (len < 1) throw ConfigError("token layout: segment length must be >= 1");
    TokenSegment seg;
    seg.offset = offset;
    seg.length = len;
    seg.token_count = (len + chunk - 1) / chunk;
    layout.segments.push_back(seg);
    offset += len;
  }
  return layout;
}

TokenLayout TokenLayout::for_arch(const InrArch& arch, int64_t chunk) {
  std::vector<int64_t> lengths;
  lengths.push_back(static_cast<int64_t>(arch.d) * arch.D + arch.D);
  for (int l = 0; l < arch.L; ++l) {
    lengths.push_back(static_cast<int64_t>(arch.D) * arch.D + arch.D);
    lengths.push_back(static_cast<int64_t>(arch.D) * arch.D + arch.D);
  }
  lengths.push_back(arch.D + 1);
  TokenLayout layout = from_segments(lengths, chunk);
  if (layout.param_count() != arch.param_count())
    throw ShapeError("token layout does not cover the architecture");
  return layout;
}

int64_t TokenLayout::param_count() const {
  int64_t p = 0;
  for (const TokenSegment& s : segments) p += s.length;
  return p;
}

int64_t TokenLayout::token_count() const {
  int64_t k = 0;
  for (const TokenSegment& s : segments) k += s.token_count;
  return k;
}

std::vector<int64_t> TokenLayout::segment_lengths() const {
  std::vector<int64_t> out;
  for (const TokenSegment& s : segments) out.push_back(s.length);
  return out;
}

template <typename S>
Array<S> tokenize(const std::vector<S>& theta, const TokenLayout& layout) {
  if (static_cast<int64_t>(theta.size()) != layout.param_count())
    throw ShapeError("tokenize: theta length does not match layout");
  const int64_t C = layout.chunk;
  Array<S> tokens = Array<S>::zeros({layout.token_count(), C});
  int64_t row = 0;
  for (const TokenSegment& seg : layout.segments) {
    for (int64_t tk = 0; tk < seg.token_count; ++tk, ++row) {
      const int64_t begin = seg.offset + tk * C;
      const int64_t count = std::min(C, seg.offset + seg.length - begin);
      std::copy_n(theta.data() + begin, count, tokens.data.data() + row * C);
    }
  }
  return tokens;
}

template <typename S>
std::vector<S> detokenize(const Array<S>& tokens, const TokenLayout& layout) {
  const int64_t C = layout.chunk;
  if (tokens.rank() != 2 || tokens.shape[0] != layout.token_count() ||
      tokens.shape[1] != C)
    throw ShapeError("detokenize: token matrix does not match layout");
  std::vector<S> theta(static_cast<size_t>(layout.param_count()));
  int64_t row = 0;
  for (const TokenSegment& seg : layout.segments) {
    for (int64_t tk = 0; tk < seg.token_count; ++tk, ++row) {
      const int64_t begin = seg.offset + tk * C;
      const int64_t count = std::min(C, seg.offset + seg.length - begin);
      std::copy_n(tokens.data.data() + row * C, count, theta.data() + begin);
    }
  }
  return theta;
}

// -------------------------------------------------------------- parameters

namespace {

void check_denoiser_cfg(const DenoiserConfig& cfg) {
  if (cfg.hidden < 1 || cfg.chunk < 1 || cfg.blocks < 1 || cfg.heads < 1)
    throw ConfigError("denoiser: dimensions must be positive");
  if (cfg.hidden % cfg.heads != 0)
    throw ConfigError("denoiser: hidden size must be divisible by head count");
}

template <typename S>
Array<S> xavier(Rng& rng, int64_t rows, int64_t cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Array<S> w = Array<S>::zeros({rows, cols});
  for (S& v : w.data) v = static_cast<S>(rng.uniform(-limit, limit));
  return w;
}

}  // namespace

template <typename S>
std::vector<Array<S>*> DenoiserParamsT<S>::param_ptrs() {
  std::vector<Array<S>*> out;
  for (auto& a : in_w) out.push_back(&a);
  for (auto& a : in_b) out.push_back(&a);
  out.push_back(&pos_enc);
  out.push_back(&t_w);
  out.push_back(&t_b);
  for (Block& b : blocks) {
    out.push_back(&b.ln1_gain);
    out.push_back(&b.ln1_shift);
    out.push_back(&b.wq);
    out.push_back(&b.bq);
    out.push_back(&b.wk);
    out.push_back(&b.bk);
    out.push_back(&b.wv);
    out.push_back(&b.bv);
    out.push_back(&b.wo);
    out.push_back(&b.bo);
    out.push_back(&b.ln2_gain);
    out.push_back(&b.ln2_shift);
    out.push_back(&b.ff_w1);
    out.push_back(&b.ff_b1);
    out.push_back(&b.ff_w2);
    out.push_back(&b.ff_b2);
  }
  for (auto& a : out_w) out.push_back(&a);
  for (auto& a : out_b) out.push_back(&a);
  return out;
}

template <typename S>
std::vector<const Array<S>*> DenoiserParamsT<S>::param_ptrs() const {
  auto mut = const_cast<DenoiserParamsT<S>*>(this)->param_ptrs();
  return std::vector<const Array<S>*>(mut.begin(), mut.end());
}

template <typename S>
std::vector<std::string> DenoiserParamsT<S>::param_names() const {
  std::vector<std::string> out;
  for (size_t i = 0; i < in_w.size(); ++i)
    out.push_back("in_w[" + std::to_string(i) + "]");
  for (size_t i = 0; i < in_b.size(); ++i)
    out.push_back("in_b[" + std::to_string(i) + "]");
  out.push_back("pos_enc");
  out.push_back("t_w");
  out.push_back("t_b");
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block[" + std::to_string(i) + "].";
    for (const char* n : {"ln1_gain", "ln1_shift", "wq", "bq", "wk", "bk",
                          "wv", "bv", "wo", "bo", "ln2_gain", "ln2_shift",
                          "ff_w1", "ff_b1", "ff_w2", "ff_b2"})
      out.push_back(p + n);
  }
  for (size_t i = 0; i < out_w.size(); ++i)
    out.push_back("out_w[" + std::to_string(i) + "]");
  for (size_t i = 0; i < out_b.size(); ++i)
    out.push_back("out_b[" + std::to_string(i) + "]");
  return out;
}

template <typename S>
int64_t DenoiserParamsT<S>::param_count() const {
  int64_t n = 0;
  for (const Array<S>* a : param_ptrs()) n += a->numel();
  return n;
}

template <typename S>
template <typename T>
DenoiserParamsT<T> DenoiserParamsT<S>::cast() const {
  DenoiserParamsT<T> out;
  out.cfg = cfg;
  for (const auto& a : in_w) out.in_w.push_back(a.template cast<T>());
  for (const auto& a : in_b) out.in_b.push_back(a.template cast<T>());
  out.pos_enc = pos_enc.template cast<T>();
  out.t_w = t_w.template cast<T>();
  out.t_b = t_b.template cast<T>();
  for (const Block& b : blocks)
    out.blocks.push_back({b.ln1_gain.template cast<T>(),
                          b.ln1_shift.template cast<T>(),
                          b.wq.template cast<T>(), b.bq.template cast<T>(),
                          b.wk.template cast<T>(), b.bk.template cast<T>(),
                          b.wv.template cast<T>(), b.bv.template cast<T>(),
                          b.wo.template cast<T>(), b.bo.template cast<T>(),
                          b.ln2_gain.template cast<T>(),
                          b.ln2_shift.template cast<T>(),
                          b.ff_w1.template cast<T>(), b.ff_b1.template cast<T>(),
                          b.ff_w2.template cast<T>(), b.ff_b2.template cast<T>()});
  for (const auto& a : out_w) out.out_w.push_back(a.template cast<T>());
  for (const auto& a : out_b) out.out_b.push_back(a.template cast<T>());
  return out;
}

template <typename S>
DenoiserParamsT<S> init_denoiser(const DenoiserConfig& cfg,
                                 const TokenLayout& layout, uint64_t seed) {
  check_denoiser_cfg(cfg);
  if (cfg.chunk != layout.chunk)
    throw ConfigError("denoiser: chunk size does not match token layout");
  const int64_t H = cfg.hidden;
  const int64_t C = cfg.chunk;
  const int64_t k = layout.token_count();

  Rng rng(seed);
  DenoiserParamsT<S> p;
  p.cfg = cfg;
  for (int64_t i = 0; i < k; ++i) {
    p.in_w.push_back(xavier<S>(rng, C, H));
    p.in_b.push_back(Array<S>::zeros({H}));
  }
  p.pos_enc = Array<S>::zeros({k, H});
  for (S& v : p.pos_enc.data) v = static_cast<S>(rng.normal() * 0.02);
  p.t_w = xavier<S>(rng, H, H);
  p.t_b = Array<S>::zeros({H});
  for (int i = 0; i < cfg.blocks; ++i) {
    typename DenoiserParamsT<S>::Block b;
    b.ln1_gain = Array<S>::full({H}, static_cast<S>(1));
    b.ln1_shift = Array<S>::zeros({H});
    b.wq = xavier<S>(rng, H, H);
    b.bq = Array<S>::zeros({H});
    b.wk = xavier<S>(rng, H, H);
    b.bk = Array<S>::zeros({H});
    b.wv = xavier<S>(rng, H, H);
    b.bv = Array<S>::zeros({H});
    b.wo = xavier<S>(rng, H, H);
    b.bo = Array<S>::zeros({H});
    b.ln2_gain = Array<S>::full({H}, static_cast<S>(1));
    b.ln2_shift = Array<S>::zeros({H});
    b.ff_w1 = xavier<S>(rng, H, 4 * H);
    b.ff_b1 = Array<S>::zeros({4 * H});
    b.ff_w2 = xavier<S>(rng, 4 * H, H);
    b.ff_b2 = Array<S>::zeros({H});
    p.blocks.push_back(std::move(b));
  }
  for (int64_t i = 0; i < k; ++i) {
    p.out_w.push_back(Array<S>::zeros({H, C}));
    p.out_b.push_back(Array<S>::zeros({C}));
  }
  return p;
}

std::vector<double> sinusoidal_embedding(int t, int64_t hidden) {
  if (hidden < 2 || hidden % 2 != 0)
    throw ShapeError("sinusoidal embedding needs an even dimension >= 2");
  std::vector<double> emb(static_cast<size_t>(hidden));
  for (int64_t j = 0; j < hidden / 2; ++j) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(j) /
                              static_cast<double>(hidden));
    emb[2 * j] = std::sin(t * freq);
    emb[2 * j + 1] = std::cos(t * freq);
  }
  return emb;
}

// ----------------------------------------------------------- forward graph

template <typename S>
DenoiserGraph<S> denoiser_graph(Tape<S>& tape, const DenoiserParamsT<S>& params,
                                const TokenLayout& layout,
                                const Array<S>& noisy_tokens,
                                const std::vector<int>& timesteps) {
  check_denoiser_cfg(params.cfg);
  const int64_t H = params.cfg.hidden;
  const int64_t C = params.cfg.chunk;
  const int64_t k = layout.token_count();
  const int64_t B = static_cast<int64_t>(timesteps.size());
  if (layout.chunk != C)
    throw ShapeError("denoiser: layout chunk size mismatch");
  if (static_cast<int64_t>(params.in_w.size()) != k)
    throw ShapeError("denoiser: parameter token count does not match layout");
  if (noisy_tokens.rank() != 2 || noisy_tokens.shape[0] != k * B ||
      noisy_tokens.shape[1] != C)
    throw ShapeError("denoiser: token stack must be [k*B x C]");

  using Id = typename Tape<S>::Id;
  DenoiserGraph<S> g;
  g.param_names = params.param_names();
  auto ptrs = params.param_ptrs();
  for (const Array<S>* a : ptrs) g.params.push_back(tape.leaf(*a));

  // Ids by declaration order (matches param_ptrs).
  size_t at = 0;
  std::vector<Id> in_w(k), in_b(k);
  for (int64_t i = 0; i < k; ++i) in_w[i] = g.params[at++];
  for (int64_t i = 0; i < k; ++i) in_b[i] = g.params[at++];
  const Id pos_enc = g.params[at++];
  const Id t_w = g.params[at++];
  const Id t_b = g.params[at++];
  struct BlockIds {
    Id ln1_g, ln1_s;
    grad::AttentionIds<S> attn;
    Id ln2_g, ln2_s, ff_w1, ff_b1, ff_w2, ff_b2;
  };
  std::vector<BlockIds> blocks(params.blocks.size());
  for (BlockIds& b : blocks) {
    b.ln1_g = g.params[at++];
    b.ln1_s = g.params[at++];
    b.attn.wq = g.params[at++];
    b.attn.bq = g.params[at++];
    b.attn.wk = g.params[at++];
    b.attn.bk = g.params[at++];
    b.attn.wv = g.params[at++];
    b.attn.bv = g.params[at++];
    b.attn.wo = g.params[at++];
    b.attn.bo = g.params[at++];
    b.ln2_g = g.params[at++];
    b.ln2_s = g.params[at++];
    b.ff_w1 = g.params[at++];
    b.ff_b1 = g.params[at++];
    b.ff_w2 = g.params[at++];
    b.ff_b2 = g.params[at++];
  }
  std::vector<Id> out_w(k), out_b(k);
  for (int64_t i = 0; i < k; ++i) out_w[i] = g.params[at++];
  for (int64_t i = 0; i < k; ++i) out_b[i] = g.params[at++];

  const Id x = tape.constant(noisy_tokens);

  // Per-position input projection C -> H.
  std::vector<Id> projected(k);
  for (int64_t p = 0; p < k; ++p)
    projected[p] = tape.linear(tape.slice_rows(x, p * B, B), in_w[p], in_b[p]);
  Id h = tape.concat_rows(projected);
  h = tape.broadcast_add_rows(h, pos_enc, B);

  // Timestep embedding, shared across positions within a batch item.
  Array<S> emb = Array<S>::zeros({B, H});
  for (int64_t b = 0; b < B; ++b) {
    const std::vector<double> e = sinusoidal_embedding(timesteps[b], H);
    for (int64_t j = 0; j < H; ++j)
      emb.data[b * H + j] = static_cast<S>(e[j]);
  }
  const Id temb = tape.linear(tape.constant(std::move(emb)), t_w, t_b);
  h = tape.broadcast_add_batch(h, temb, B);

  for (const BlockIds& b : blocks) {
    Id a = tape.layer_norm(h, b.ln1_g, b.ln1_s);
    a = grad::multihead_self_attention(tape, a, b.attn, B, k, params.cfg.heads);
    h = tape.add(h, a);
    Id f = tape.layer_norm(h, b.ln2_g, b.ln2_s);
    f = tape.linear(f, b.ff_w1, b.ff_b1);
    f = tape.relu(f);
    f = tape.linear(f, b.ff_w2, b.ff_b2);
    h = tape.add(h, f);
  }

  // Per-position output projection H -> C.
  std::vector<Id> out(k);
  for (int64_t p = 0; p < k; ++p)
    out[p] = tape.linear(tape.slice_rows(h, p * B, B), out_w[p], out_b[p]);
  g.output = tape.concat_rows(out);
  return g;
}

template <typename S>
std::vector<S> denoise(const std::vector<S>& theta_star, int t,
                       const DenoiserParamsT<S>& params,
                       const TokenLayout& layout,
                       const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.T)
    throw ShapeError("denoise: t out of range [1, T]");
  Tape<S> tape;
  const Array<S> tokens = tokenize(theta_star, layout);
  DenoiserGraph<S> g = denoiser_graph(tape, params, layout, tokens, {t});
  return detokenize(tape.value(g.output), layout);
}

// ----------------------------------------------------------------- training

namespace {

// Position-major stack of per-example token matrices: row = pos * B + b.
template <typename S>
Array<S> stack_tokens(const std::vector<Array<S>>& per_example) {
  const int64_t B = static_cast<int64_t>(per_example.size());
  const int64_t k = per_example[0].shape[0];
  const int64_t C = per_example[0].shape[1];
  Array<S> out = Array<S>::zeros({k * B, C});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t p = 0; p < k; ++p)
      std::copy_n(per_example[b].data.data() + p * C, C,
                  out.data.data() + (p * B + b) * C);
  return out;
}

}  // namespace

DiffusionTrainResult train_diffusion(const std::vector<InrCheckpoint>& dataset,
                                     const DiffusionTrainConfig& cfg) {
  if (dataset.empty()) throw DataError("train_diffusion: empty dataset");
  const InrArch arch = dataset.front().arch;
  for (const InrCheckpoint& c : dataset)
    if (!(c.arch == arch))
      throw DataError("train_diffusion: mixed architectures in dataset");
  if (cfg.epochs < 1 || cfg.batch < 1)
    throw ConfigError("train_diffusion: epochs and batch must be >= 1");

  const int64_t P = arch.param_count();
  const int64_t N = static_cast<int64_t>(dataset.size());
  const TokenLayout layout = TokenLayout::for_arch(arch, cfg.denoiser.chunk);
  const NoiseSchedule schedule =
      NoiseSchedule::linear(cfg.schedule_T, cfg.beta_min, cfg.beta_max);
  const int64_t k = layout.token_count();
  const int64_t C = layout.chunk;

  // Per-coordinate normalization over the dataset.
  NormStats norm;
  norm.mean.assign(static_cast<size_t>(P), 0.0f);
  norm.stdev.assign(static_cast<size_t>(P), 0.0f);
  for (const InrCheckpoint& c : dataset)
    for (int64_t j = 0; j < P; ++j) norm.mean[j] += c.theta[j];
  for (int64_t j = 0; j < P; ++j) norm.mean[j] /= static_cast<float>(N);
  for (const InrCheckpoint& c : dataset)
    for (int64_t j = 0; j < P; ++j) {
      const float d = c.theta[j] - norm.mean[j];
      norm.stdev[j] += d * d;
    }
  for (int64_t j = 0; j < P; ++j)
    norm.stdev[j] = std::max(
        std::sqrt(norm.stdev[j] / static_cast<float>(N)), 1e-6f);

  std::vector<std::vector<float>> normalized(dataset.size());
  for (size_t i = 0; i < dataset.size(); ++i) {
    normalized[i].resize(static_cast<size_t>(P));
    for (int64_t j = 0; j < P; ++j)
      normalized[i][j] = (dataset[i].theta[j] - norm.mean[j]) / norm.stdev[j];
  }

  DenoiserParams params = init_denoiser<float>(
      cfg.denoiser, layout, derive_seed(cfg.seed, "denoiser-init"));
  auto ptrs = params.param_ptrs();
  const std::vector<std::string> names = params.param_names();
  grad::Adam<float> opt({cfg.lr, 0.9, 0.999, 1e-8});

  // Loss is averaged over true coordinates (P per example) rather than
  // padded token slots, so values stay comparable across layouts.
  const float loss_scale =
      static_cast<float>(k * C) / static_cast<float>(P);

  const uint64_t order_root = derive_seed(cfg.seed, "epoch-order");
  const uint64_t noise_root = derive_seed(cfg.seed, "noise");
  std::vector<float> loss_history;
  loss_history.reserve(static_cast<size_t>(cfg.epochs));
  std::vector<int64_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  uint64_t step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.set_lr(cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.decay_every));
    Rng order_rng(derive_seed(order_root, static_cast<uint64_t>(epoch)));
    for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[order_rng.uniform_int(i + 1)]);

    double epoch_loss = 0.0;
    int64_t steps = 0;
    for (int64_t begin = 0; begin < N; begin += cfg.batch, ++steps) {
      const int64_t B = std::min<int64_t>(cfg.batch, N - begin);
      Rng rng(derive_seed(noise_root, step_counter++));

      std::vector<int> ts(static_cast<size_t>(B));
      std::vector<Array<float>> noisy(static_cast<size_t>(B));
      std::vector<Array<float>> clean(static_cast<size_t>(B));
      std::vector<float> eps(static_cast<size_t>(P));
      for (int64_t b = 0; b < B; ++b) {
        const std::vector<float>& theta = normalized[order[begin + b]];
        ts[b] = 1 + static_cast<int>(rng.uniform_int(schedule.T));
        for (float& e : eps) e = static_cast<float>(rng.normal());
        noisy[b] = tokenize(forward_noise(theta, ts[b], eps, schedule), layout);
        clean[b] = tokenize(theta, layout);
      }

      Tape<float> tape;
      DenoiserGraph<float> g =
          denoiser_graph(tape, params, layout, stack_tokens(noisy), ts);
      const auto loss =
          tape.scale(tape.mse(g.output, stack_tokens(clean)), loss_scale);
      tape.backward(loss);

      opt.begin_step();
      for (size_t i = 0; i < ptrs.size(); ++i)
        opt.update(i, names[i], *ptrs[i], tape.gradient(g.params[i]));
      epoch_loss += tape.value(loss).item();
    }
    loss_history.push_back(static_cast<float>(epoch_loss / steps));
    if (cfg.tol > 0.0 && loss_history.back() < cfg.tol) break;
  }

  DiffusionTrainResult res;
  res.model.arch = arch;
  res.model.cfg = cfg.denoiser;
  res.model.layout = layout;
  res.model.schedule = schedule;
  res.model.norm = std::move(norm);
  res.model.params = std::move(params);
  res.loss_history = std::move(loss_history);
  return res;
}

// ----------------------------------------------------------------- sampling

std::vector<double> ddim_sample_core(
    const std::function<std::vector<double>(const std::vector<double>&, int)>&
        denoise_fn,
    int64_t dim, const NoiseSchedule& schedule, int steps, double eta,
    Rng& rng) {
  if (steps < 1 || steps > schedule.T)
    throw ShapeError("ddim_sample: steps must be in [1, T]");
  if (eta < 0.0) throw ShapeError("ddim_sample: eta must be >= 0");

  // Evenly spaced timestep subsequence ending at T (equal to 1..T at S=T).
  std::vector<int> ts(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i)
    ts[i] = static_cast<int>(std::llround(static_cast<double>(i + 1) *
                                          schedule.T / steps));
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  std::vector<double> theta(static_cast<size_t>(dim));
  for (double& v : theta) v = rng.normal();

  for (int64_t i = static_cast<int64_t>(ts.size()) - 1; i >= 0; --i) {
    const int t = ts[i];
    const int t_prev = i > 0 ? ts[i - 1] : 0;
    const double ab_t = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);

    const std::vector<double> theta0 = denoise_fn(theta, t);
    if (static_cast<int64_t>(theta0.size()) != dim)
      throw ShapeError("ddim_sample: denoiser output length mismatch");

    const double noise_scale = std::sqrt(1.0 - ab_t);
    const double sigma =
        eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab_t)) *
        std::sqrt(1.0 - ab_t / ab_prev);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    const double a_prev = std::sqrt(ab_prev);
    const double a_t = std::sqrt(ab_t);

    for (int64_t j = 0; j < dim; ++j) {
      const double eps_hat = (theta[j] - a_t * theta0[j]) / noise_scale;
      theta[j] = a_prev * theta0[j] + dir * eps_hat;
    }
    if (sigma > 0.0)
      for (double& v : theta) v += sigma * rng.normal();
  }
  return theta;
}

InrCheckpoint ddim_sample(const DenoiserModel& model, int steps, double eta,
                          uint64_t seed) {
  const int64_t P = model.arch.param_count();
  Rng rng(seed);
  auto denoise_fn = [&](const std::vector<double>& theta,
                        int t) -> std::vector<double> {
    std::vector<float> in(theta.size());
    for (size_t i = 0; i < theta.size(); ++i)
      in[i] = static_cast<float>(theta[i]);
    const std::vector<float> out =
        denoise(in, t, model.params, model.layout, model.schedule);
    return std::vector<double>(out.begin(), out.end());
  };
  const std::vector<double> normalized =
      ddim_sample_core(denoise_fn, P, model.schedule, steps, eta, rng);

  InrCheckpoint ckpt;
  ckpt.arch = model.arch;
  ckpt.theta.resize(static_cast<size_t>(P));
  for (int64_t j = 0; j < P; ++j)
    ckpt.theta[j] = static_cast<float>(normalized[j] * model.norm.stdev[j] +
                                       model.norm.mean[j]);
  nlohmann::json meta;
  meta["source"] = "ddim";
  meta["steps"] = steps;
  meta["eta"] = eta;
  meta["seed"] = seed;
  ckpt.metadata = meta.dump();
  return ckpt;
}

// -------------------------------------------------------------------- file

namespace {
constexpr char kDdmMagic[4] = {'D', 'D', 'M', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t read_u32(std::istream& in, const std::string& path, const char* field) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(path + ": truncated reading " + field);
  return v;
}
uint64_t read_u64(std::istream& in, const std::string& path, const char* field) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(path + ": truncated reading " + field);
  return v;
}
double read_f64(std::istream& in, const std::string& path, const char* field) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(path + ": truncated reading " + field);
  return v;
}

void write_floats(std::ostream& out, const float* data, int64_t count) {
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(count * sizeof(float)));
}
void read_floats(std::istream& in, float* data, int64_t count,
                 const std::string& path, const char* field) {
  in.read(reinterpret_cast<char*>(data),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw DataError(path + ": truncated reading " + field);
}
}  // namespace

void save_denoiser(const DenoiserModel& model, const std::string& path) {
  static_assert(std::endian::native == std::endian::little,
                "serialization assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kDdmMagic, 4);
  write_u32(out, 1);  // version
  write_u32(out, static_cast<uint32_t>(model.arch.d));
  write_u32(out, static_cast<uint32_t>(model.arch.D));
  write_u32(out, static_cast<uint32_t>(model.arch.L));
  write_u32(out, static_cast<uint32_t>(model.cfg.hidden));
  write_u32(out, static_cast<uint32_t>(model.cfg.chunk));
  write_u32(out, static_cast<uint32_t>(model.cfg.blocks));
  write_u32(out, static_cast<uint32_t>(model.cfg.heads));
  const std::vector<int64_t> lengths = model.layout.segment_lengths();
  write_u32(out, static_cast<uint32_t>(lengths.size()));
  for (int64_t len : lengths) write_u64(out, static_cast<uint64_t>(len));
  write_u32(out, static_cast<uint32_t>(model.schedule.T));
  write_f64(out, model.schedule.beta_min);
  write_f64(out, model.schedule.beta_max);
  const int64_t P = model.arch.param_count();
  if (static_cast<int64_t>(model.norm.mean.size()) != P ||
      static_cast<int64_t>(model.norm.stdev.size()) != P)
    throw ShapeError("save_denoiser: normalization stats length mismatch");
  write_u64(out, static_cast<uint64_t>(P));
  write_floats(out, model.norm.mean.data(), P);
  write_floats(out, model.norm.stdev.data(), P);
  for (const Array<float>* a : model.params.param_ptrs())
    write_floats(out, a->data.data(), a->numel());
  if (!out) throw DataError("write failed for " + path);
}

DenoiserModel load_denoiser(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kDdmMagic, 4) != 0)
    throw DataError(path + ": bad magic, not a DDM1 checkpoint");
  const uint32_t version = read_u32(in, path, "version");
  if (version != 1)
    throw DataError(path + ": unsupported version " + std::to_string(version));

  DenoiserModel model;
  model.arch.d = static_cast<int>(read_u32(in, path, "d"));
  model.arch.D = static_cast<int>(read_u32(in, path, "D"));
  model.arch.L = static_cast<int>(read_u32(in, path, "L"));
  model.cfg.hidden = read_u32(in, path, "hidden");
  model.cfg.chunk = read_u32(in, path, "chunk");
  model.cfg.blocks = static_cast<int>(read_u32(in, path, "blocks"));
  model.cfg.heads = static_cast<int>(read_u32(in, path, "heads"));
  try {
    check_denoiser_cfg(model.cfg);
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }

  const uint32_t nseg = read_u32(in, path, "segment count");
  std::vector<int64_t> lengths(nseg);
  for (uint32_t i = 0; i < nseg; ++i)
    lengths[i] = static_cast<int64_t>(read_u64(in, path, "segment length"));
  try {
    model.layout = TokenLayout::from_segments(lengths, model.cfg.chunk);
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }

  const int T = static_cast<int>(read_u32(in, path, "T"));
  const double beta_min = read_f64(in, path, "beta_min");
  const double beta_max = read_f64(in, path, "beta_max");
  try {
    model.schedule = NoiseSchedule::linear(T, beta_min, beta_max);
  } catch (const ConfigError& e) {
    throw DataError(path + ": " + e.what());
  }

  int64_t expect = 0;
  try {
    expect = model.arch.param_count();
  } catch (const ConfigError& e) {
    throw DataError(path + ": invalid architecture: " + e.what());
  }
  const uint64_t P = read_u64(in, path, "P");
  if (static_cast<int64_t>(P) != expect ||
      model.layout.param_count() != expect)
    throw DataError(path + ": parameter count does not match architecture");
  model.norm.mean.resize(P);
  model.norm.stdev.resize(P);
  read_floats(in, model.norm.mean.data(), static_cast<int64_t>(P), path,
              "normalization mean");
  read_floats(in, model.norm.stdev.data(), static_cast<int64_t>(P), path,
              "normalization std");

  model.params = init_denoiser<float>(model.cfg, model.layout, 0);
  for (Array<float>* a : model.params.param_ptrs())
    read_floats(in, a->data.data(), a->numel(), path, "parameters");

  char extra = 0;
  if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes");
  for (const Array<float>* a : model.params.param_ptrs())
    if (!a->all_finite())
      throw DataError(path + ": non-finite parameter value");
  for (float v : model.norm.mean)
    if (!std::isfinite(v)) throw DataError(path + ": non-finite statistics");
  for (float v : model.norm.stdev)
    if (!std::isfinite(v) || v <= 0.0f)
      throw DataError(path + ": invalid normalization std");
  return model;
}

// --------------------------------------------------------- instantiations

template std::vector<float> forward_noise<float>(const std::vector<float>&,
                                                 int, const std::vector<float>&,
                                                 const NoiseSchedule&);
template std::vector<double> forward_noise<double>(const std::vector<double>&,
                                                   int,
                                                   const std::vector<double>&,
                                                   const NoiseSchedule&);
template Array<float> tokenize<float>(const std::vector<float>&,
                                      const TokenLayout&);
template Array<double> tokenize<double>(const std::vector<double>&,
                                        const TokenLayout&);
template std::vector<float> detokenize<float>(const Array<float>&,
                                              const TokenLayout&);
template std::vector<double> detokenize<double>(const Array<double>&,
                                                const TokenLayout&);
template struct DenoiserParamsT<float>;
template struct DenoiserParamsT<double>;
template DenoiserParamsT<float> DenoiserParamsT<float>::cast<float>() const;
template DenoiserParamsT<double> DenoiserParamsT<float>::cast<double>() const;
template DenoiserParamsT<float> DenoiserParamsT<double>::cast<float>() const;
template DenoiserParamsT<double> DenoiserParamsT<double>::cast<double>() const;
template DenoiserParamsT<float> init_denoiser<float>(const DenoiserConfig&,
                                                     const TokenLayout&,
                                                     uint64_t);
template DenoiserParamsT<double> init_denoiser<double>(const DenoiserConfig&,
                                                       const TokenLayout&,
                                                       uint64_t);
template DenoiserGraph<float> denoiser_graph<float>(Tape<float>&,
                                                    const DenoiserParamsT<float>&,
                                                    const TokenLayout&,
                                                    const Array<float>&,
                                                    const std::vector<int>&);
template DenoiserGraph<double> denoiser_graph<double>(
    Tape<double>&, const DenoiserParamsT<double>&, const TokenLayout&,
    const Array<double>&, const std::vector<int>&);
template std::vector<float> denoise<float>(const std::vector<float>&, int,
                                           const DenoiserParamsT<float>&,
                                           const TokenLayout&,
                                           const NoiseSchedule&);
template std::vector<double> denoise<double>(const std::vector<double>&, int,
                                             const DenoiserParamsT<double>&,
                                             const TokenLayout&,
                                             const NoiseSchedule&);

}  // namespace treefield
