#include "treefield/inr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "treefield/adam.hpp"
#include "treefield/gemm.hpp"
#include "treefield/rng.hpp"

namespace treefield {

namespace {
constexpr int64_t kForwardChunk = 16384;
constexpr int kLossWindow = 100;

void check_arch(const InrArch& a) {
  if (a.d != 2 && a.d != 3) throw ConfigError("arch: d must be 2 or 3");
  if (a.D < 1) throw ConfigError("arch: hidden size must be >= 1");
  if (a.L < 0) throw ConfigError("arch: block count must be >= 0");
}

template <typename S>
void append(std::vector<S>& out, const grad::Array<S>& a) {
  out.insert(out.end(), a.data.begin(), a.data.end());
}

template <typename S>
grad::Array<S> take(const std::vector<S>& theta, size_t& pos, grad::Shape shape) {
  const int64_t n = grad::shape_numel(shape);
  grad::Array<S> a(std::move(shape), S(0));
  std::copy_n(theta.begin() + static_cast<std::ptrdiff_t>(pos), n, a.data.begin());
  pos += static_cast<size_t>(n);
  return a;
}

// Canonical-order list of the layer arrays, with names for error messages.
template <typename S>
std::vector<std::pair<std::string, grad::Array<S>*>> weight_slots(InrWeightsT<S>& w) {
  std::vector<std::pair<std::string, grad::Array<S>*>> slots;
  slots.emplace_back("w_in", &w.w_in);
  slots.emplace_back("b_in", &w.b_in);
  for (size_t l = 0; l < w.blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    slots.emplace_back(p + "w1", &w.blocks[l].w1);
    slots.emplace_back(p + "b1", &w.blocks[l].b1);
    slots.emplace_back(p + "w2", &w.blocks[l].w2);
    slots.emplace_back(p + "b2", &w.blocks[l].b2);
  }
  slots.emplace_back("w_out", &w.w_out);
  slots.emplace_back("b_out", &w.b_out);
  return slots;
}
}  // namespace

int64_t InrArch::param_count() const {
  check_arch(*this);
  const int64_t dd = d, D_ = D, L_ = L;
  return (dd * D_ + D_) + L_ * 2 * (D_ * D_ + D_) + (D_ + 1);
}

template <typename S>
std::vector<S> flatten_weights(const InrWeightsT<S>& w) {
  std::vector<S> theta;
  theta.reserve(static_cast<size_t>(w.arch.param_count()));
  append(theta, w.w_in);
  append(theta, w.b_in);
  for (const auto& b : w.blocks) {
    append(theta, b.w1);
    append(theta, b.b1);
    append(theta, b.w2);
    append(theta, b.b2);
  }
  append(theta, w.w_out);
  append(theta, w.b_out);
  if (static_cast<int64_t>(theta.size()) != w.arch.param_count())
    throw ShapeError("flatten_weights: layer sizes disagree with arch");
  return theta;
}

template <typename S>
InrWeightsT<S> unflatten_weights(const InrArch& arch, const std::vector<S>& theta) {
  if (static_cast<int64_t>(theta.size()) != arch.param_count())
    throw ShapeError("unflatten_weights: theta length " + std::to_string(theta.size()) +
                     " does not match P=" + std::to_string(arch.param_count()));
  InrWeightsT<S> w;
  w.arch = arch;
  size_t pos = 0;
  const int64_t d = arch.d, D = arch.D;
  w.w_in = take(theta, pos, {d, D});
  w.b_in = take(theta, pos, {D});
  for (int l = 0; l < arch.L; ++l) {
    typename InrWeightsT<S>::Block b;
    b.w1 = take(theta, pos, {D, D});
    b.b1 = take(theta, pos, {D});
    b.w2 = take(theta, pos, {D, D});
    b.b2 = take(theta, pos, {D});
    w.blocks.push_back(std::move(b));
  }
  w.w_out = take(theta, pos, {D, int64_t{1}});
  w.b_out = take(theta, pos, {int64_t{1}});
  return w;
}

InrWeights init_weights(const InrArch& arch, uint64_t seed) {
  check_arch(arch);
  Rng rng(seed);
  auto he_uniform = [&](grad::ArrayF& a, int64_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (float& v : a.data) v = static_cast<float>(rng.uniform(-limit, limit));
  };
  InrWeights w;
  w.arch = arch;
  const int64_t d = arch.d, D = arch.D;
  w.w_in = grad::ArrayF({d, D}, 0.0f);
  w.b_in = grad::ArrayF({D}, 0.0f);
  he_uniform(w.w_in, d);
  for (int l = 0; l < arch.L; ++l) {
    InrWeights::Block b{grad::ArrayF({D, D}, 0.0f), grad::ArrayF({D}, 0.0f),
                        grad::ArrayF({D, D}, 0.0f), grad::ArrayF({D}, 0.0f)};
    he_uniform(b.w1, D);
    he_uniform(b.w2, D);
    w.blocks.push_back(std::move(b));
  }
  w.w_out = grad::ArrayF({D, int64_t{1}}, 0.0f);
  w.b_out = grad::ArrayF({int64_t{1}}, 0.0f);
  he_uniform(w.w_out, D);
  return w;
}

template <typename S>
InrGraph<S> inr_forward_graph(grad::Tape<S>& tape, const InrWeightsT<S>& w,
                              const grad::Array<S>& points) {
  if (points.rank() != 2 || points.shape[1] != w.arch.d)
    throw ShapeError("inr_forward_graph: points must be [M x " + std::to_string(w.arch.d) + "]");
  InrGraph<S> g;
  auto reg = [&](const grad::Array<S>& a, std::string name) {
    auto id = tape.leaf(a);
    g.params.push_back(id);
    g.param_names.push_back(std::move(name));
    return id;
  };
  const auto x = tape.constant(points);
  const auto w_in = reg(w.w_in, "w_in");
  const auto b_in = reg(w.b_in, "b_in");
  auto h = tape.relu(tape.linear(x, w_in, b_in));
  for (size_t l = 0; l < w.blocks.size(); ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    const auto w1 = reg(w.blocks[l].w1, p + "w1");
    const auto b1 = reg(w.blocks[l].b1, p + "b1");
    const auto w2 = reg(w.blocks[l].w2, p + "w2");
    const auto b2 = reg(w.blocks[l].b2, p + "b2");
    const auto z = tape.relu(tape.linear(h, w1, b1));
    h = tape.add(h, tape.linear(z, w2, b2));
  }
  const auto w_out = reg(w.w_out, "w_out");
  const auto b_out = reg(w.b_out, "b_out");
  g.output = tape.sigmoid(tape.linear(h, w_out, b_out));
  return g;
}

grad::ArrayF inr_forward(const InrWeights& w, const grad::ArrayF& points) {
  if (points.rank() != 2 || points.shape[1] != w.arch.d)
    throw ShapeError("inr_forward: points must be [M x " + std::to_string(w.arch.d) + "]");
  const int64_t M = points.shape[0];
  const int64_t d = w.arch.d, D = w.arch.D;
  grad::ArrayF out({M, 1}, 0.0f);

  std::vector<float> h(kForwardChunk * D), z(kForwardChunk * D), t(kForwardChunk * D);
  for (int64_t r0 = 0; r0 < M; r0 += kForwardChunk) {
    const int64_t m = std::min(kForwardChunk, M - r0);
    for (int64_t i = 0; i < m; ++i)
      std::copy_n(w.b_in.data.data(), D, h.data() + i * D);
    grad::gemm_nn(points.data.data() + r0 * d, w.w_in.data.data(), h.data(), m, d, D);
    for (int64_t i = 0; i < m * D; ++i) h[i] = h[i] > 0.0f ? h[i] : 0.0f;

    for (const auto& blk : w.blocks) {
      for (int64_t i = 0; i < m; ++i)
        std::copy_n(blk.b1.data.data(), D, z.data() + i * D);
      grad::gemm_nn(h.data(), blk.w1.data.data(), z.data(), m, D, D);
      for (int64_t i = 0; i < m * D; ++i) z[i] = z[i] > 0.0f ? z[i] : 0.0f;
      for (int64_t i = 0; i < m; ++i)
        std::copy_n(blk.b2.data.data(), D, t.data() + i * D);
      grad::gemm_nn(z.data(), blk.w2.data.data(), t.data(), m, D, D);
      for (int64_t i = 0; i < m * D; ++i) h[i] += t[i];
    }

    for (int64_t i = 0; i < m; ++i) {
      const float* hr = h.data() + i * D;
      float acc = w.b_out.data[0];
      for (int64_t j = 0; j < D; ++j) acc += hr[j] * w.w_out.data[j];
      out.data[r0 + i] = 1.0f / (1.0f + std::exp(-acc));
    }
  }
  if (!out.all_finite()) throw NumericError("inr_forward produced non-finite values");
  return out;
}

grad::ArrayF inr_forward(const InrCheckpoint& ckpt, const grad::ArrayF& points) {
  return inr_forward(unflatten_weights(ckpt.arch, ckpt.theta), points);
}

FitResult fit_inr(const Oracle& oracle, const InrArch& arch, const FitConfig& cfg) {
  check_arch(arch);
  if (arch.d != oracle.dim())
    throw ConfigError("fit_inr: arch dimension " + std::to_string(arch.d) +
                      " does not match oracle dimension " + std::to_string(oracle.dim()));
  if (cfg.max_iters < 1) throw ConfigError("fit_inr: max_iters must be >= 1");
  if (cfg.batch < 1) throw ConfigError("fit_inr: batch must be >= 1");

  const uint64_t init_seed = cfg.init_seed ? *cfg.init_seed : derive_seed(cfg.seed, "init");
  const uint64_t batch_root = derive_seed(cfg.seed, "batch");
  InrWeights w = init_weights(arch, init_seed);
  auto slots = weight_slots(w);

  grad::Adam<float> opt({cfg.lr});
  FitResult res;
  res.loss_history.reserve(static_cast<size_t>(cfg.max_iters));
  double window_sum = 0.0;

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    try {
      const SampleBatch batch = sample_points(oracle, cfg.batch, cfg.surface_fraction, cfg.band,
                                              derive_seed(batch_root, static_cast<uint64_t>(iter)));
      grad::Tape<float> tape;
      const InrGraph<float> g = inr_forward_graph(tape, w, batch.points);
      const auto loss_id = tape.mse(g.output, batch.targets);
      tape.backward(loss_id);
      opt.begin_step();
      for (size_t i = 0; i < slots.size(); ++i)
        opt.update(i, slots[i].first, *slots[i].second, tape.gradient(g.params[i]));
      res.loss_history.push_back(tape.value(loss_id).item());
    } catch (const NumericError& e) {
      throw NumericError("fit diverged at iteration " + std::to_string(iter) + ": " + e.what());
    }
    res.iterations = iter + 1;
    if (cfg.observer) cfg.observer(iter + 1, w);

    window_sum += res.loss_history.back();
    if (iter >= kLossWindow) window_sum -= res.loss_history[iter - kLossWindow];
    const int in_window = std::min(iter + 1, kLossWindow);
    const double running = window_sum / in_window;
    if (cfg.tol > 0.0 && iter + 1 >= kLossWindow && running < cfg.tol) break;
  }

  const int in_window = std::min(res.iterations, kLossWindow);
  double tail = 0.0;
  for (int i = res.iterations - in_window; i < res.iterations; ++i) tail += res.loss_history[i];
  res.final_loss = tail / in_window;

  nlohmann::json meta;
  meta["source"] = cfg.source_id;
  meta["final_loss"] = res.final_loss;
  meta["iterations"] = res.iterations;
  res.checkpoint.arch = arch;
  res.checkpoint.theta = flatten_weights(w);
  res.checkpoint.metadata = meta.dump();
  return res;
}

namespace {
constexpr char kInrMagic[4] = {'I', 'N', 'R', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
uint32_t read_u32(std::istream& in, const std::string& path, const char* field) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(path + ": truncated reading " + field);
  return v;
}
}  // namespace

void save_checkpoint(const InrCheckpoint& ckpt, const std::string& path) {
  if (static_cast<int64_t>(ckpt.theta.size()) != ckpt.arch.param_count())
    throw ShapeError("save_checkpoint: theta length does not match arch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(kInrMagic, 4);
  write_u32(out, static_cast<uint32_t>(ckpt.arch.d));
  write_u32(out, static_cast<uint32_t>(ckpt.arch.D));
  write_u32(out, static_cast<uint32_t>(ckpt.arch.L));
  write_u32(out, static_cast<uint32_t>(ckpt.theta.size()));
  out.write(reinterpret_cast<const char*>(ckpt.theta.data()),
            static_cast<std::streamsize>(ckpt.theta.size() * sizeof(float)));
  const uint64_t meta_len = ckpt.metadata.size();
  out.write(reinterpret_cast<const char*>(&meta_len), sizeof meta_len);
  out.write(ckpt.metadata.data(), static_cast<std::streamsize>(meta_len));
  if (!out) throw DataError("write failed for " + path);
}

InrCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kInrMagic, 4) != 0)
    throw DataError(path + ": bad magic, not an INR1 checkpoint");
  InrCheckpoint ckpt;
  ckpt.arch.d = static_cast<int>(read_u32(in, path, "d"));
  ckpt.arch.D = static_cast<int>(read_u32(in, path, "D"));
  ckpt.arch.L = static_cast<int>(read_u32(in, path, "L"));
  const uint32_t p = read_u32(in, path, "P");
  int64_t expect = 0;
  try {
    expect = ckpt.arch.param_count();
  } catch (const ConfigError& e) {
    throw DataError(path + ": invalid architecture: " + e.what());
  }
  if (static_cast<int64_t>(p) != expect)
    throw DataError(path + ": P=" + std::to_string(p) + " does not match architecture (" +
                    std::to_string(expect) + ")");
  ckpt.theta.resize(p);
  in.read(reinterpret_cast<char*>(ckpt.theta.data()),
          static_cast<std::streamsize>(ckpt.theta.size() * sizeof(float)));
  if (!in) throw DataError(path + ": truncated parameter payload");
  uint64_t meta_len = 0;
  in.read(reinterpret_cast<char*>(&meta_len), sizeof meta_len);
  if (!in) throw DataError(path + ": truncated metadata length");
  ckpt.metadata.resize(meta_len);
  in.read(ckpt.metadata.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw DataError(path + ": truncated metadata");
  char extra = 0;
  if (in.read(&extra, 1)) throw DataError(path + ": trailing bytes");
  for (float v : ckpt.theta)
    if (!std::isfinite(v)) throw DataError(path + ": non-finite parameter value");
  return ckpt;
}

template std::vector<float> flatten_weights<float>(const InrWeightsT<float>&);
template std::vector<double> flatten_weights<double>(const InrWeightsT<double>&);
template InrWeightsT<float> unflatten_weights<float>(const InrArch&, const std::vector<float>&);
template InrWeightsT<double> unflatten_weights<double>(const InrArch&, const std::vector<double>&);
template InrGraph<float> inr_forward_graph<float>(grad::Tape<float>&, const InrWeightsT<float>&,
                                                  const grad::Array<float>&);
template InrGraph<double> inr_forward_graph<double>(grad::Tape<double>&,
                                                    const InrWeightsT<double>&,
                                                    const grad::Array<double>&);

}  // namespace treefield
