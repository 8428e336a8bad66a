#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "treefield/array.hpp"

namespace treefield::grad {

// Adam with bias correction: p -= lr * m_hat / (sqrt(v_hat) + eps).
// Moments are kept in double regardless of the parameter scalar type.
// One Adam instance owns the moment state for a fixed, ordered parameter
// list; callers identify parameters by a stable slot index.
template <typename S>
class Adam {
 public:
  struct Config {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Config cfg = {}) : cfg_(cfg) {}

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  int64_t steps() const { return t_; }

  // Call once per optimization step, before the per-parameter updates.
  void begin_step() { ++t_; }

  void update(size_t slot, const std::string& name, Array<S>& param, const Array<S>& grad) {
    if (t_ == 0) throw ShapeError("Adam::update before begin_step");
    if (grad.numel() != param.numel())
      throw ShapeError("Adam: gradient size " + std::to_string(grad.numel()) +
                       " does not match parameter '" + name + "' size " +
                       std::to_string(param.numel()));
    if (slot >= m_.size()) {
      m_.resize(slot + 1);
      v_.resize(slot + 1);
    }
    auto& m = m_[slot];
    auto& v = v_[slot];
    if (m.empty()) {
      m.assign(param.numel(), 0.0);
      v.assign(param.numel(), 0.0);
    } else if (static_cast<int64_t>(m.size()) != param.numel()) {
      throw ShapeError("Adam: slot " + std::to_string(slot) + " size changed between steps");
    }

    for (int64_t i = 0; i < grad.numel(); ++i)
      if (!std::isfinite(static_cast<double>(grad.data[i])))
        throw NumericError("non-finite gradient for parameter '" + name + "'");

    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (int64_t i = 0; i < param.numel(); ++i) {
      const double g = static_cast<double>(grad.data[i]);
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param.data[i] -= static_cast<S>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }

 private:
  Config cfg_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace treefield::grad
