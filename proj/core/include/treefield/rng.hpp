#pragma once

#include <cstdint>
#include <string>

namespace treefield {

// xoshiro256** with explicit distribution code. std:: distributions are
// implementation-defined, which would break the bitwise reproducibility
// contract, so everything random in the project goes through this class.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform01();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n). n must be positive.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller. Caches the spare value.
  double normal();

 private:
  uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Hierarchical seed derivation (master -> stage -> item). Uses a splitmix64
// mix of the parent seed and stream id, so adding items to a run never
// reshuffles the seeds of existing ones.
uint64_t derive_seed(uint64_t parent, uint64_t stream);
uint64_t derive_seed(uint64_t parent, const std::string& tag);

}  // namespace treefield
