#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string_view>

#include <Eigen/Core>

namespace rlbvae {

// xoshiro256** generator, state expanded from a 64-bit seed with splitmix64.
// Normal draws use the Box-Muller transform; the second variate of each pair
// is cached, so the cache is part of the generator state.
//
// Every bit of the output stream is specified here (no std:: distributions),
// so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t& state);

// Stable seed derivation: sub-seed = mix(master, fnv1a(tag), indices...).
// Adding a new tag or index never perturbs the seeds of existing ones.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {});

// n independent standard-normal draws.
Eigen::VectorXd sample_standard_normal(Rng& rng, Eigen::Index n);

}  // namespace rlbvae
