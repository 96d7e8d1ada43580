#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace myow {

/// Counter-free xoshiro256** generator with hand-rolled distributions.
/// All sampling goes through this class so that streams are bit-reproducible
/// across platforms; the algorithm id is recorded in checkpoints.
class Rng {
 public:
  static constexpr std::string_view kAlgorithmId = "xoshiro256ss-v1";

  explicit Rng(std::uint64_t seed);

  /// Derives an independent named substream from a base seed.
  static Rng stream(std::uint64_t base_seed, std::string_view name);

  std::uint64_t next_u64();

  /// Uniform double in [a, b).
  double uniform(double a = 0.0, double b = 1.0);
  double normal(double mu = 0.0, double sigma = 1.0);
  long poisson(double lambda);
  bool bernoulli(double p);
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  std::vector<std::size_t> permutation(std::size_t n);
  /// k distinct indices drawn from [0, n), in draw order.
  std::vector<std::size_t> choice(std::size_t n, std::size_t k);

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace myow
