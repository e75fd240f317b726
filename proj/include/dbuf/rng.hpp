#pragma once

#include <complex>
#include <cstdint>
#include <random>

namespace dbuf {

// Stateless seed derivation (splitmix64 finalizer chain). Used to give every
// (stream, frame, step) triple its own reproducible generator.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) noexcept;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n);
  // Standard normal via Box-Muller; the libstdc++ distribution algorithm is
  // not pinned across versions, this one is.
  double normal();
  // Circularly-symmetric complex normal with unit total variance.
  std::complex<double> complex_normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dbuf
