#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbuf/tape.hpp"
#include "dbuf/unet.hpp"

namespace dbuf {

enum class ProbeMethod { Gradient, Perturbation };
ProbeMethod parse_probe_method(const std::string& s);

// Maps a recorded (N, C, F, T) input to an output with the same T.
using ProbeFn = std::function<Var(Tape&, Var)>;

// rows = output frames, cols = input frames.
struct DependencyMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> strength;  // normalized to max 1
  std::vector<std::uint8_t> dep;

  bool at(std::size_t i, std::size_t j) const { return dep[i * cols + j] != 0; }
  std::string to_text() const;
  // Binary PGM, dependent entries black; each entry drawn as scale x scale pixels.
  void write_pgm(const std::string& path, std::size_t scale = 4) const;
  friend bool operator==(const DependencyMatrix& a, const DependencyMatrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.dep == b.dep;
  }
};

inline constexpr double kProbeThreshold = 1e-12;

DependencyMatrix dependency_matrix(const ProbeFn& fn, const Shape4& input_shape, ProbeMethod method,
                                   std::uint64_t seed);
// Probes a UNet over input_len frames with `freq` bins. Diffusion-mode nets
// get frame times from a linear schedule over the last B frames (zeros when
// input_len < B); they do not alter the dependency pattern.
DependencyMatrix dependency_matrix(const UNet& net, std::size_t input_len, std::size_t freq, ProbeMethod method,
                                   std::uint64_t seed);

struct CausalityReport {
  std::size_t g = 1;
  std::size_t violations = 0;         // (i, j) pairs reaching into a later block
  std::size_t first_violation_out = 0;
  std::size_t first_violation_in = 0;
  std::vector<long> lookahead;  // measured max(j - i) per output frame
  std::vector<long> expected;   // distance from i to the end of its block
  std::size_t lookahead_mismatches = 0;

  bool block_causal() const noexcept { return violations == 0; }
  bool lookahead_exact() const noexcept { return lookahead_mismatches == 0; }
  // Pass/fail is about causality; look-ahead exactness is reported alongside.
  bool passed() const noexcept { return block_causal(); }
  std::string summary() const;
};

// Blocks of g frames are aligned to the end of the sequence; a leading
// partial block is allowed.
CausalityReport assert_block_causal(const DependencyMatrix& dep, std::size_t g);

}  // namespace dbuf
