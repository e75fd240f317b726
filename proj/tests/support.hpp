#pragma once

// Shared helpers for the unit tests: random fills and a few brute-force
// oracles that deliberately avoid the library's own code paths.

#include <cmath>
#include <complex>
#include <filesystem>
#include <string>
#include <vector>

#include "dbuf/array4.hpp"
#include "dbuf/rng.hpp"

namespace dbtest {

inline dbuf::Array4 random_array(dbuf::Shape4 s, std::uint64_t seed, double scale = 1.0) {
  dbuf::Rng rng(seed);
  dbuf::Array4 a(s);
  for (auto& v : a.values()) v = scale * rng.normal();
  return a;
}

inline std::vector<double> random_signal(std::size_t n, std::uint64_t seed, double scale = 0.3) {
  dbuf::Rng rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = scale * rng.normal();
  return x;
}

inline double max_abs_diff(const dbuf::Array4& a, const dbuf::Array4& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

inline double dot(const dbuf::Array4& a, const dbuf::Array4& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

// Zero-padded cross-correlation straight from the definition.
inline dbuf::Array4 naive_conv2d(const dbuf::Array4& x, const dbuf::Array4& w, const std::vector<double>& bias,
                                 dbuf::Stride2 s, dbuf::Pad2 p) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::size_t Fo = (xs.freq + p.freq_lo + p.freq_hi - ws.freq) / s.freq + 1;
  const std::size_t To = (xs.time + p.time_lo + p.time_hi - ws.time) / s.time + 1;
  dbuf::Array4 y({xs.batch, ws.batch, Fo, To});
  for (std::size_t n = 0; n < xs.batch; ++n)
    for (std::size_t o = 0; o < ws.batch; ++o)
      for (std::size_t fo = 0; fo < Fo; ++fo)
        for (std::size_t to = 0; to < To; ++to) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (std::size_t i = 0; i < ws.channels; ++i)
            for (std::size_t a = 0; a < ws.freq; ++a)
              for (std::size_t b = 0; b < ws.time; ++b) {
                const long fi = static_cast<long>(fo * s.freq + a) - static_cast<long>(p.freq_lo);
                const long ti = static_cast<long>(to * s.time + b) - static_cast<long>(p.time_lo);
                if (fi < 0 || ti < 0 || fi >= static_cast<long>(xs.freq) || ti >= static_cast<long>(xs.time)) continue;
                acc += w(o, i, a, b) * x(n, i, static_cast<std::size_t>(fi), static_cast<std::size_t>(ti));
              }
          y(n, o, fo, to) = acc;
        }
  return y;
}

// Scratch directory under the build tree, emptied on construction.
inline std::string scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dbuf_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

}  // namespace dbtest
