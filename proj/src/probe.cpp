#include "dbuf/probe.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dbuf/error.hpp"
#include "dbuf/rng.hpp"

namespace dbuf {

ProbeMethod parse_probe_method(const std::string& s) {
  if (s == "gradient") return ProbeMethod::Gradient;
  if (s == "perturbation") return ProbeMethod::Perturbation;
  throw ConfigError("unknown probe method '" + s + "'");
}

std::string DependencyMatrix::to_text() const {
  std::string out;
  out.reserve(rows * (cols + 1));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out += at(i, j) ? '#' : '.';
    out += '\n';
  }
  return out;
}

void DependencyMatrix::write_pgm(const std::string& path, std::size_t scale) const {
  if (scale == 0) scale = 1;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  const std::size_t w = cols * scale;
  const std::size_t h = rows * scale;
  f << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> line(w);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      std::fill_n(line.begin() + static_cast<std::ptrdiff_t>(j * scale), scale, at(i, j) ? 0 : 255);
    }
    for (std::size_t r = 0; r < scale; ++r) f.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(w));
  }
  if (!f) throw DataError("failed writing " + path);
}

namespace {

DependencyMatrix finish(std::size_t rows, std::size_t cols, std::vector<double> raw) {
  double peak = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v)) throw NumericError("probe: non-finite sensitivity");
    peak = std::max(peak, v);
  }
  DependencyMatrix m{rows, cols, std::move(raw), std::vector<std::uint8_t>(rows * cols, 0)};
  if (peak == 0.0) return m;
  for (std::size_t k = 0; k < m.strength.size(); ++k) {
    m.strength[k] /= peak;
    m.dep[k] = m.strength[k] > kProbeThreshold ? 1 : 0;
  }
  return m;
}

Array4 random_input(const Shape4& s, Rng& rng) {
  Array4 x(s);
  for (auto& v : x.values()) v = rng.normal();
  return x;
}

}  // namespace

DependencyMatrix dependency_matrix(const ProbeFn& fn, const Shape4& input_shape, ProbeMethod method,
                                   std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x70726f6265));
  const Array4 x = random_input(input_shape, rng);
  const std::size_t T = input_shape.time;

  if (method == ProbeMethod::Perturbation) {
    Array4 base;
    {
      Tape tape;
      base = tape.value(fn(tape, tape.leaf(x)));
    }
    const Shape4 os = base.shape();
    if (os.time != T) throw ShapeError("probe: output frames differ from input frames");
    std::vector<double> raw(T * T, 0.0);
    for (std::size_t j = 0; j < T; ++j) {
      Array4 xp = x;
      for (std::size_t n = 0; n < input_shape.batch; ++n)
        for (std::size_t c = 0; c < input_shape.channels; ++c)
          for (std::size_t f = 0; f < input_shape.freq; ++f) xp(n, c, f, j) += 1.0;
      Tape tape;
      const Array4& out = tape.value(fn(tape, tape.leaf(std::move(xp))));
      for (std::size_t n = 0; n < os.batch; ++n)
        for (std::size_t c = 0; c < os.channels; ++c)
          for (std::size_t f = 0; f < os.freq; ++f)
            for (std::size_t i = 0; i < T; ++i) {
              const double d = std::abs(out(n, c, f, i) - base(n, c, f, i));
              if (!std::isfinite(d)) throw NumericError("probe: non-finite response");
              double& r = raw[i * T + j];
              r = std::max(r, d);
            }
    }
    return finish(T, T, std::move(raw));
  }

  std::vector<double> raw(T * T, 0.0);
  for (std::size_t i = 0; i < T; ++i) {
    Tape tape;
    Var in = tape.leaf(x, true);
    Var out = fn(tape, in);
    const Shape4 os = tape.value(out).shape();
    if (os.time != T) throw ShapeError("probe: output frames differ from input frames");
    // A random cotangent on frame i keeps channel contributions from cancelling.
    Array4 cot(os);
    for (std::size_t n = 0; n < os.batch; ++n)
      for (std::size_t c = 0; c < os.channels; ++c)
        for (std::size_t f = 0; f < os.freq; ++f) cot(n, c, f, i) = rng.normal();
    tape.backward(out, cot);
    const Array4& gx = tape.grad(in);
    for (std::size_t n = 0; n < input_shape.batch; ++n)
      for (std::size_t c = 0; c < input_shape.channels; ++c)
        for (std::size_t f = 0; f < input_shape.freq; ++f)
          for (std::size_t j = 0; j < T; ++j) raw[i * T + j] += std::abs(gx(n, c, f, j));
  }
  return finish(T, T, std::move(raw));
}

DependencyMatrix dependency_matrix(const UNet& net, std::size_t input_len, std::size_t freq, ProbeMethod method,
                                   std::uint64_t seed) {
  const auto& cfg = net.config();
  std::vector<std::vector<double>> times;
  if (cfg.mode == UNetMode::Diffusion) {
    if (input_len >= cfg.buffer_len) {
      times.push_back(UNet::buffer_frame_times(input_len, inference_schedule(cfg.buffer_len, BbedParams{})));
    } else {
      times.emplace_back(input_len, 0.0);
    }
  }
  ProbeFn fn = [&](Tape& tape, Var x) { return net.forward(tape, x, times, false); };
  return dependency_matrix(fn, {1, cfg.in_channels(), freq, input_len}, method, seed);
}

CausalityReport assert_block_causal(const DependencyMatrix& dep, std::size_t g) {
  if (g == 0) throw ConfigError("assert_block_causal: g must be positive");
  if (dep.rows != dep.cols) throw ShapeError("assert_block_causal: dependency matrix must be square");
  const std::size_t T = dep.rows;
  const std::size_t lead = (g - T % g) % g;  // virtual frames before 0 completing the first block
  auto block = [&](std::size_t t) { return (t + lead) / g; };

  CausalityReport r;
  r.g = g;
  r.lookahead.assign(T, 0);
  r.expected.assign(T, 0);
  bool first = true;
  for (std::size_t i = 0; i < T; ++i) {
    long reach = std::numeric_limits<long>::min();
    for (std::size_t j = 0; j < T; ++j) {
      if (!dep.at(i, j)) continue;
      reach = std::max(reach, static_cast<long>(j) - static_cast<long>(i));
      if (block(j) > block(i)) {
        if (first) {
          r.first_violation_out = i;
          r.first_violation_in = j;
          first = false;
        }
        ++r.violations;
      }
    }
    r.lookahead[i] = reach == std::numeric_limits<long>::min() ? 0 : reach;
    r.expected[i] = static_cast<long>((block(i) + 1) * g - lead - 1 - i);
    if (r.lookahead[i] != r.expected[i]) ++r.lookahead_mismatches;
  }
  return r;
}

std::string CausalityReport::summary() const {
  std::ostringstream os;
  os << (passed() ? "PASS" : "FAIL") << " block-causal g=" << g << " violations=" << violations;
  if (violations) os << " first=(out " << first_violation_out << ", in " << first_violation_in << ")";
  os << " lookahead_mismatches=" << lookahead_mismatches;
  return os.str();
}

}  // namespace dbuf
