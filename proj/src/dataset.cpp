#include "dbuf/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dbuf/error.hpp"
#include "dbuf/wav.hpp"

namespace dbuf {

namespace fs = std::filesystem;

namespace {

double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

std::vector<double> harmonic_tone(Rng& rng, std::size_t n, double fs) {
  std::vector<double> out(n, 0.0);
  const double f0 = rng.uniform(100.0, 400.0);
  const std::size_t harmonics = 2 + rng.index(5);
  const double vibrato_rate = rng.uniform(3.0, 7.0);
  const double vibrato_depth = rng.uniform(0.0, 0.02);
  // Syllable-like bursts: a raised-cosine envelope at a random rate, plus an
  // overall onset/offset inside the clip.
  const double burst_rate = rng.uniform(1.5, 4.0);
  const double burst_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double on = rng.uniform(0.0, 0.3) * static_cast<double>(n);
  const double off = (1.0 - rng.uniform(0.0, 0.3)) * static_cast<double>(n);
  std::vector<double> amp(harmonics), phase(harmonics);
  for (std::size_t h = 0; h < harmonics; ++h) {
    amp[h] = rng.uniform(0.4, 1.0) / static_cast<double>(h + 1);
    phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  double theta = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double fi = f0 * (1.0 + vibrato_depth * std::sin(2.0 * std::numbers::pi * vibrato_rate * t));
    theta += 2.0 * std::numbers::pi * fi / fs;
    double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * burst_rate * t + burst_phase);
    const double x = static_cast<double>(i);
    if (x < on || x > off) env = 0.0;
    double s = 0.0;
    for (std::size_t h = 0; h < harmonics; ++h) {
      const double fh = fi * static_cast<double>(h + 1);
      if (fh >= 0.45 * fs) break;
      s += amp[h] * std::sin(static_cast<double>(h + 1) * theta + phase[h]);
    }
    out[i] = env * s;
  }
  return out;
}

// Pink noise via a sum of first-order sections (Kellet's economy filter).
std::vector<double> pink_noise(Rng& rng, std::size_t n) {
  std::vector<double> out(n);
  double b0 = 0, b1 = 0, b2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = rng.normal();
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    out[i] = b0 + b1 + b2 + w * 0.1848;
  }
  return out;
}

}  // namespace

AudioPair synth_pair(Rng& rng, const SynthOptions& opt) {
  const auto n = static_cast<std::size_t>(std::llround(opt.seconds * opt.sample_rate));
  AudioPair p;
  p.clean.assign(n, 0.0);
  const std::size_t tones = 2 + rng.index(4);
  for (std::size_t k = 0; k < tones; ++k) {
    const auto tone = harmonic_tone(rng, n, opt.sample_rate);
    for (std::size_t i = 0; i < n; ++i) p.clean[i] += tone[i];
  }
  std::vector<double> noise(n);
  const double mix = rng.uniform();  // 0 = white, 1 = pink
  const auto pink = pink_noise(rng, n);
  double pink_e = 0.0;
  for (double v : pink) pink_e += v * v;
  const double pink_gain = pink_e > 0.0 ? std::sqrt(static_cast<double>(n) / pink_e) : 0.0;
  for (std::size_t i = 0; i < n; ++i) noise[i] = (1.0 - mix) * rng.normal() + mix * pink_gain * pink[i];

  p.snr_db = rng.uniform(opt.snr_lo, opt.snr_hi);
  const double ec = energy(p.clean);
  const double en = energy(noise);
  if (ec == 0.0 || en == 0.0) throw NumericError("synth_pair: degenerate clean or noise signal");
  const double g = std::sqrt(ec / (en * std::pow(10.0, p.snr_db / 10.0)));
  p.noisy.resize(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p.noisy[i] = p.clean[i] + g * noise[i];
    peak = std::max({peak, std::abs(p.noisy[i]), std::abs(p.clean[i])});
  }
  const double scale = opt.peak / peak;
  for (std::size_t i = 0; i < n; ++i) {
    p.clean[i] *= scale;
    p.noisy[i] *= scale;
  }
  return p;
}

std::vector<AudioPair> synth_dataset(std::size_t n_pairs, Rng& rng, const SynthOptions& opt) {
  std::vector<AudioPair> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) out.push_back(synth_pair(rng, opt));
  return out;
}

double measured_snr_db(const std::vector<double>& clean, const std::vector<double>& noisy) {
  if (clean.size() != noisy.size()) throw ShapeError("measured_snr_db: length mismatch");
  double es = 0.0, en = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    es += clean[i] * clean[i];
    const double d = noisy[i] - clean[i];
    en += d * d;
  }
  if (es == 0.0) throw DomainError("measured_snr_db: silent reference");
  if (en == 0.0) return 100.0;
  return 10.0 * std::log10(es / en);
}

std::string write_dataset(const std::string& dir, const std::vector<AudioPair>& pairs, double sample_rate) {
  fs::create_directories(dir);
  const fs::path manifest = fs::path(dir) / "manifest.csv";
  std::ofstream out(manifest);
  if (!out) throw DataError("cannot write " + manifest.string());
  out << "clean_path,noisy_path,snr_db\n";
  char name[64];
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::snprintf(name, sizeof name, "%04zu.wav", i);
    const std::string c = std::string("clean_") + name;
    const std::string n = std::string("noisy_") + name;
    write_wav((fs::path(dir) / c).string(), pairs[i].clean, sample_rate);
    write_wav((fs::path(dir) / n).string(), pairs[i].noisy, sample_rate);
    out << c << ',' << n << ',' << pairs[i].snr_db << '\n';
  }
  if (!out) throw DataError("failed writing " + manifest.string());
  return manifest.string();
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path q(p);
    return q.is_absolute() ? q.string() : (base / q).string();
  };
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line_no == 1) continue;  // header
    std::stringstream ss(line);
    std::string c, n, snr;
    if (!std::getline(ss, c, ',') || !std::getline(ss, n, ',')) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected clean_path,noisy_path[,snr_db]");
    }
    ManifestEntry e{resolve(c), resolve(n), 0.0};
    if (std::getline(ss, snr, ',') && !snr.empty()) {
      try {
        e.snr_db = std::stod(snr);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(line_no) + ": bad snr_db '" + snr + "'");
      }
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<AudioPair> load_dataset(const std::string& manifest_path) {
  std::vector<AudioPair> pairs;
  for (const auto& e : read_manifest(manifest_path)) {
    AudioPair p{read_wav(e.clean_path), read_wav(e.noisy_path), e.snr_db};
    if (p.clean.size() != p.noisy.size()) throw DataError("pair " + e.clean_path + " / " + e.noisy_path + " differ in length");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace dbuf
