#pragma once

#include <string>
#include <vector>

#include "dbuf/rng.hpp"

namespace dbuf {

struct AudioPair {
  std::vector<double> clean;
  std::vector<double> noisy;
  double snr_db = 0.0;  // target SNR of the mixture
};

struct SynthOptions {
  double sample_rate = 16000.0;
  double seconds = 2.0;
  double snr_lo = -5.0;
  double snr_hi = 10.0;
  double peak = 0.9;  // noisy mixtures are scaled so |x| stays below this
};

// Clean: 2-5 harmonic tones with amplitude envelopes. Noise: a random
// white/pink blend scaled to an SNR drawn uniformly from [snr_lo, snr_hi].
AudioPair synth_pair(Rng& rng, const SynthOptions& opt = {});
std::vector<AudioPair> synth_dataset(std::size_t n_pairs, Rng& rng, const SynthOptions& opt = {});

// 10 log10(|clean|^2 / |noisy - clean|^2).
double measured_snr_db(const std::vector<double>& clean, const std::vector<double>& noisy);

struct ManifestEntry {
  std::string clean_path;
  std::string noisy_path;
  double snr_db = 0.0;
};

// Writes clean_NNNN.wav / noisy_NNNN.wav and manifest.csv into dir; returns
// the manifest path.
std::string write_dataset(const std::string& dir, const std::vector<AudioPair>& pairs, double sample_rate = 16000.0);
// Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::string& path);
std::vector<AudioPair> load_dataset(const std::string& manifest_path);

}  // namespace dbuf
