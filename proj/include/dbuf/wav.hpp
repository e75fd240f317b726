#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace dbuf {

// Mono 16-bit PCM at 16 kHz; anything else is rejected with a DataError that
// names the offending field.
std::vector<double> decode_wav(std::span<const std::uint8_t> bytes, double expected_rate = 16000.0);
std::vector<std::uint8_t> encode_wav(std::span<const double> samples, double sample_rate = 16000.0);

std::vector<double> read_wav(const std::string& path, double expected_rate = 16000.0);
void write_wav(const std::string& path, std::span<const double> samples, double sample_rate = 16000.0);

// Float sample in [-1, 1) <-> int16 with clipping and round-to-nearest.
std::int16_t to_pcm16(double x) noexcept;
double from_pcm16(std::int16_t v) noexcept;

}  // namespace dbuf
