#include "dbuf/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dbuf/error.hpp"

namespace dbuf {

namespace {

std::uint32_t read_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}
std::uint16_t read_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
bool tag_is(std::span<const std::uint8_t> b, std::size_t at, const char* tag) {
  return std::memcmp(b.data() + at, tag, 4) == 0;
}

}  // namespace

std::int16_t to_pcm16(double x) noexcept {
  const double scaled = std::round(x * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

double from_pcm16(std::int16_t v) noexcept { return static_cast<double>(v) / 32768.0; }

std::vector<double> decode_wav(std::span<const std::uint8_t> b, double expected_rate) {
  if (b.size() < 12 || !tag_is(b, 0, "RIFF") || !tag_is(b, 8, "WAVE")) {
    throw DataError("wav: not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const std::uint32_t size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw DataError("wav: truncated chunk");
    if (tag_is(b, pos, "fmt ")) {
      if (size < 16) throw DataError("wav: fmt chunk too short");
      const auto format = read_u16(b, body);
      const auto channels = read_u16(b, body + 2);
      const auto rate = read_u32(b, body + 4);
      const auto bits = read_u16(b, body + 14);
      if (format != 1) throw DataError("wav: only PCM (format 1) is supported, got format " + std::to_string(format));
      if (channels != 1) throw DataError("wav: only mono is supported, got " + std::to_string(channels) + " channels");
      if (bits != 16) throw DataError("wav: only 16-bit samples are supported, got " + std::to_string(bits) + " bits");
      if (static_cast<double>(rate) != expected_rate) {
        throw DataError("wav: expected " + std::to_string(static_cast<long>(expected_rate)) + " Hz, got " +
                        std::to_string(rate) + " Hz");
      }
      have_fmt = true;
    } else if (tag_is(b, pos, "data")) {
      if (!have_fmt) throw DataError("wav: data chunk precedes fmt chunk");
      std::vector<double> out(size / 2);
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = from_pcm16(static_cast<std::int16_t>(read_u16(b, body + 2 * i)));
      }
      return out;
    }
    pos = body + size + (size & 1u);
  }
  throw DataError("wav: no data chunk");
}

std::vector<std::uint8_t> encode_wav(std::span<const double> samples, double sample_rate) {
  const auto rate = static_cast<std::uint32_t>(sample_rate);
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (double x : samples) put_u16(out, static_cast<std::uint16_t>(to_pcm16(x)));
  return out;
}

std::vector<double> read_wav(const std::string& path, double expected_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("wav: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wav(bytes, expected_rate);
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + " (" + path + ")");
  }
}

void write_wav(const std::string& path, std::span<const double> samples, double sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("wav: cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace dbuf
