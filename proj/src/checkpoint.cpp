#include "dbuf/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "dbuf/error.hpp"

namespace dbuf {

namespace {

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("checkpoint " + path + ": truncated");
  return v;
}

std::string get_string(std::istream& in, std::uint64_t len, const std::string& path) {
  if (len > (std::uint64_t{1} << 32)) throw DataError("checkpoint " + path + ": implausible string length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("checkpoint " + path + ": truncated");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  // Write to a sibling file and rename, so an interrupted save never leaves a
  // half-written checkpoint under the final name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp + " for writing");
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string meta = ckpt.meta.dump();
    put<std::uint64_t>(out, meta.size());
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put<std::uint64_t>(out, ckpt.arrays.size());
    for (const auto& [name, a] : ckpt.arrays) {
      put<std::uint64_t>(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      const auto& s = a.shape();
      for (std::uint64_t d : {s.batch, s.channels, s.freq, s.time}) put<std::uint64_t>(out, d);
      out.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
    }
    if (!out) throw DataError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError("checkpoint " + path + ": bad magic header");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint " + path + ": unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto meta_len = get<std::uint64_t>(in, path);
  try {
    ckpt.meta = nlohmann::json::parse(get_string(in, meta_len, path));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path + ": bad metadata: " + e.what());
  }
  const auto count = get<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint64_t>(in, path);
    std::string name = get_string(in, name_len, path);
    Shape4 s;
    s.batch = get<std::uint64_t>(in, path);
    s.channels = get<std::uint64_t>(in, path);
    s.freq = get<std::uint64_t>(in, path);
    s.time = get<std::uint64_t>(in, path);
    if (s.size() > (std::size_t{1} << 31)) throw DataError("checkpoint " + path + ": implausible array " + name);
    Array4 a(s);
    in.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint " + path + ": truncated array " + name);
    ckpt.arrays.emplace(std::move(name), std::move(a));
  }
  return ckpt;
}

}  // namespace dbuf
