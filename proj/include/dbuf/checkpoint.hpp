#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "dbuf/array4.hpp"

namespace dbuf {

// Self-describing container: magic, version, a JSON block and named arrays
// with their shapes. Little-endian doubles.
struct Checkpoint {
  nlohmann::json meta;
  std::map<std::string, Array4> arrays;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'B', 'U', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dbuf
