#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dbuf/sde_bbed.hpp"
#include "dbuf/unet.hpp"

namespace dbuf {

// Small TOML subset: `[section]` headers, `key = value` lines, `#` comments.
// Values are numbers, quoted or bare strings, or flat arrays `[1, 2, 3]`.
// Keys are stored as "section.key".
class KvConfig {
 public:
  static KvConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KvConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::vector<std::string> keys() const;
  void set(const std::string& key, const std::string& raw) { values_[key] = raw; }

  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
  std::string origin_;
};

// Keys under [unet] / [bbed] override `base`; unknown keys in those sections
// are rejected.
UNetConfig unet_config_from(const KvConfig& kv, UNetConfig base = {});
BbedParams bbed_params_from(const KvConfig& kv, BbedParams base = {});

}  // namespace dbuf
