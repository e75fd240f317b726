#include "dbuf/kvconfig.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "dbuf/error.hpp"

namespace dbuf {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Strips a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

}  // namespace

KvConfig KvConfig::parse(const std::string& text, const std::string& origin) {
  KvConfig kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  std::size_t no = 0;
  auto fail = [&](const std::string& what) { throw ConfigError(origin + ":" + std::to_string(no) + ": " + what); };
  while (std::getline(in, line)) {
    ++no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail("missing key");
    if (value.empty()) fail("missing value for '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    if (kv.values_.count(full)) fail("duplicate key '" + full + "'");
    kv.values_[full] = value;
  }
  return kv;
}

KvConfig KvConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::vector<std::string> KvConfig::keys() const {
  std::vector<std::string> k;
  for (const auto& [key, v] : values_) k.push_back(key);
  return k;
}

const std::string& KvConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(origin_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KvConfig::get_string(const std::string& key) const { return unquote(raw(key)); }

double KvConfig::get_double(const std::string& key) const {
  const std::string v = unquote(raw(key));
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": '" + key + "' is not a number: " + v);
  }
}

std::uint64_t KvConfig::get_uint(const std::string& key) const {
  const std::string v = unquote(raw(key));
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(origin_ + ": '" + key + "' is not a non-negative integer: " + v);
  }
  return out;
}

std::vector<std::size_t> KvConfig::get_size_list(const std::string& key) const {
  const std::string v = raw(key);
  if (v.size() < 2 || v.front() != '[' || v.back() != ']') {
    throw ConfigError(origin_ + ": '" + key + "' must be an array like [1, 2]");
  }
  std::vector<std::size_t> out;
  std::stringstream ss(v.substr(1, v.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::size_t x = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), x);
    if (ec != std::errc() || p != item.data() + item.size()) {
      throw ConfigError(origin_ + ": '" + key + "' has a non-integer entry: " + item);
    }
    out.push_back(x);
  }
  return out;
}

namespace {

void reject_unknown(const KvConfig& kv, const std::string& section, const std::set<std::string>& known) {
  const std::string prefix = section + ".";
  for (const auto& k : kv.keys()) {
    if (k.rfind(prefix, 0) == 0 && !known.count(k.substr(prefix.size()))) {
      throw ConfigError("unknown key '" + k + "'");
    }
  }
}

}  // namespace

UNetConfig unet_config_from(const KvConfig& kv, UNetConfig c) {
  reject_unknown(kv, "unet",
                 {"channels", "time_strides", "freq_strides", "time_kernels", "freq_kernels", "fourier_dim", "mode",
                  "buffer_len", "norm", "padding", "output", "max_groups", "norm_eps", "init_seed"});
  if (kv.has("unet.channels")) c.channels = kv.get_size_list("unet.channels");
  if (kv.has("unet.time_strides")) c.time_strides = kv.get_size_list("unet.time_strides");
  if (kv.has("unet.freq_strides")) c.freq_strides = kv.get_size_list("unet.freq_strides");
  if (kv.has("unet.time_kernels")) c.time_kernels = kv.get_size_list("unet.time_kernels");
  if (kv.has("unet.freq_kernels")) c.freq_kernels = kv.get_size_list("unet.freq_kernels");
  if (kv.has("unet.fourier_dim")) c.fourier_dim = kv.get_uint("unet.fourier_dim");
  if (kv.has("unet.mode")) c.mode = parse_unet_mode(kv.get_string("unet.mode"));
  if (kv.has("unet.buffer_len")) c.buffer_len = kv.get_uint("unet.buffer_len");
  if (kv.has("unet.norm")) c.norm = parse_norm_kind(kv.get_string("unet.norm"));
  if (kv.has("unet.padding")) c.padding = parse_padding_kind(kv.get_string("unet.padding"));
  if (kv.has("unet.output")) c.output = parse_output_kind(kv.get_string("unet.output"));
  if (kv.has("unet.max_groups")) c.max_groups = kv.get_uint("unet.max_groups");
  if (kv.has("unet.norm_eps")) c.norm_eps = kv.get_double("unet.norm_eps");
  if (kv.has("unet.init_seed")) c.init_seed = kv.get_uint("unet.init_seed");
  c.validate();
  return c;
}

BbedParams bbed_params_from(const KvConfig& kv, BbedParams p) {
  reject_unknown(kv, "bbed", {"c", "r", "t_max", "epsilon"});
  if (kv.has("bbed.c")) p.c = kv.get_double("bbed.c");
  if (kv.has("bbed.r")) p.r = kv.get_double("bbed.r");
  if (kv.has("bbed.t_max")) p.t_max = kv.get_double("bbed.t_max");
  if (kv.has("bbed.epsilon")) p.epsilon = kv.get_double("bbed.epsilon");
  p.validate();
  return p;
}

}  // namespace dbuf
