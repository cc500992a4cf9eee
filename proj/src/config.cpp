#include "eqsim/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace eqsim {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Setter {
  std::function<void(SystemConfig&, const std::string&, const std::string&)> fn;
};

[[noreturn]] void fail(const std::string& origin, int line,
                       const std::string& msg) {
  throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& v, const std::string& ctx) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + ctx + ": '" + v + "'");
  }
}

long long parse_int(const std::string& v, const std::string& ctx) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("bad integer for " + ctx + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v, const std::string& ctx) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("bad boolean for " + ctx + ": '" + v + "'");
}

using KeyMap = std::map<std::string, std::function<void(SystemConfig&, const std::string&)>>;

const std::map<std::string, KeyMap>& key_tables() {
  auto D = [](double SystemConfig::*f) {
    return [f](SystemConfig& c, const std::string& v) {
      c.*f = parse_double(v, "system");
    };
  };
  auto I = [](int SystemConfig::*f) {
    return [f](SystemConfig& c, const std::string& v) {
      c.*f = static_cast<int>(parse_int(v, "system"));
    };
  };
  static const std::map<std::string, KeyMap> tables = {
      {"channel",
       {
           {"lambda", [](SystemConfig& c, const std::string& v) { c.channel.lambda_m = parse_double(v, "channel.lambda"); }},
           {"fiber_km", [](SystemConfig& c, const std::string& v) { c.channel.fiber_km = parse_double(v, "channel.fiber_km"); }},
           {"dcd", [](SystemConfig& c, const std::string& v) { c.channel.dcd_ps_nm_km = parse_double(v, "channel.dcd"); }},
           {"alpha_db_km", [](SystemConfig& c, const std::string& v) { c.channel.alpha_db_km = parse_double(v, "channel.alpha_db_km"); }},
           {"baud", [](SystemConfig& c, const std::string& v) { c.channel.baud = parse_double(v, "channel.baud"); }},
           {"n_os", [](SystemConfig& c, const std::string& v) { c.channel.n_os = static_cast<int>(parse_int(v, "channel.n_os")); }},
           {"snr_db", [](SystemConfig& c, const std::string& v) { c.channel.snr_db = parse_double(v, "channel.snr_db"); }},
           {"pam_order", [](SystemConfig& c, const std::string& v) { c.channel.pam_order = static_cast<int>(parse_int(v, "channel.pam_order")); }},
           {"rolloff", [](SystemConfig& c, const std::string& v) { c.channel.rolloff = parse_double(v, "channel.rolloff"); }},
           {"seed", [](SystemConfig& c, const std::string& v) { c.channel.seed = static_cast<uint64_t>(parse_int(v, "channel.seed")); }},
       }},
      {"system",
       {
           {"p_i", I(&SystemConfig::p_i)},
           {"p_t", I(&SystemConfig::p_t)},
           {"f_clk", D(&SystemConfig::f_clk)},
           {"n_runs", I(&SystemConfig::n_runs)},
           {"max_updates", I(&SystemConfig::max_updates)},
           {"eval_symbols", I(&SystemConfig::eval_symbols)},
           {"fec_threshold", D(&SystemConfig::fec_threshold)},
           {"v_p", I(&SystemConfig::v_p)},
           {"eval_every", I(&SystemConfig::eval_every)},
           {"threads", I(&SystemConfig::threads)},
           {"line_rate_mode", [](SystemConfig& c, const std::string& v) { c.line_rate_mode = parse_bool(v, "system.line_rate_mode"); }},
       }},
      {"train",
       {
           {"lr", [](SystemConfig& c, const std::string& v) { c.train.lr = parse_double(v, "train.lr"); }},
           {"seq_len", [](SystemConfig& c, const std::string& v) { c.train.seq_len = static_cast<int>(parse_int(v, "train.seq_len")); }},
       }},
      {"quant",
       {
           {"input_bits", [](SystemConfig& c, const std::string& v) { c.quant.input_bits = static_cast<int>(parse_int(v, "quant.input_bits")); }},
           {"input_frac", [](SystemConfig& c, const std::string& v) { c.quant.input_frac = static_cast<int>(parse_int(v, "quant.input_frac")); }},
           {"act_bits", [](SystemConfig& c, const std::string& v) { c.quant.act_bits = static_cast<int>(parse_int(v, "quant.act_bits")); }},
           {"act_frac", [](SystemConfig& c, const std::string& v) { c.quant.act_frac = static_cast<int>(parse_int(v, "quant.act_frac")); }},
           {"weight_bits", [](SystemConfig& c, const std::string& v) { c.quant.weight_bits = static_cast<int>(parse_int(v, "quant.weight_bits")); }},
           {"weight_frac", [](SystemConfig& c, const std::string& v) { c.quant.weight_frac = static_cast<int>(parse_int(v, "quant.weight_frac")); }},
           {"bias_bits", [](SystemConfig& c, const std::string& v) { c.quant.bias_bits = static_cast<int>(parse_int(v, "quant.bias_bits")); }},
           {"bias_frac", [](SystemConfig& c, const std::string& v) { c.quant.bias_frac = static_cast<int>(parse_int(v, "quant.bias_frac")); }},
           {"grad_bits", [](SystemConfig& c, const std::string& v) { c.quant.grad_bits = static_cast<int>(parse_int(v, "quant.grad_bits")); }},
           {"grad_frac", [](SystemConfig& c, const std::string& v) { c.quant.grad_frac = static_cast<int>(parse_int(v, "quant.grad_frac")); }},
       }},
  };
  return tables;
}

}  // namespace

SystemConfig parse_system_config(const std::string& text,
                                 const std::string& origin) {
  SystemConfig cfg;
  const auto& tables = key_tables();
  const KeyMap* section = nullptr;
  std::string section_name;

  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, line_no, "unterminated section");
      section_name = trim(line.substr(1, line.size() - 2));
      const auto it = tables.find(section_name);
      if (it == tables.end())
        fail(origin, line_no, "unknown section [" + section_name + "]");
      section = &it->second;
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(origin, line_no, "expected key = value");
    if (!section) fail(origin, line_no, "key outside any section");
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);

    const auto it = section->find(key);
    if (it == section->end())
      fail(origin, line_no,
           "unknown key '" + key + "' in section [" + section_name + "]");
    try {
      it->second(cfg, value);
    } catch (const ConfigError& e) {
      fail(origin, line_no, e.what());
    }
  }

  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return cfg;
}

SystemConfig load_system_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return parse_system_config(buf.str(), path);
}

}  // namespace eqsim
