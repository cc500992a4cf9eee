#pragma once

// Flat-table run configuration (TOML syntax): sections [channel],
// [system], [train], [quant]. Unknown sections or keys are errors.

#include <stdexcept>
#include <string>

#include "eqsim/harness.hpp"

namespace eqsim {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunManifest {
  SystemConfig system;
  std::string out_dir = ".";
  int format_version = 1;
};

SystemConfig parse_system_config(const std::string& text,
                                 const std::string& origin);
SystemConfig load_system_config(const std::string& path);

}  // namespace eqsim
