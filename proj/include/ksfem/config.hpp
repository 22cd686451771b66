#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ksfem/driver.hpp"

namespace ksfem {

struct RunConfig {
  std::string name;
  MolecularSystem system;
  DriverConfig driver;
  std::string out_dir = "out";
  /// Raw text the configuration was parsed from, before overrides.
  std::string source;
};

/// Overrides keyed "section.key", applied on top of the file.
using ConfigOverrides = std::map<std::string, std::string>;

/// INI-style text: [system], [scf], [augmented], [adapt] sections of
/// `key = value` lines and an [atoms] section of `symbol x y z Z` rows.
/// '#' starts a comment. Throws ConfigError on unknown sections or keys,
/// malformed values, or an invalid system.
RunConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides = {});
/// Throws IoError when the file cannot be read.
RunConfig parse_config(const std::string& path, const ConfigOverrides& overrides = {});

/// KSFEM_<SECTION>_<KEY> variables of the environment, e.g. KSFEM_SCF_TOL.
ConfigOverrides environment_overrides();

SolverMode parse_mode(const std::string& text);
std::string to_string(SolverMode mode);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

}  // namespace ksfem
