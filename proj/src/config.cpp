#include "ksfem/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <fmt/format.h>

#include "ksfem/error.hpp"

extern char** environ;

namespace ksfem {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

std::vector<std::string> split(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(x)) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, v));
  }
  return x;
}

int to_int(const std::string& key, const std::string& v) {
  int x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, v));
  }
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  const std::string l = lower(v);
  if (l == "true" || l == "yes" || l == "1") return true;
  if (l == "false" || l == "no" || l == "0") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

AdaptiveFunction to_function(const std::string& key, const std::string& v) {
  if (v == "sqrt_density") return AdaptiveFunction::kSqrtDensity;
  if (v == "density") return AdaptiveFunction::kDensity;
  if (v == "wavefunctions") return AdaptiveFunction::kWavefunctions;
  throw ConfigError(fmt::format("{}: expected sqrt_density, density or wavefunctions, got '{}'", key, v));
}

struct Builder {
  RunConfig cfg;
  std::optional<int> orbitals;
  std::map<std::string, std::function<void(const std::string&, const std::string&)>> keys;

  Builder() {
    DriverConfig& d = cfg.driver;
    auto real = [](double& target) {
      return [&target](const std::string& k, const std::string& v) { target = to_double(k, v); };
    };
    auto integer = [](int& target) {
      return [&target](const std::string& k, const std::string& v) { target = to_int(k, v); };
    };
    auto boolean = [](bool& target) {
      return [&target](const std::string& k, const std::string& v) { target = to_bool(k, v); };
    };

    keys["system.name"] = [this](const std::string&, const std::string& v) { cfg.name = v; };
    keys["system.orbitals"] = [this](const std::string& k, const std::string& v) { orbitals = to_int(k, v); };
    keys["system.f_occ"] = real(cfg.system.f_occ);
    keys["system.box"] = [this](const std::string& k, const std::string& v) {
      const auto t = split(v);
      if (t.size() == 2) {
        cfg.system.box = Box::cube(to_double(k, t[0]), to_double(k, t[1]));
      } else if (t.size() == 6) {
        cfg.system.box = {Point(to_double(k, t[0]), to_double(k, t[1]), to_double(k, t[2])),
                          Point(to_double(k, t[3]), to_double(k, t[4]), to_double(k, t[5]))};
      } else {
        throw ConfigError(fmt::format("{}: expected 'lo hi' or six bounds", k));
      }
      if (!(cfg.system.box.extent().array() > 0.0).all()) throw ConfigError(fmt::format("{}: empty box", k));
    };
    keys["system.reference_energy"] = [this](const std::string& k, const std::string& v) {
      cfg.driver.reference_energy = to_double(k, v);
    };
    keys["system.hamiltonian"] = [this](const std::string& k, const std::string& v) {
      if (v == "kohn_sham") {
        cfg.driver.terms = {true, true};
      } else if (v == "linear") {
        cfg.driver.terms = {false, false};
      } else {
        throw ConfigError(fmt::format("{}: expected kohn_sham or linear, got '{}'", k, v));
      }
    };

    keys["scf.tol"] = real(d.scf.tol);
    keys["scf.max_iter"] = integer(d.scf.max_iter);
    keys["scf.depth"] = integer(d.scf.depth);
    keys["scf.beta"] = real(d.scf.beta);
    keys["scf.eig_tol"] = real(d.scf.eig_tol);
    keys["scf.mass_inner_product"] = boolean(d.scf.mass_inner_product);

    keys["augmented.tol"] = real(d.augmented.tol);
    keys["augmented.max_outer"] = integer(d.augmented.max_outer);
    keys["augmented.inner_tol"] = real(d.augmented.inner_tol);
    keys["augmented.max_inner"] = integer(d.augmented.max_inner);
    keys["augmented.cg_tol"] = real(d.augmented.cg.rel_tol);
    keys["augmented.coarse_n"] = integer(d.coarse_n);
    keys["augmented.shift"] = [this](const std::string& k, const std::string& v) {
      AugmentedConfig& a = cfg.driver.augmented;
      if (v == "charges") {
        a.mu = 0.0;
        a.shift_rule = ShiftRule::kCharges;
      } else if (v == "spectral") {
        a.mu = 0.0;
        a.shift_rule = ShiftRule::kSpectral;
      } else {
        a.mu = to_double(k, v);
        if (a.mu <= 0.0) throw ConfigError(fmt::format("{}: a numeric shift must be positive", k));
      }
    };

    keys["adapt.mode"] = [this](const std::string&, const std::string& v) { cfg.driver.mode = parse_mode(v); };
    keys["adapt.function"] = [this](const std::string& k, const std::string& v) {
      cfg.driver.adaptive_function = to_function(k, v);
    };
    keys["adapt.n0"] = integer(d.n0);
    keys["adapt.dn"] = integer(d.dn);
    keys["adapt.k_asm"] = integer(d.k_asm);
    keys["adapt.levels"] = integer(d.k_max);
    keys["adapt.tol"] = real(d.tol);
    keys["adapt.epsilon"] = real(d.metric.epsilon);
    keys["adapt.h_min"] = real(d.metric.h_min);
    keys["adapt.h_max"] = real(d.metric.h_max);
    keys["adapt.sweeps"] = integer(d.move.sweeps);
    keys["adapt.pin_nuclei"] = boolean(d.pin_nuclei);
    keys["adapt.external_mesh"] = [this](const std::string&, const std::string& v) {
      cfg.driver.external_mesh_pattern = v;
    };
    keys["adapt.seed"] = [this](const std::string& k, const std::string& v) {
      const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), cfg.driver.seed);
      if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(fmt::format("{}: bad seed '{}'", k, v));
    };
  }

  void set(const std::string& key, const std::string& value) {
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError(fmt::format("unknown key '{}'", key));
    it->second(key, value);
  }

  void atom(const std::string& row, int line) {
    const auto t = split(row);
    if (t.size() != 5) {
      throw ConfigError(fmt::format("line {}: atom rows are 'symbol x y z Z', got '{}'", line, row));
    }
    const std::string where = fmt::format("line {}", line);
    cfg.system.atoms.push_back(
        {t[0], Point(to_double(where, t[1]), to_double(where, t[2]), to_double(where, t[3])), to_double(where, t[4])});
  }

  RunConfig finish() {
    MolecularSystem& s = cfg.system;
    if (s.atoms.empty()) throw ConfigError("the [atoms] section is empty");
    if (!(s.f_occ > 0.0)) throw ConfigError("system.f_occ must be positive");
    if (orbitals) {
      s.num_orbitals = *orbitals;
    } else {
      const double n = s.total_charge() / s.f_occ;
      if (std::abs(n - std::round(n)) > 1e-9) {
        throw ConfigError(fmt::format("{} electrons do not fill orbitals of occupation {}; set system.orbitals",
                                      s.total_charge(), s.f_occ));
      }
      s.num_orbitals = static_cast<int>(std::round(n));
    }
    validate(cfg.driver, s);
    return std::move(cfg);
  }
};

const std::vector<std::string> kSections = {"system", "scf", "augmented", "adapt", "atoms"};

}  // namespace

SolverMode parse_mode(const std::string& text) {
  if (text == "augmented") return SolverMode::kAugmented;
  if (text == "direct") return SolverMode::kDirect;
  if (text == "uniform") return SolverMode::kUniform;
  throw ConfigError(fmt::format("mode must be direct, augmented or uniform, got '{}'", text));
}

std::string to_string(SolverMode mode) {
  switch (mode) {
    case SolverMode::kAugmented: return "augmented";
    case SolverMode::kDirect: return "direct";
    case SolverMode::kUniform: return "uniform";
  }
  return "unknown";
}

RunConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides) {
  Builder b;
  b.cfg.source = text;
  std::istringstream in(text);
  std::string section;
  int line_no = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("line {}: malformed section header", line_no));
      section = trim(line.substr(1, line.size() - 2));
      if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
        throw ConfigError(fmt::format("line {}: unknown section [{}]", line_no, section));
      }
      continue;
    }
    if (section.empty()) throw ConfigError(fmt::format("line {}: entry outside any section", line_no));
    if (section == "atoms") {
      b.atom(line, line_no);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected 'key = value'", line_no));
    b.set(section + "." + trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& [key, value] : overrides) b.set(key, value);
  return b.finish();
}

RunConfig parse_config(const std::string& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot read config '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = parse_config_text(ss.str(), overrides);
  if (cfg.name.empty()) {
    const auto slash = path.find_last_of('/');
    std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
    cfg.name = base.substr(0, base.find('.'));
  }
  return cfg;
}

ConfigOverrides environment_overrides() {
  ConfigOverrides out;
  for (char** env = environ; *env != nullptr; ++env) {
    const std::string entry = *env;
    const auto eq = entry.find('=');
    const std::string name = entry.substr(0, eq);
    if (name.rfind("KSFEM_", 0) != 0) continue;
    const std::string rest = lower(name.substr(6));
    for (const std::string& section : kSections) {
      if (section != "atoms" && rest.rfind(section + "_", 0) == 0) {
        out[section + "." + rest.substr(section.size() + 1)] = entry.substr(eq + 1);
      }
    }
  }
  return out;
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 14695981039346656037ull;
  for (const unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace ksfem
