#include "almd/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <algorithm>
#include <set>
#include <sstream>

namespace almd {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace {

class ValueParser {
 public:
  ValueParser(const std::string& s, int line) : s_(s), line_(line) {}

  ojson parse() {
    ojson v = value();
    skip_ws();
    if (pos_ != s_.size()) fail("unexpected trailing characters");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError("config line " + std::to_string(line_) + ": " + why);
  }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  ojson value() {
    skip_ws();
    if (pos_ >= s_.size()) fail("missing value");
    const char c = s_[pos_];
    if (c == '"') return string();
    if (c == '[') return array();
    if (s_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return true;
    }
    if (s_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return false;
    }
    return number();
  }
  ojson string() {
    std::string out;
    for (++pos_; pos_ < s_.size() && s_[pos_] != '"'; ++pos_) {
      if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) {
        const char e = s_[++pos_];
        out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
      } else {
        out += s_[pos_];
      }
    }
    if (pos_ >= s_.size()) fail("unterminated string");
    ++pos_;
    return out;
  }
  ojson array() {
    ojson a = ojson::array();
    ++pos_;
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == ']') {
      ++pos_;
      return a;
    }
    while (true) {
      a.push_back(value());
      skip_ws();
      if (pos_ >= s_.size()) fail("unterminated array");
      if (s_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
          ++pos_;
          return a;
        }
        continue;
      }
      if (s_[pos_] == ']') {
        ++pos_;
        return a;
      }
      fail("expected ',' or ']' in array");
    }
  }
  ojson number() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.' ||
                                s_[pos_] == '-' || s_[pos_] == '+' || s_[pos_] == '_'))
      ++pos_;
    std::string tok = s_.substr(start, pos_ - start);
    tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
    if (tok.empty()) fail("cannot parse value");
    const bool is_float = tok.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double d = std::stod(tok, &used);
        if (used == tok.size()) return d;
      } else {
        const long long v = std::stoll(tok, &used);
        if (used == tok.size()) return v;
      }
    } catch (const std::exception&) {
    }
    fail("cannot parse value '" + tok + "'");
  }

  const std::string& s_;
  int line_;
  std::size_t pos_ = 0;
};

std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

int bracket_balance(const std::string& s) {
  int depth = 0;
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (in_str) continue;
    depth += s[i] == '[' ? 1 : s[i] == ']' ? -1 : 0;
  }
  return depth;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
  return true;
}

}  // namespace

ojson parse_toml(const std::string& text) {
  ojson root = ojson::object();
  ojson* table = &root;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[' && line.find('=') == std::string::npos) {
      if (line.back() != ']' || line.size() < 3 || line[1] == '[')
        throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
      table = &root;
      std::stringstream path(line.substr(1, line.size() - 2));
      std::string part;
      while (std::getline(path, part, '.')) {
        part = trim(part);
        if (!valid_key(part)) throw ConfigError("config line " + std::to_string(line_no) + ": bad section name");
        ojson& next = (*table)[part];
        if (next.is_null()) next = ojson::object();
        if (!next.is_object())
          throw ConfigError("config line " + std::to_string(line_no) + ": '" + part + "' is not a table");
        table = &next;
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (!valid_key(key)) throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
    std::string value = trim(line.substr(eq + 1));
    const int start_line = line_no;
    while (bracket_balance(value) > 0 && std::getline(in, raw)) {
      ++line_no;
      value += " " + trim(strip_comment(raw));
    }
    if (table->contains(key))
      throw ConfigError("config line " + std::to_string(start_line) + ": duplicate key '" + key + "'");
    (*table)[key] = ValueParser(value, start_line).parse();
  }
  return root;
}

ojson parse_toml_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_toml(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Binding
// ---------------------------------------------------------------------------

namespace {

// One visitor drives reading, writing and TOML rendering so the key list
// exists exactly once.
struct Visitor {
  enum class Mode { read, write } mode;
  const ojson* in = nullptr;
  ojson out = ojson::object();
  std::set<std::string> seen;

  template <typename T>
  void field(const char* section, const char* key, T& value) {
    const std::string name = std::string(section) + "." + key;
    if (mode == Mode::write) {
      out[section][key] = encode(value);
      return;
    }
    seen.insert(name);
    if (!in->contains(section) || !(*in)[section].contains(key)) return;
    try {
      decode((*in)[section][key], value);
    } catch (const ConfigError& e) {
      throw ConfigError("config key " + name + ": " + e.what());
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key " + name + ": wrong value type");
    } catch (const Error& e) {
      throw ConfigError("config key " + name + ": " + e.what());
    }
  }

  static ojson encode(const MappingScheme& s) { return to_string(s); }
  static ojson encode(const TicaW1Mode& m) { return m == TicaW1Mode::marginal ? "marginal" : "sliced"; }
  template <typename T>
  static ojson encode(const T& v) { return v; }

  static void decode(const ojson& j, MappingScheme& s) { s = mapping_scheme_from_string(j.get<std::string>()); }
  static void decode(const ojson& j, TicaW1Mode& m) {
    const auto s = j.get<std::string>();
    if (s == "marginal") m = TicaW1Mode::marginal;
    else if (s == "sliced") m = TicaW1Mode::sliced;
    else throw ConfigError("expected \"marginal\" or \"sliced\"");
  }
  static void decode(const ojson& j, double& v) {
    if (!j.is_number()) throw ConfigError("expected a number");
    v = j.get<double>();
  }
  static void decode(const ojson& j, bool& v) {
    if (!j.is_boolean()) throw ConfigError("expected true or false");
    v = j.get<bool>();
  }
  static void decode(const ojson& j, std::string& v) {
    if (!j.is_string()) throw ConfigError("expected a string");
    v = j.get<std::string>();
  }
  template <typename I>
    requires std::is_integral_v<I>
  static void decode(const ojson& j, I& v) {
    if (!j.is_number_integer()) throw ConfigError("expected an integer");
    if (std::is_unsigned_v<I> && j.get<long long>() < 0) throw ConfigError("expected a non-negative integer");
    v = j.get<I>();
  }
  static void decode(const ojson& j, std::vector<std::pair<int, int>>& v) {
    if (!j.is_array()) throw ConfigError("expected an array of [i, j] pairs");
    v.clear();
    for (const auto& e : j) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer())
        throw ConfigError("expected an array of [i, j] pairs");
      v.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
  }
};

void visit(Visitor& v, LoopConfig& c) {
  v.field("run", "seed", c.run.seed);
  v.field("run", "n_rounds", c.run.n_rounds);
  v.field("run", "out_dir", c.run.out_dir);
  v.field("run", "cache_dir", c.run.cache_dir);
  v.field("run", "warm_start", c.run.warm_start);
  v.field("run", "mapping", c.run.mapping);
  v.field("run", "n_residues", c.run.n_residues);

  v.field("initial_data", "n_steps", c.initial_data.n_steps);
  v.field("initial_data", "save_interval", c.initial_data.save_interval);
  v.field("reference", "n_steps", c.reference.n_steps);
  v.field("reference", "save_interval", c.reference.save_interval);
  v.field("reference", "seed", c.reference.seed);

  v.field("oracle", "temperature", c.oracle.temperature);
  v.field("oracle", "friction", c.oracle.friction);
  v.field("oracle", "timestep", c.oracle.timestep);
  v.field("oracle", "n_steps", c.oracle.n_steps);
  v.field("oracle", "save_interval", c.oracle.save_interval);
  v.field("oracle", "equilibration_steps", c.oracle_equilibration_steps);

  v.field("network", "n_blocks", c.network.n_blocks);
  v.field("network", "width", c.network.width);
  v.field("network", "n_rbf", c.network.n_rbf);
  v.field("network", "r_cut", c.network.r_cut);
  v.field("network", "rbf_gamma", c.network.rbf_gamma);
  v.field("network", "energy_scale", c.network.energy_scale);
  v.field("network", "prior", c.prior);

  v.field("train", "learning_rate", c.train.learning_rate);
  v.field("train", "batch_size", c.train.batch_size);
  v.field("train", "epochs", c.train.epochs);
  v.field("train", "beta1", c.train.beta1);
  v.field("train", "beta2", c.train.beta2);
  v.field("train", "epsilon", c.train.epsilon);
  v.field("train", "weight_decay", c.train.weight_decay);
  v.field("train", "val_fraction", c.train.val_fraction);

  v.field("simulate", "temperature", c.simulate.sim.temperature);
  v.field("simulate", "friction", c.simulate.sim.friction);
  v.field("simulate", "timestep", c.simulate.sim.timestep);
  v.field("simulate", "n_steps", c.simulate.sim.n_steps);
  v.field("simulate", "save_interval", c.simulate.sim.save_interval);
  v.field("simulate", "n_walkers", c.simulate.n_walkers);
  v.field("simulate", "max_bond_stretch_factor", c.simulate.sim.thresholds.max_bond_stretch_factor);
  v.field("simulate", "min_pair_distance", c.simulate.sim.thresholds.min_pair_distance);
  v.field("simulate", "max_displacement", c.simulate.sim.thresholds.max_displacement);

  v.field("select", "k", c.select.k);
  v.field("select", "rmsd_cutoff", c.select.rmsd_cutoff);
  v.field("select", "rmsd_floor", c.select.rmsd_floor);
  v.field("select", "training_subsample", c.select.training_subsample);
  v.field("select", "histogram_bins", c.select.histogram_bins);

  v.field("backmap", "relax", c.backmap.relax);
  v.field("backmap", "rotamer_scan", c.backmap.rotamer_scan);
  v.field("backmap", "restraint_k", c.backmap.restraint_k);
  v.field("backmap", "max_iters", c.backmap.max_iters);
  v.field("backmap", "force_tol", c.backmap.force_tol);
  v.field("backmap", "max_spacing_factor", c.backmap.max_spacing_factor);
  v.field("backmap", "round_trip_tol", c.backmap.round_trip_tol);
  v.field("backmap", "max_escalations", c.backmap.max_escalations);

  v.field("bench", "tica_lag", c.bench.tica_lag);
  v.field("bench", "tica_dims", c.bench.tica_dims);
  v.field("bench", "tica_regularization", c.bench.tica_regularization);
  v.field("bench", "w1_mode", c.bench.w1_mode);
  v.field("bench", "sliced_directions", c.bench.sliced_directions);
  v.field("bench", "contact_pairs", c.bench.contact_pairs);
  v.field("bench", "r_contact", c.bench.r_contact);
  v.field("bench", "kde_points", c.bench.kde_points);
  v.field("bench", "histogram_bins", c.bench.histogram_bins);
  v.field("bench", "rmsd_hist_bins", c.rmsd_hist_bins);
  v.field("bench", "rmsd_hist_max", c.rmsd_hist_max);
}

}  // namespace

void LoopConfig::validate() const {
  auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("config [") + section + "]: " + e.what());
    }
  };
  if (run.n_rounds < 1) throw ConfigError("config [run]: n_rounds must be at least 1");
  if (run.n_residues < 4) throw ConfigError("config [run]: n_residues must be at least 4");
  if (initial_data.n_steps < 1 || initial_data.save_interval < 1 || initial_data.save_interval > initial_data.n_steps)
    throw ConfigError("config [initial_data]: need 1 <= save_interval <= n_steps");
  if (reference.n_steps < 1 || reference.save_interval < 1 || reference.save_interval > reference.n_steps)
    throw ConfigError("config [reference]: need 1 <= save_interval <= n_steps");
  check("oracle", [&] { oracle.validate(); });
  if (oracle_equilibration_steps < 0) throw ConfigError("config [oracle]: equilibration_steps must be >= 0");
  check("network", [&] {
    NetHyper h = network;
    h.n_types = run.n_residues;
    init_potential(h, 0).validate();
  });
  check("train", [&] { train.validate(); });
  check("simulate", [&] { simulate.sim.validate(); });
  if (simulate.n_walkers < 1) throw ConfigError("config [simulate]: n_walkers must be at least 1");
  check("select", [&] { select.validate(); });
  if (backmap.restraint_k <= 0.0 || backmap.max_iters < 0 || backmap.max_escalations < 0)
    throw ConfigError("config [backmap]: invalid relaxation settings");
  if (bench.tica_lag < 1 || bench.tica_dims < 1) throw ConfigError("config [bench]: tica_lag and tica_dims must be >= 1");
  for (auto [i, j] : bench.contact_pairs)
    if (i < 0 || j < 0 || i >= run.n_residues || j >= run.n_residues || i == j)
      throw ConfigError("config [bench]: contact pair out of range");
  if (!(bench.r_contact > 0.0) || rmsd_hist_bins < 1 || !(rmsd_hist_max > 0.0))
    throw ConfigError("config [bench]: r_contact, rmsd_hist_bins and rmsd_hist_max must be positive");
}

LoopConfig loop_config_from_json(const ojson& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be a table");
  LoopConfig c;
  Visitor v{Visitor::Mode::read, &j, {}, {}};
  visit(v, c);
  for (const auto& [section, table] : j.items()) {
    if (!table.is_object()) throw ConfigError("config: '" + section + "' must be a section");
    for (const auto& [key, _] : table.items())
      if (!v.seen.count(section + "." + key)) throw ConfigError("config: unknown key " + section + "." + key);
  }
  c.validate();
  return c;
}

LoopConfig load_loop_config(const std::filesystem::path& path) {
  return loop_config_from_json(parse_toml_file(path));
}

ojson to_json(const LoopConfig& c) {
  LoopConfig copy = c;
  Visitor v{Visitor::Mode::write, nullptr, ojson::object(), {}};
  visit(v, copy);
  return v.out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const LoopConfig& c) { return fnv1a_hex(to_json(c).dump()); }

std::string to_toml(const LoopConfig& c) {
  std::ostringstream os;
  bool first = true;
  const ojson j = to_json(c);
  for (const auto& [section, table] : j.items()) {
    os << (first ? "" : "\n") << '[' << section << "]\n";
    first = false;
    for (const auto& [key, value] : table.items()) {
      std::string text = value.dump();
      if (value.is_number_float() && text.find_first_of(".eE") == std::string::npos) text += ".0";
      os << key << " = " << text << '\n';
    }
  }
  return os.str();
}

}  // namespace almd
