#pragma once

// TOML-subset configuration. Supported: [section] and [section.sub] headers,
// `key = value` with integers, floats, booleans, double-quoted strings and
// (nested) arrays of those; `#` comments. Everything parses into a JSON tree.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "almd/analysis.hpp"
#include "almd/bridge.hpp"
#include "almd/cgnet.hpp"
#include "almd/cgsim.hpp"
#include "almd/oracle.hpp"
#include "almd/selector.hpp"
#include "almd/trainer.hpp"

namespace almd {

class ConfigError : public Error {
 public:
  using Error::Error;
};

nlohmann::ordered_json parse_toml(const std::string& text);
nlohmann::ordered_json parse_toml_file(const std::filesystem::path& path);

struct RunSection {
  std::uint64_t seed = 1;
  int n_rounds = 4;
  std::string out_dir = "runs/default";
  std::string cache_dir = "cache";
  bool warm_start = true;
  MappingScheme mapping = MappingScheme::calpha;
  int n_residues = 10;
};

struct RecipeSection {  // oracle run from the minimized structure, mapped to CG
  long n_steps = 10000;
  long save_interval = 100;
};

struct ReferenceSection {
  long n_steps = 1000000;
  long save_interval = 100;
  std::uint64_t seed = 2024;  // independent of run.seed so every run shares one cached reference
};

struct SimSection {
  SimConfig sim = [] {
    SimConfig c;
    c.timestep = 0.005;
    return c;
  }();
  // n_steps above is the per-walker budget
  int n_walkers = 4;  // restarted from their start frame after an anomaly
};

struct LoopConfig {
  RunSection run;
  RecipeSection initial_data;
  ReferenceSection reference;
  OracleConfig oracle;  // per-query run; rng_seed is derived per query
  long oracle_equilibration_steps = 1000;  // unsaved steps from each backmapped seed first
  NetHyper network;
  bool prior = true;
  TrainConfig train;
  SimSection simulate;
  SelectionConfig select;
  BackmapConfig backmap;
  BenchmarkConfig bench{.contact_pairs = {{1, 6}, {4, 9}}};  // contacts absent from the initial basin
  int rmsd_hist_bins = 50;
  double rmsd_hist_max = 1.5;  // nm, common range for the RMSD-to-reference histograms

  void validate() const;
};

/// Every key must be known; missing keys keep the values above. Throws
/// ConfigError naming the offending key.
LoopConfig loop_config_from_json(const nlohmann::ordered_json& j);
LoopConfig load_loop_config(const std::filesystem::path& path);
/// Canonical form: every key, fixed order. config_hash hashes its dump.
nlohmann::ordered_json to_json(const LoopConfig& c);
std::string config_hash(const LoopConfig& c);
std::string to_toml(const LoopConfig& c);

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace almd
