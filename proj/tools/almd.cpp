// almd: command-line front end for the active-learning pipeline.
//
// Exit codes: 0 success, 2 configuration or usage error, 3 stage failure,
// 4 nothing to select.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "almd/orchestrator.hpp"
#include "almd/rng.hpp"

namespace fs = std::filesystem;
using namespace almd;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitNothing = 4;

struct NothingToSelect {};

void write_json(const fs::path& path, const ojson& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

ojson read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path.string());
  return ojson::parse(is);
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

std::string flags_path(const std::string& traj) { return traj + ".json"; }

std::vector<bool> read_flags(const fs::path& path, std::size_t n) {
  std::vector<bool> flags(n, false);
  for (std::size_t i : read_json(path).at("anomalous_frames").get<std::vector<std::size_t>>()) {
    if (i >= n) throw Error("flags file " + path.string() + " names frame " + std::to_string(i) + " of " + std::to_string(n));
    flags[i] = true;
  }
  return flags;
}

struct Common {
  std::string config;
  LoopConfig cfg;
  void load() {
    if (!config.empty()) cfg = load_loop_config(config);
    cfg.validate();
  }
};

// --- verbs ---------------------------------------------------------------

int cmd_gen_data(Common& c, const std::string& out, long steps, long interval, long long seed) {
  c.load();
  if (steps > 0) c.cfg.initial_data.n_steps = steps;
  if (interval > 0) c.cfg.initial_data.save_interval = interval;
  if (seed >= 0) c.cfg.run.seed = static_cast<std::uint64_t>(seed);
  c.cfg.validate();
  const ToySetup s = make_toy_setup(c.cfg);
  std::vector<AAFrame> aa;
  const Dataset d = make_initial_dataset(c.cfg, s, &aa);
  save_dataset(out, d, config_hash(c.cfg));
  write_trajectory<AaSpace>(fs::path(out) / "oracle_aa.trj", aa);
  std::printf("%zu frames -> %s\n", d.size(), out.c_str());
  return kExitOk;
}

int cmd_train(Common& c, const std::string& data, const std::string& out, const std::string& init, int epochs,
              long long seed, const std::string& history) {
  c.load();
  if (epochs > 0) c.cfg.train.epochs = epochs;
  const Dataset d = load_dataset(data);
  if (d.empty()) throw Error("dataset " + data + " is empty");
  PotentialParams p;
  if (!init.empty()) {
    p = load_checkpoint(init);
  } else {
    NetHyper h = c.cfg.network;
    h.n_types = d.n_beads();
    const std::uint64_t s = seed >= 0 ? static_cast<std::uint64_t>(seed) : c.cfg.run.seed;
    p = init_potential(h, derive_seed(s, {3}));
    p.prior = fit_prior(d.frames(), c.cfg.oracle.temperature);
    p.prior.enabled = c.cfg.prior;
  }
  TrainConfig tc = c.cfg.train;
  tc.rng_seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : derive_seed(c.cfg.run.seed, {4, 0});
  const auto types = default_types(d.n_beads());
  const TrainResult r = train(p, d.frames(), types, tc, [](const EpochRecord& e) {
    std::fprintf(stderr, "epoch %d train %.6g val %.6g\n", e.epoch, e.train_loss, e.val_loss);
  });
  ensure_parent(out);
  save_checkpoint(out, r.params);
  if (!history.empty()) {
    Curve h{"train_history", {"epoch", "train_loss", "val_loss"}, {}};
    for (const auto& e : r.history) h.rows.push_back({static_cast<double>(e.epoch), e.train_loss, e.val_loss});
    ensure_parent(history);
    write_csv(history, h);
  }
  std::printf("best epoch %d -> %s\n", r.best_epoch, out.c_str());
  return kExitOk;
}

int cmd_simulate(Common& c, const std::string& model, const std::string& init, std::size_t frame, long steps,
                 long interval, long long seed, const std::string& out) {
  c.load();
  const PotentialParams p = load_checkpoint(model);
  const auto starts = read_trajectory<CgSpace>(init);
  if (frame >= starts.size())
    throw Error("--frame " + std::to_string(frame) + " out of range for " + init + " (" + std::to_string(starts.size()) + " frames)");
  const ToySetup s = make_toy_setup(c.cfg);
  if (starts[frame].n_sites() != static_cast<int>(s.cg.masses.size()))
    throw Error("initial frame has " + std::to_string(starts[frame].n_sites()) + " beads, the configured system " +
                std::to_string(s.cg.masses.size()));
  SimConfig sc = c.cfg.simulate.sim;
  if (steps > 0) sc.n_steps = steps;
  if (interval > 0) sc.save_interval = interval;
  sc.rng_seed = seed >= 0 ? static_cast<std::uint64_t>(seed) : c.cfg.run.seed;
  const SimResult r = simulate_cg(p, s.cg, starts[frame].coords, sc);
  ensure_parent(out);
  write_trajectory<CgSpace>(out, r.frames);
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < r.anomalous.size(); ++i)
    if (r.anomalous[i]) flagged.push_back(i);
  write_json(flags_path(out), {{"status", to_string(r.status)},
                               {"stop_step", r.stop_step},
                               {"message", r.message},
                               {"n_frames", r.frames.size()},
                               {"anomalous_frames", flagged},
                               {"mean_kinetic_temperature", r.mean_kinetic_temperature}});
  std::printf("%s after %ld steps, %zu frames -> %s\n", to_string(r.status).c_str(),
              r.status == SimStatus::completed ? sc.n_steps : r.stop_step, r.frames.size(), out.c_str());
  return kExitOk;
}

int cmd_select(Common& c, const std::string& traj_path, const std::string& data, int k, double cutoff,
               const std::string& report, const std::string& flags, const std::string& out) {
  c.load();
  SelectionConfig sc = c.cfg.select;
  if (k > 0) sc.k = k;
  if (!std::isnan(cutoff)) sc.rmsd_cutoff = cutoff;
  sc.validate();
  const auto traj = read_trajectory<CgSpace>(traj_path);
  std::vector<bool> anomalous;
  const std::string fp = flags.empty() ? flags_path(traj_path) : flags;
  if (!flags.empty() || fs::exists(fp)) anomalous = read_flags(fp, traj.size());
  const Dataset d = load_dataset(data);
  const SelectionReport r = select_frames(traj, anomalous, d.frames(), sc);
  ojson sel = ojson::array();
  for (std::size_t i = 0; i < r.selected.size(); ++i)
    sel.push_back({{"frame", r.selected[i]}, {"min_rmsd", r.selected_rmsd[i]}});
  ojson min_rmsd = ojson::array();
  for (double x : r.min_rmsd) min_rmsd.push_back(std::isfinite(x) ? ojson(x) : ojson(nullptr));
  write_json(report, {{"k", sc.k},
                      {"rmsd_cutoff", sc.rmsd_cutoff},
                      {"rmsd_floor", sc.rmsd_floor},
                      {"n_frames", traj.size()},
                      {"n_candidates", r.n_candidates},
                      {"n_anomalous", r.n_anomalous},
                      {"n_cutoff_excluded", r.n_cutoff_excluded},
                      {"nothing_to_select", r.nothing_to_select},
                      {"selected", sel},
                      {"min_rmsd", min_rmsd},
                      {"histogram", {{"edges", r.histogram.edges}, {"counts", r.histogram.counts}}}});
  if (!out.empty()) {
    std::vector<CGFrame> chosen;
    for (std::size_t i : r.selected) chosen.push_back(traj[i]);
    ensure_parent(out);
    write_trajectory<CgSpace>(out, chosen);
  }
  std::printf("%zu of %zu candidates selected -> %s\n", r.selected.size(), r.n_candidates, report.c_str());
  if (r.nothing_to_select) throw NothingToSelect{};
  return kExitOk;
}

int cmd_backmap(Common& c, const std::string& in, const std::string& out, bool no_relax) {
  c.load();
  BackmapConfig bc = c.cfg.backmap;
  if (no_relax) bc.relax = false;
  const auto cg = read_trajectory<CgSpace>(in);
  const Topology top = build_toy_topology(c.cfg.run.n_residues);
  std::vector<AAFrame> aa;
  for (std::size_t i = 0; i < cg.size(); ++i) {
    BackmapResult r = backmap(cg[i], top, bc);
    r.frame.time = cg[i].time;
    aa.push_back(std::move(r.frame));
  }
  ensure_parent(out);
  write_trajectory<AaSpace>(out, aa);
  std::printf("%zu frames -> %s\n", aa.size(), out.c_str());
  return kExitOk;
}

int cmd_oracle(Common& c, const std::string& seeds_path, long steps, long interval, long equil, long long seed,
               const std::string& out, const std::string& cg_out) {
  c.load();
  if (equil < 0) equil = c.cfg.oracle_equilibration_steps;
  OracleConfig oc = c.cfg.oracle;
  if (steps > 0) oc.n_steps = steps;
  if (interval > 0) oc.save_interval = interval;
  oc.validate();
  const std::uint64_t base = seed >= 0 ? static_cast<std::uint64_t>(seed) : c.cfg.run.seed;
  const auto seeds = read_trajectory<AaSpace>(seeds_path);
  const Topology top = build_toy_topology(c.cfg.run.n_residues);
  std::vector<AAFrame> all;
  for (std::size_t q = 0; q < seeds.size(); ++q) {
    if (seeds[q].n_sites() != top.n_atoms())
      throw Error("seed frame " + std::to_string(q) + " has " + std::to_string(seeds[q].n_sites()) + " atoms, topology " +
                  std::to_string(top.n_atoms()));
    OracleConfig run = oc;
    run.rng_seed = derive_seed(base, {q});
    for (auto& f : oracle_query(top, seeds[q].coords, run, equil)) all.push_back(std::move(f));
  }
  ensure_parent(out);
  write_trajectory<AaSpace>(out, all);
  if (!cg_out.empty()) {
    const MappingOperator op = build_mapping(top, c.cfg.run.mapping);
    std::vector<CGFrame> cg;
    for (const auto& f : all) cg.push_back(map_frame(op, f));
    ensure_parent(cg_out);
    write_trajectory<CgSpace>(cg_out, cg);
  }
  std::printf("%zu queries, %zu frames -> %s\n", seeds.size(), all.size(), out.c_str());
  return kExitOk;
}

int cmd_bench(Common& c, const std::string& model_path, const std::string& ref_path, const std::string& out,
              const std::string& plots, const std::string& flags) {
  c.load();
  auto model = read_trajectory<CgSpace>(model_path);
  const std::string fp = flags.empty() ? flags_path(model_path) : flags;
  if (!flags.empty() || fs::exists(fp)) {
    const auto anomalous = read_flags(fp, model.size());
    std::vector<CGFrame> kept;
    for (std::size_t i = 0; i < model.size(); ++i)
      if (!anomalous[i]) kept.push_back(std::move(model[i]));
    model = std::move(kept);
  }
  const auto ref = read_trajectory<CgSpace>(ref_path);
  const BenchmarkReport r = benchmark(model, ref, c.cfg.bench);
  ensure_parent(out);
  {
    std::ofstream os(out);
    if (!os) throw Error("cannot write " + out);
    os << to_json(r) << "\n";
  }
  if (!plots.empty()) write_plot_csvs(plots, r.plots);
  std::printf("TICA W1 %.6g, reaction coordinate W1 %.6g -> %s\n", r.w1_tica_kde, r.w1_reaction_coordinate, out.c_str());
  return kExitOk;
}

int cmd_loop(Common& c, bool resume, const std::string& out_dir, long long seed, int rounds) {
  c.load();
  if (!out_dir.empty()) c.cfg.run.out_dir = out_dir;
  if (seed >= 0) c.cfg.run.seed = static_cast<std::uint64_t>(seed);
  if (rounds >= 0) c.cfg.run.n_rounds = rounds;
  c.cfg.validate();
  LoopOptions opt;
  opt.resume = resume;
  opt.log = [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); };
  const LoopOutcome r = run_active_learning(c.cfg, opt);
  std::printf("%s -> %s\n", to_string(r.status).c_str(), (fs::path(c.cfg.run.out_dir) / "manifest.json").c_str());
  return r.status == LoopStatus::nothing_to_select ? kExitNothing : kExitOk;
}

std::string fmt(const ojson& j, int prec = 4) {
  if (!j.is_number()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*g", prec, j.get<double>());
  return buf;
}

// Text rendering of a CSV histogram (bin_lo, bin_hi, count) as bars.
void render_histogram(std::ostream& os, const fs::path& csv) {
  std::ifstream is(csv);
  std::string line;
  std::getline(is, line);
  std::vector<std::array<double, 3>> rows;
  while (std::getline(is, line)) {
    std::array<double, 3> r{};
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &r[0], &r[1], &r[2]) == 3) rows.push_back(r);
  }
  double peak = 0.0;
  for (const auto& r : rows) peak = std::max(peak, r[2]);
  if (peak == 0.0) {
    os << "    (empty)\n";
    return;
  }
  std::size_t first = rows.size(), last = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i][2] > 0) first = std::min(first, i), last = i;
  for (std::size_t i = first; i <= last; ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "    %6.3f %7.0f ", rows[i][0], rows[i][2]);
    os << buf << std::string(static_cast<std::size_t>(std::lround(40.0 * rows[i][2] / peak)), '#') << "\n";
  }
}

int cmd_report(const std::string& run_dir, const std::string& out) {
  const fs::path dir(run_dir);
  const ojson m = read_json(dir / "manifest.json");
  std::ostringstream os;
  os << "# Run " << dir.string() << "\n\n";
  os << "status: " << m.value("status", "?") << "\n";
  os << "config hash: " << m.value("config_hash", "?") << "\n";
  if (m.contains("toy_constants")) os << "toy constants: " << m["toy_constants"].value("version", "?") << "\n";
  if (m.contains("reference"))
    os << "reference: " << m["reference"].value("n_frames", 0) << " frames (" << m["reference"].value("hash", "") << ")\n";
  if (m.contains("failure"))
    os << "failure: round " << m["failure"]["round"] << ", stage " << m["failure"]["stage"].get<std::string>() << ": "
       << m["failure"]["message"].get<std::string>() << "\n";
  os << "\n| round | data before | data after | selected | queries | anomalies/1e5 | W1 TICA | W1 RC | W1 bond | W1 angle | W1 dihedral | RMSD support |\n";
  os << "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : m["rounds"]) {
    const ojson w1 = r.contains("benchmark") ? r["benchmark"].value("w1", ojson()) : ojson();
    auto w = [&](const char* key) { return w1.is_object() ? fmt(w1.value(key, ojson())) : std::string("-"); };
    const std::size_t nsel = r.contains("selection") ? r["selection"]["selected"].size() : 0;
    os << "| " << r["round"] << " | " << r["dataset_size_before"] << " | " << r["dataset_size_after"] << " | " << nsel
       << " | " << r.value("oracle_queries", 0) << " | "
       << (r.contains("simulation") ? fmt(r["simulation"]["anomaly_rate_per_1e5_steps"]) : "-") << " | " << w("tica_kde")
       << " | " << w("reaction_coordinate") << " | " << w("bond_length") << " | " << w("bond_angle") << " | "
       << w("dihedral") << " | " << (r.contains("rmsd_to_reference") ? fmt(r["rmsd_to_reference"]["support_width"]) : "-")
       << " |\n";
  }
  for (const auto& r : m["rounds"]) {
    char name[16];
    std::snprintf(name, sizeof name, "round_%02d", r["round"].get<int>());
    const fs::path rd = dir / name;
    if (!fs::exists(rd)) continue;
    os << "\n## " << name << "\n";
    if (fs::exists(rd / "rmsd_to_reference.csv")) {
      os << "\nRMSD to reference (nm):\n";
      render_histogram(os, rd / "rmsd_to_reference.csv");
    }
    if (fs::exists(rd / "plots")) {
      std::vector<fs::path> csvs;
      for (const auto& e : fs::directory_iterator(rd / "plots"))
        if (e.path().extension() == ".csv") csvs.push_back(e.path());
      std::sort(csvs.begin(), csvs.end());
      os << "\nplots:\n";
      for (const auto& p : csvs) {
        std::ifstream is(p);
        std::string header, line;
        std::getline(is, header);
        std::size_t rows = 0;
        while (std::getline(is, line)) rows += line.empty() ? 0 : 1;
        os << "  " << p.filename().string() << "  [" << header << "] " << rows << " rows\n";
      }
    }
  }
  if (out.empty()) {
    std::cout << os.str();
  } else {
    ensure_parent(out);
    std::ofstream f(out);
    if (!f) throw Error("cannot write " + out);
    f << os.str();
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active-learning coarse-grained MD pipeline on a toy peptide chain"};
  app.require_subcommand(1);
  Common common;
  app.add_option("-c,--config", common.config, "Configuration file (TOML); built-in defaults otherwise")
      ->check(CLI::ExistingFile);

  std::string out, data, init, in, model, traj, report_path, flags, ref, plots, history, seeds, cg_out, run_dir;
  long steps = 0, interval = 0, equil = -1;
  long long seed = -1;
  int epochs = 0, k = 0, rounds = -1;
  std::size_t frame = 0;
  double cutoff = std::nan("");
  bool no_relax = false, resume = false;

  auto* gen = app.add_subcommand("gen-data", "Initial dataset: short oracle run from the minimized structure");
  gen->add_option("--out", out, "Dataset directory")->required();
  gen->add_option("--steps", steps, "Oracle steps");
  gen->add_option("--save-interval", interval, "Steps between saved frames");
  gen->add_option("--seed", seed, "Run seed");

  auto* tr = app.add_subcommand("train", "Force-matching training");
  tr->add_option("--data", data, "Dataset directory")->required();
  tr->add_option("--out", out, "Checkpoint to write")->required();
  tr->add_option("--init", init, "Warm-start checkpoint");
  tr->add_option("--epochs", epochs, "Epochs");
  tr->add_option("--seed", seed, "Shuffle and initialization seed");
  tr->add_option("--history", history, "Loss history CSV");

  auto* sim = app.add_subcommand("simulate", "CG Langevin simulation with anomaly detection");
  sim->add_option("--model", model, "Checkpoint")->required();
  sim->add_option("--init", init, "Trajectory holding the initial frame")->required();
  sim->add_option("--frame", frame, "Frame index in --init");
  sim->add_option("--steps", steps, "Steps");
  sim->add_option("--save-interval", interval, "Steps between saved frames");
  sim->add_option("--seed", seed, "Seed");
  sim->add_option("--out", out, "Output trajectory; flags go to <out>.json")->required();

  auto* sel = app.add_subcommand("select", "Pick the frames farthest from the training data");
  sel->add_option("--traj", traj, "Candidate trajectory")->required();
  sel->add_option("--data", data, "Training dataset directory")->required();
  sel->add_option("-k", k, "Frames to select");
  sel->add_option("--cutoff", cutoff, "Largest admissible min-RMSD (nm)");
  sel->add_option("--report", report_path, "Report JSON")->required();
  sel->add_option("--flags", flags, "Anomaly flags JSON (default <traj>.json if present)");
  sel->add_option("--out", out, "Selected frames trajectory");

  auto* bm = app.add_subcommand("backmap", "CG -> AA reconstruction");
  bm->add_option("--in", in, "CG trajectory")->required();
  bm->add_option("--out", out, "AA trajectory")->required();
  bm->add_flag("--no-relax", no_relax, "Skip the restrained minimization");

  auto* orc = app.add_subcommand("oracle", "AA Langevin runs from seed frames");
  orc->add_option("--seed-frames", seeds, "AA trajectory of start frames")->required();
  orc->add_option("--steps", steps, "Steps per query");
  orc->add_option("--save-interval", interval, "Steps between saved frames");
  orc->add_option("--equilibration", equil, "Unsaved steps before production (default from config)");
  orc->add_option("--seed", seed, "Seed");
  orc->add_option("--out", out, "AA trajectory with forces")->required();
  orc->add_option("--cg-out", cg_out, "Also write the mapped CG frames with projected forces");

  auto* be = app.add_subcommand("bench", "Compare a model trajectory with a reference");
  be->add_option("--model-traj", traj, "Model trajectory")->required();
  be->add_option("--ref-traj", ref, "Reference trajectory")->required();
  be->add_option("--out", out, "Report JSON")->required();
  be->add_option("--plots", plots, "Directory for plot CSVs");
  be->add_option("--flags", flags, "Anomaly flags JSON (default <model-traj>.json if present)");

  auto* lp = app.add_subcommand("loop", "Full active-learning loop");
  lp->add_flag("--resume", resume, "Continue after the last completed round");
  lp->add_option("--out", out, "Output directory (overrides run.out_dir)");
  lp->add_option("--seed", seed, "Run seed (overrides run.seed)");
  lp->add_option("--rounds", rounds, "Active-learning rounds (overrides run.n_rounds)");

  auto* rp = app.add_subcommand("report", "Render a run's manifest and plot CSVs as text");
  rp->add_option("--run", run_dir, "Run directory")->required();
  rp->add_option("--out", out, "Write to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(common, out, steps, interval, seed);
    if (*tr) return cmd_train(common, data, out, init, epochs, seed, history);
    if (*sim) return cmd_simulate(common, model, init, frame, steps, interval, seed, out);
    if (*sel) return cmd_select(common, traj, data, k, cutoff, report_path, flags, out);
    if (*bm) return cmd_backmap(common, in, out, no_relax);
    if (*orc) return cmd_oracle(common, seeds, steps, interval, equil, seed, out, cg_out);
    if (*be) return cmd_bench(common, traj, ref, out, plots, flags);
    if (*lp) return cmd_loop(common, resume, out, seed, rounds);
    if (*rp) return cmd_report(run_dir, out);
  } catch (const NothingToSelect&) {
    std::fprintf(stderr, "nothing to select\n");
    return kExitNothing;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitStage;
  }
  return kExitConfig;
}
