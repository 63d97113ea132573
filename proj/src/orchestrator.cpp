#include "almd/orchestrator.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "almd/parallel.hpp"
#include "almd/rng.hpp"
#include "almd/toy_constants.hpp"

namespace almd {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Purpose tags for derive_seed.
enum Purpose : std::uint64_t {
  kInitialData = 1,
  kNetworkInit = 3,
  kTrain = 4,
  kSimulate = 5,
  kSelect = 6,
  kOracle = 7,
};

class StageError : public Error {
 public:
  using Error::Error;
};

std::string round_dir_name(int r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "round_%02d", r);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw Error("cannot write " + path.string());
    os << text;
  }
  fs::rename(tmp, path);
}

ojson histogram_json(const Histogram& h) {
  return {{"edges", h.edges}, {"counts", h.counts}, {"underflow", h.underflow}, {"overflow", h.overflow}};
}

Curve histogram_curve(const std::string& name, const Histogram& h) {
  Curve c{name, {"bin_lo", "bin_hi", "count"}, {}};
  for (std::size_t k = 0; k < h.counts.size(); ++k)
    c.rows.push_back({h.edges[k], h.edges[k + 1], static_cast<double>(h.counts[k])});
  return c;
}

ojson number_or_null(double x) { return std::isfinite(x) ? ojson(x) : ojson(nullptr); }

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = seed;
  for (std::uint64_t p : path) s = substream_seed(s, p);
  return s;
}

ToySetup make_toy_setup(const LoopConfig& cfg) {
  ToySetup s;
  s.top = build_toy_topology(cfg.run.n_residues);
  s.op = build_mapping(s.top, cfg.run.mapping);
  s.minimized = minimize(s.top, toy_initial_coordinates(s.top), 5000, 1e-3).coords;
  s.cg = make_cg_topology(s.top, s.op, s.minimized);
  return s;
}

ojson toy_constants_json() {
  using namespace toy;
  return {{"version", kToyConstantsVersion},
          {"k_boltzmann", almd::kBoltzmann},
          {"reference_temperature", kReferenceTemperature},
          {"masses", {kMassCA, kMassCB, kMassCG}},
          {"bonds", {{"ca_ca", kBondCACA}, {"ca_cb", kBondCACB}, {"cb_cg", kBondCBCG}, {"k", kBondK}}},
          {"angles",
           {{"ca_ca_ca", kAngleBackbone}, {"ca_ca_ca_k", kAngleBackboneK}, {"cb_ca_ca", kAngleSide},
            {"cb_ca_ca_k", kAngleSideK}, {"ca_cb_cg", kAngleCACBCG}, {"ca_cb_cg_k", kAngleCACBCGK}}},
          {"double_well", {{"k_w", kDoubleWellK}, {"c", kDoubleWellC}}},
          {"lj",
           {{"ca", {kSigmaCA, kEpsilonCA}}, {"cb", {kSigmaCB, kEpsilonCB}}, {"cg", {kSigmaCG, kEpsilonCG}}}}};
}

Dataset make_initial_dataset(const LoopConfig& cfg, const ToySetup& s, std::vector<AAFrame>* aa_out) {
  OracleConfig oc = cfg.oracle;
  oc.n_steps = cfg.initial_data.n_steps;
  oc.save_interval = cfg.initial_data.save_interval;
  oc.rng_seed = derive_seed(cfg.run.seed, {kInitialData});
  const std::vector<AAFrame> aa = run_langevin(s.top, s.minimized, oc);
  Dataset d;
  for (const auto& f : aa) d.append(map_frame(s.op, f), {0, FrameSource::initial});
  if (aa_out) *aa_out = aa;
  return d;
}

std::vector<AAFrame> oracle_query(const Topology& top, const Points3d& seed, const OracleConfig& cfg,
                                  long equilibration_steps) {
  if (equilibration_steps <= 0) return run_langevin(top, seed, cfg);
  OracleConfig eq = cfg;
  eq.n_steps = equilibration_steps;
  eq.save_interval = equilibration_steps;
  eq.rng_seed = substream_seed(cfg.rng_seed, 1);
  Points3d x, v;
  run_langevin(top, seed, eq, std::nullopt, [&](long, const Points3d& xs, const Points3d& vs, double, const BaoabIntegrator&) {
    x = xs;
    v = vs;
  });
  return run_langevin(top, x, cfg, v);
}

std::string reference_hash(const LoopConfig& cfg) {
  const ojson key = {{"toy", toy_constants_json()},
                     {"n_residues", cfg.run.n_residues},
                     {"mapping", to_string(cfg.run.mapping)},
                     {"temperature", cfg.oracle.temperature},
                     {"friction", cfg.oracle.friction},
                     {"timestep", cfg.oracle.timestep},
                     {"n_steps", cfg.reference.n_steps},
                     {"save_interval", cfg.reference.save_interval},
                     {"seed", cfg.reference.seed}};
  return fnv1a_hex(key.dump());
}

std::vector<CGFrame> reference_trajectory(const LoopConfig& cfg, const ToySetup& s, bool* from_cache) {
  const fs::path path = fs::path(cfg.run.cache_dir) / ("reference-" + reference_hash(cfg) + ".trj");
  if (fs::exists(path)) {
    if (from_cache) *from_cache = true;
    return read_trajectory<CgSpace>(path);
  }
  OracleConfig oc = cfg.oracle;
  oc.n_steps = cfg.reference.n_steps;
  oc.save_interval = cfg.reference.save_interval;
  oc.rng_seed = cfg.reference.seed;
  std::vector<CGFrame> out;
  for (const auto& f : run_langevin(s.top, s.minimized, oc)) out.push_back(map_frame(s.op, f));
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  write_trajectory<CgSpace>(tmp, out);
  fs::rename(tmp, path);
  if (from_cache) *from_cache = false;
  return out;
}

std::vector<WalkerRun> run_walkers(const PotentialParams& p, const CgTopology& cg, std::span<const Points3d> starts,
                                   const SimConfig& sim, std::uint64_t seed) {
  std::vector<WalkerRun> runs(starts.size());
  parallel_for(starts.size(), [&](std::size_t w) {
    WalkerRun& run = runs[w];
    double temp_steps = 0.0;
    while (run.steps < sim.n_steps) {
      SimConfig seg = sim;
      seg.n_steps = sim.n_steps - run.steps;
      seg.rng_seed = derive_seed(seed, {w, static_cast<std::uint64_t>(run.segments)});
      const SimResult r = simulate_cg(p, cg, starts[w], seg);
      ++run.segments;
      const double t0 = static_cast<double>(run.steps) * sim.timestep;
      for (std::size_t i = 0; i < r.frames.size(); ++i) {
        CGFrame f = r.frames[i];
        f.time += t0;
        run.frames.push_back(std::move(f));
        run.anomalous.push_back(r.anomalous[i]);
      }
      const long taken = r.status == SimStatus::completed ? seg.n_steps : r.stop_step;
      temp_steps += r.mean_kinetic_temperature * static_cast<double>(taken);
      if (r.status == SimStatus::exploded) ++run.exploded;
      if (r.status == SimStatus::imploded) ++run.imploded;
      if (taken == 0) {
        run.steps = sim.n_steps;  // the start frame itself is anomalous; nothing more to learn
        break;
      }
      run.steps += taken;
    }
    if (run.steps > 0) run.mean_kinetic_temperature = temp_steps / static_cast<double>(run.steps);
  });
  return runs;
}

std::string to_string(LoopStatus s) {
  switch (s) {
    case LoopStatus::completed: return "completed";
    case LoopStatus::nothing_to_select: return "nothing_to_select";
    case LoopStatus::failed: return "failed";
  }
  return "unknown";
}

ojson strip_timings(ojson m) {
  m.erase("timings");
  if (m.contains("rounds"))
    for (auto& r : m["rounds"]) r.erase("timings");
  return m;
}

namespace {

struct RoundState {
  PotentialParams params;
  std::vector<CGFrame> sim_frames;
  std::vector<bool> sim_flags;
};

class Loop {
 public:
  Loop(const LoopConfig& cfg, const LoopOptions& opt) : cfg_(cfg), opt_(opt), out_(cfg.run.out_dir) {}

  LoopOutcome run() {
    cfg_.validate();
    fs::create_directories(out_);
    write_text(out_ / "config.toml", to_toml(cfg_));
    setup_ = make_toy_setup(cfg_);
    types_ = default_types(setup_.cg.masses.size() > 0 ? static_cast<int>(setup_.cg.masses.size()) : 0);

    int first_round = 0;
    if (opt_.resume && fs::exists(out_ / "manifest.json")) first_round = load_resume_state();
    if (first_round < 0) {
      log("run already finished");
      return {manifest_["status"] == "completed" ? LoopStatus::completed : LoopStatus::nothing_to_select, manifest_};
    }
    if (first_round == 0) {
      manifest_ = ojson::object();
      manifest_["format"] = "almd-manifest-1";
      manifest_["config_hash"] = config_hash(cfg_);
      manifest_["config"] = to_json(cfg_);
      manifest_["toy_constants"] = toy_constants_json();
      manifest_["status"] = "running";
      manifest_["rounds"] = ojson::array();
      manifest_["timings"] = ojson::object();
    } else {
      manifest_["status"] = "running";
      manifest_.erase("failure");
    }

    stage(-1, "reference", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      bool cached = false;
      reference_ = reference_trajectory(cfg_, setup_, &cached);
      manifest_["reference"] = {{"hash", reference_hash(cfg_)},
                                {"path", (fs::path(cfg_.run.cache_dir) / ("reference-" + reference_hash(cfg_) + ".trj")).string()},
                                {"n_frames", reference_.size()}};
      manifest_["timings"]["reference"] = seconds_since(t0);
      log(std::string("reference: ") + std::to_string(reference_.size()) + " frames" + (cached ? " (cached)" : ""));
      tica_ = tica_fit(featurize(reference_), cfg_.bench.tica_lag, cfg_.bench.tica_dims, cfg_.bench.tica_regularization);
    });

    for (int r = first_round; r <= cfg_.run.n_rounds; ++r) {
      const bool more = r == 0 ? round_zero() : active_round(r);
      write_manifest();
      if (!more) {
        manifest_["status"] = to_string(LoopStatus::nothing_to_select);
        write_manifest();
        return {LoopStatus::nothing_to_select, manifest_};
      }
    }
    manifest_["status"] = to_string(LoopStatus::completed);
    write_manifest();
    return {LoopStatus::completed, manifest_};
  }

 private:
  void log(const std::string& msg) const {
    if (opt_.log) opt_.log(msg);
  }

  template <typename Fn>
  void stage(int round, const char* name, Fn&& fn) {
    try {
      fn();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      manifest_["status"] = to_string(LoopStatus::failed);
      manifest_["failure"] = {{"round", round}, {"stage", name}, {"message", e.what()}};
      write_manifest();
      throw StageError("round " + std::to_string(round) + ", stage " + name + ": " + e.what());
    }
  }

  void write_manifest() { write_text(out_ / "manifest.json", manifest_.dump(2) + "\n"); }

  fs::path round_dir(int r) const { return out_ / round_dir_name(r); }
  std::string rel(const fs::path& p) const { return fs::relative(p, out_).generic_string(); }

  int load_resume_state() {
    std::ifstream is(out_ / "manifest.json");
    ojson m = ojson::parse(is);
    if (m.value("config_hash", "") != config_hash(cfg_))
      throw ConfigError("resume: manifest in " + out_.string() + " was written with a different configuration");
    if (m.value("status", "") == "completed" || m.value("status", "") == "nothing_to_select") {
      manifest_ = m;
      return -1;
    }
    ojson rounds = ojson::array();
    for (const auto& rec : m["rounds"])
      if (rec.value("complete", false)) rounds.push_back(rec);
    if (rounds.empty()) return 0;
    m["rounds"] = rounds;
    manifest_ = m;
    const int last = rounds.back()["round"].get<int>();
    const fs::path dir = round_dir(last);
    state_.params = load_checkpoint(dir / "model.ckpt");
    prior_ = state_.params.prior;
    state_.sim_frames = read_trajectory<CgSpace>(dir / "sim.trj");
    state_.sim_flags.assign(state_.sim_frames.size(), false);
    for (std::size_t i : rounds.back()["simulation"]["anomalous_frames"].get<std::vector<std::size_t>>())
      state_.sim_flags.at(i) = true;
    // An interrupted round may already have appended its oracle frames.
    const Dataset saved = load_dataset(out_ / "dataset");
    const auto n = rounds.back()["dataset_size_after"].get<std::size_t>();
    if (saved.size() < n) throw Error("resume: dataset on disk is smaller than the manifest records");
    for (std::size_t i = 0; i < n; ++i) dataset_.append(saved[i], saved.provenance()[i]);
    log("resuming after round " + std::to_string(last));
    return last + 1;
  }

  bool round_zero() {
    ojson rec = {{"round", 0}};
    ojson timings = ojson::object();
    fs::create_directories(round_dir(0));
    stage(0, "initial_data", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<AAFrame> aa;
      dataset_ = make_initial_dataset(cfg_, setup_, &aa);
      write_trajectory<AaSpace>(round_dir(0) / "oracle_aa.trj", aa);
      save_dataset(out_ / "dataset", dataset_, config_hash(cfg_));
      timings["initial_data"] = seconds_since(t0);
    });
    rec["dataset_size_before"] = 0;
    rec["dataset_size_after"] = dataset_.size();
    rec["oracle_queries"] = 0;
    log("round 0: initial dataset of " + std::to_string(dataset_.size()) + " frames");
    stage(0, "train", [&] {
      NetHyper h = cfg_.network;
      h.n_types = static_cast<int>(types_.size());
      PotentialParams p = init_potential(h, derive_seed(cfg_.run.seed, {kNetworkInit}));
      prior_ = fit_prior(dataset_.frames(), cfg_.oracle.temperature);
      prior_.enabled = cfg_.prior;
      p.prior = prior_;
      train_round(0, p, rec, timings);
    });
    simulate_and_bench(0, rec, timings);
    finish_round(rec, timings);
    return true;
  }

  bool active_round(int r) {
    ojson rec = {{"round", r}};
    ojson timings = ojson::object();
    fs::create_directories(round_dir(r));
    rec["dataset_size_before"] = dataset_.size();

    SelectionReport sel;
    stage(r, "select", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      SelectionConfig sc = cfg_.select;
      sc.rng_seed = derive_seed(cfg_.run.seed, {kSelect, static_cast<std::uint64_t>(r)});
      sel = select_frames(state_.sim_frames, state_.sim_flags, dataset_.frames(), sc);
      ojson chosen = ojson::array();
      for (std::size_t i = 0; i < sel.selected.size(); ++i)
        chosen.push_back({{"frame", sel.selected[i]}, {"min_rmsd", sel.selected_rmsd[i]}});
      rec["selection"] = {{"n_frames", sel.min_rmsd.size()},
                          {"n_candidates", sel.n_candidates},
                          {"n_anomalous", sel.n_anomalous},
                          {"n_cutoff_excluded", sel.n_cutoff_excluded},
                          {"selected", chosen},
                          {"histogram", histogram_json(sel.histogram)}};
      write_csv(round_dir(r) / "selection_min_rmsd_hist.csv", histogram_curve("selection_min_rmsd_hist", sel.histogram));
      timings["select"] = seconds_since(t0);
    });
    if (sel.nothing_to_select) {
      log("round " + std::to_string(r) + ": nothing to select");
      rec["dataset_size_after"] = dataset_.size();
      rec["oracle_queries"] = 0;
      rec["nothing_to_select"] = true;
      finish_round(rec, timings);
      return false;
    }

    std::vector<CGFrame> selected;
    for (std::size_t i : sel.selected) selected.push_back(state_.sim_frames[i]);
    write_trajectory<CgSpace>(round_dir(r) / "selected.trj", selected);

    std::vector<std::optional<BackmapResult>> bm(selected.size());
    std::vector<std::string> bm_errors(selected.size());
    stage(r, "backmap", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      parallel_for(selected.size(), [&](std::size_t q) {
        try {
          bm[q] = backmap(selected[q], setup_.top, cfg_.backmap);
        } catch (const Error& e) {
          bm_errors[q] = e.what();
        }
      });
      int fallbacks = 0, failed = 0;
      double max_dev = 0.0, max_k = 0.0;
      std::vector<AAFrame> aa;
      ojson errors = ojson::array();
      for (std::size_t q = 0; q < bm.size(); ++q) {
        if (!bm[q]) {
          ++failed;
          errors.push_back({{"query", q}, {"message", bm_errors[q]}});
          continue;
        }
        fallbacks += bm[q]->fallback_frame ? 1 : 0;
        max_dev = std::max(max_dev, bm[q]->anchor_deviation);
        max_k = std::max(max_k, bm[q]->restraint_k);
        aa.push_back(bm[q]->frame);
      }
      if (aa.empty()) throw Error("every selected frame failed to backmap");
      write_trajectory<AaSpace>(round_dir(r) / "backmapped.trj", aa);
      rec["backmap"] = {{"succeeded", aa.size()},
                        {"failed", failed},
                        {"errors", errors},
                        {"fallback_frames", fallbacks},
                        {"max_anchor_deviation", max_dev},
                        {"max_restraint_k", max_k}};
      timings["backmap"] = seconds_since(t0);
    });

    stage(r, "oracle", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<std::vector<AAFrame>> runs(bm.size());
      parallel_for(bm.size(), [&](std::size_t q) {
        if (!bm[q]) return;
        OracleConfig oc = cfg_.oracle;
        oc.rng_seed = derive_seed(cfg_.run.seed, {kOracle, static_cast<std::uint64_t>(r), q});
        runs[q] = oracle_query(setup_.top, bm[q]->frame.coords, oc, cfg_.oracle_equilibration_steps);
      });
      std::vector<AAFrame> aa_all;
      int queries = 0;
      for (std::size_t q = 0; q < runs.size(); ++q) {
        if (!bm[q]) continue;
        ++queries;
        for (const auto& f : runs[q]) {
          dataset_.append(map_frame(setup_.op, f), {r, FrameSource::active});
          aa_all.push_back(f);
        }
      }
      write_trajectory<AaSpace>(round_dir(r) / "oracle_aa.trj", aa_all);
      save_dataset(out_ / "dataset", dataset_, config_hash(cfg_));
      rec["oracle_queries"] = queries;
      rec["oracle_frames"] = aa_all.size();
      timings["oracle"] = seconds_since(t0);
    });
    rec["dataset_size_after"] = dataset_.size();
    log("round " + std::to_string(r) + ": dataset " + std::to_string(rec["dataset_size_before"].get<std::size_t>()) +
        " -> " + std::to_string(dataset_.size()));

    stage(r, "train", [&] {
      PotentialParams p = state_.params;
      if (!cfg_.run.warm_start) {
        p = init_potential(p.hyper, derive_seed(cfg_.run.seed, {kNetworkInit}));
        p.prior = prior_;
      }
      train_round(r, p, rec, timings);
    });
    simulate_and_bench(r, rec, timings);
    finish_round(rec, timings);
    return true;
  }

  void train_round(int r, const PotentialParams& init, ojson& rec, ojson& timings) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig tc = cfg_.train;
    tc.rng_seed = derive_seed(cfg_.run.seed, {kTrain, static_cast<std::uint64_t>(r)});
    const TrainResult tr = train(init, dataset_.frames(), types_, tc);
    state_.params = tr.params;
    if (r == 0) prior_ = tr.params.prior;
    const fs::path ckpt = round_dir(r) / "model.ckpt";
    save_checkpoint(ckpt, tr.params);
    Curve hist{"train_history", {"epoch", "train_loss", "val_loss"}, {}};
    for (const auto& e : tr.history) hist.rows.push_back({static_cast<double>(e.epoch), e.train_loss, e.val_loss});
    write_csv(round_dir(r) / "train_history.csv", hist);
    const auto& best = tr.history[static_cast<std::size_t>(tr.best_epoch)];
    rec["train"] = {{"epochs", tc.epochs},
                    {"best_epoch", tr.best_epoch},
                    {"initial_train_loss", tr.history.front().train_loss},
                    {"best_train_loss", best.train_loss},
                    {"best_val_loss", number_or_null(best.val_loss)},
                    {"final_train_loss", tr.history.back().train_loss}};
    rec["checkpoint"] = rel(ckpt);
    timings["train"] = seconds_since(t0);
    log("round " + std::to_string(r) + ": trained, loss " + std::to_string(tr.history.front().train_loss) + " -> " +
        std::to_string(best.train_loss));
  }

  void simulate_and_bench(int r, ojson& rec, ojson& timings) {
    stage(r, "simulate", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      // Walkers start from evenly spaced frames of the initial dataset, the
      // same in every round so rounds stay comparable.
      std::vector<Points3d> starts;
      const std::size_t n0 = initial_count();
      for (int w = 0; w < cfg_.simulate.n_walkers; ++w)
        starts.push_back(dataset_[static_cast<std::size_t>(w) * n0 / static_cast<std::size_t>(cfg_.simulate.n_walkers)].coords);
      const auto runs = run_walkers(state_.params, setup_.cg, starts, cfg_.simulate.sim,
                                    derive_seed(cfg_.run.seed, {kSimulate, static_cast<std::uint64_t>(r)}));
      state_.sim_frames.clear();
      state_.sim_flags.clear();
      long steps = 0;
      int exploded = 0, imploded = 0, segments = 0;
      double temp = 0.0;
      for (const auto& w : runs) {
        state_.sim_frames.insert(state_.sim_frames.end(), w.frames.begin(), w.frames.end());
        state_.sim_flags.insert(state_.sim_flags.end(), w.anomalous.begin(), w.anomalous.end());
        steps += w.steps;
        exploded += w.exploded;
        imploded += w.imploded;
        segments += w.segments;
        temp += w.mean_kinetic_temperature * static_cast<double>(w.steps);
      }
      std::vector<std::size_t> flagged;
      for (std::size_t i = 0; i < state_.sim_flags.size(); ++i)
        if (state_.sim_flags[i]) flagged.push_back(i);
      write_trajectory<CgSpace>(round_dir(r) / "sim.trj", state_.sim_frames);
      const int anomalies = exploded + imploded;
      rec["simulation"] = {{"walkers", runs.size()},
                           {"steps", steps},
                           {"segments", segments},
                           {"anomalies", anomalies},
                           {"exploded", exploded},
                           {"imploded", imploded},
                           {"anomaly_rate_per_1e5_steps", steps > 0 ? 1e5 * anomalies / static_cast<double>(steps) : 0.0},
                           {"mean_kinetic_temperature", steps > 0 ? temp / static_cast<double>(steps) : 0.0},
                           {"n_frames", state_.sim_frames.size()},
                           {"anomalous_frames", flagged},
                           {"trajectory", rel(round_dir(r) / "sim.trj")}};
      timings["simulate"] = seconds_since(t0);
      log("round " + std::to_string(r) + ": simulated " + std::to_string(steps) + " steps, " +
          std::to_string(anomalies) + " anomalies");
    });
    stage(r, "bench", [&] {
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<CGFrame> model;
      for (std::size_t i = 0; i < state_.sim_frames.size(); ++i)
        if (!state_.sim_flags[i]) model.push_back(state_.sim_frames[i]);
      const Points3d ref_frame = map_coords(setup_.op, setup_.minimized);
      const Histogram h =
          rmsd_histogram_vs_reference(model, ref_frame, static_cast<std::size_t>(cfg_.rmsd_hist_bins), 0.0, cfg_.rmsd_hist_max);
      write_csv(round_dir(r) / "rmsd_to_reference.csv", histogram_curve("rmsd_to_reference", h));
      rec["rmsd_to_reference"] = {{"support_width", h.support_width()},
                                  {"histogram", histogram_json(h)},
                                  {"csv", rel(round_dir(r) / "rmsd_to_reference.csv")}};
      if (model.empty()) {
        rec["benchmark"] = {{"error", "no non-anomalous frames"}, {"w1", nullptr}};
      } else {
        const BenchmarkReport br = benchmark(model, reference_, tica_, cfg_.bench);
        write_plot_csvs(round_dir(r) / "plots", br.plots);
        write_text(round_dir(r) / "bench.json", to_json(br) + "\n");
        rec["benchmark"] = {{"w1",
                             {{"tica_kde", br.w1_tica_kde},
                              {"reaction_coordinate", br.w1_reaction_coordinate},
                              {"bond_length", br.w1_bond_length},
                              {"bond_angle", br.w1_bond_angle},
                              {"dihedral", br.w1_dihedral}}},
                            {"n_model_frames", br.n_model_frames},
                            {"report", rel(round_dir(r) / "bench.json")}};
        log("round " + std::to_string(r) + ": TICA W1 " + std::to_string(br.w1_tica_kde));
      }
      timings["bench"] = seconds_since(t0);
    });
  }

  std::size_t initial_count() const {
    std::size_t n = 0;
    for (const auto& p : dataset_.provenance())
      if (p.iteration == 0) ++n;
    return n;
  }

  void finish_round(ojson& rec, ojson& timings) {
    rec["complete"] = true;
    rec["timings"] = timings;
    manifest_["rounds"].push_back(rec);
  }

  LoopConfig cfg_;
  LoopOptions opt_;
  fs::path out_;
  ToySetup setup_;
  std::vector<int> types_;
  std::vector<CGFrame> reference_;
  TicaModel tica_;
  Dataset dataset_;
  PriorParams prior_;
  RoundState state_;
  ojson manifest_;
};

}  // namespace

LoopOutcome run_active_learning(const LoopConfig& cfg, const LoopOptions& opt) {
  Loop loop(cfg, opt);
  return loop.run();
}

}  // namespace almd
