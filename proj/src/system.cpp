#include "almd/system.hpp"

#include "binio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

namespace almd {

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

int Topology::n_beads() const {
  int m = 0;
  for (const auto& a : atoms)
    if (a.bead_id) m = std::max(m, *a.bead_id + 1);
  return m;
}

bool Topology::is_excluded(int i, int j) const {
  if (excluded.empty()) return false;
  const auto& row = excluded[static_cast<std::size_t>(i)];
  return std::binary_search(row.begin(), row.end(), j);
}

Eigen::VectorXd Topology::masses() const {
  Eigen::VectorXd m(n_atoms());
  for (int i = 0; i < n_atoms(); ++i) m(i) = atoms[static_cast<std::size_t>(i)].mass;
  return m;
}

std::vector<std::vector<int>> Topology::bead_members() const {
  std::vector<std::vector<int>> members(static_cast<std::size_t>(n_beads()));
  for (int i = 0; i < n_atoms(); ++i)
    if (const auto& b = atoms[static_cast<std::size_t>(i)].bead_id) members[static_cast<std::size_t>(*b)].push_back(i);
  return members;
}

void Topology::validate() const {
  const int n = n_atoms();
  auto in_range = [n](int i) { return i >= 0 && i < n; };
  for (const auto& a : atoms) {
    if (!(a.mass > 0.0)) throw Error("topology: atom '" + a.name + "' has non-positive mass");
    if (a.type_id < 0 || a.type_id >= static_cast<int>(lj_types.size()))
      throw Error("topology: atom '" + a.name + "' has an unknown type id");
  }
  const int m = n_beads();
  std::vector<int> owners(static_cast<std::size_t>(m), 0);
  for (const auto& a : atoms)
    if (a.bead_id) {
      if (*a.bead_id < 0) throw Error("topology: negative bead id");
      ++owners[static_cast<std::size_t>(*a.bead_id)];
    }
  for (int b = 0; b < m; ++b)
    if (owners[static_cast<std::size_t>(b)] == 0)
      throw Error("topology: bead " + std::to_string(b) + " owns no atoms");
  for (const auto& b : bonds) {
    if (!in_range(b.i) || !in_range(b.j)) throw Error("topology: bond index out of range");
    if (b.i == b.j) throw Error("topology: bond joins an atom to itself");
    if (!(b.k > 0.0) || !(b.r0 > 0.0)) throw Error("topology: bond constants must be positive");
  }
  for (const auto& a : angles) {
    if (!in_range(a.i) || !in_range(a.j) || !in_range(a.k)) throw Error("topology: angle index out of range");
    if (a.i == a.j || a.j == a.k || a.i == a.k) throw Error("topology: angle repeats an atom");
  }
  for (const auto& d : dihedrals) {
    const std::set<int> uniq{d.i, d.j, d.k, d.l};
    if (!in_range(d.i) || !in_range(d.j) || !in_range(d.k) || !in_range(d.l))
      throw Error("topology: dihedral index out of range");
    if (uniq.size() != 4) throw Error("topology: dihedral repeats an atom");
  }
  for (const auto& t : lj_types)
    if (!(t.sigma > 0.0) || t.epsilon < 0.0) throw Error("topology: invalid Lennard-Jones parameters");
  if (!excluded.empty()) {
    if (static_cast<int>(excluded.size()) != n) throw Error("topology: exclusion table size mismatch");
    for (int i = 0; i < n; ++i)
      for (int j : excluded[static_cast<std::size_t>(i)]) {
        if (!in_range(j) || j == i) throw Error("topology: invalid exclusion entry");
        if (!is_excluded(j, i)) throw Error("topology: exclusion list is not symmetric");
      }
  }
}

void build_exclusions(Topology& top) {
  const auto n = static_cast<std::size_t>(top.n_atoms());
  std::vector<std::set<int>> adj(n), excl(n);
  for (const auto& b : top.bonds) {
    adj[static_cast<std::size_t>(b.i)].insert(b.j);
    adj[static_cast<std::size_t>(b.j)].insert(b.i);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (int j : adj[i]) {
      excl[i].insert(j);
      for (int k : adj[static_cast<std::size_t>(j)])
        if (k != static_cast<int>(i)) excl[i].insert(k);
    }
  top.excluded.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) top.excluded[i].assign(excl[i].begin(), excl[i].end());
}

Topology build_toy_topology(int n_residues, const ToyParams& p) {
  if (n_residues < 2) throw Error("build_toy_topology: need at least 2 residues");
  Topology top;
  top.lj_types = {{p.sigma_ca, p.epsilon_ca}, {p.sigma_cb, p.epsilon_cb}, {p.sigma_cg, p.epsilon_cg}};
  auto ca = [](int m) { return 3 * m; };
  auto cb = [](int m) { return 3 * m + 1; };
  auto cg = [](int m) { return 3 * m + 2; };
  for (int m = 0; m < n_residues; ++m) {
    top.atoms.push_back({"CA", "C", p.mass_ca, m, true, 0});
    top.atoms.push_back({"CB", "C", p.mass_cb, m, false, 1});
    top.atoms.push_back({"CG", "C", p.mass_cg, m, false, 2});
  }
  for (int m = 0; m < n_residues; ++m) {
    top.bonds.push_back({ca(m), cb(m), p.bond_ca_cb, p.bond_k});
    top.bonds.push_back({cb(m), cg(m), p.bond_cb_cg, p.bond_k});
    if (m + 1 < n_residues) top.bonds.push_back({ca(m), ca(m + 1), p.bond_ca_ca, p.bond_k});
  }
  for (int m = 0; m < n_residues; ++m) {
    if (m > 0 && m + 1 < n_residues)
      top.angles.push_back({ca(m - 1), ca(m), ca(m + 1), p.angle_backbone, p.angle_backbone_k});
    if (m > 0) top.angles.push_back({cb(m), ca(m), ca(m - 1), p.angle_side, p.angle_side_k});
    if (m + 1 < n_residues) top.angles.push_back({cb(m), ca(m), ca(m + 1), p.angle_side, p.angle_side_k});
    top.angles.push_back({ca(m), cb(m), cg(m), p.angle_ca_cb_cg, p.angle_ca_cb_cg_k});
  }
  for (int m = 0; m + 1 < n_residues; ++m) {
    DihedralTerm d{cb(m), ca(m), ca(m + 1), cb(m + 1), {}, DoubleWellTerm{p.double_well_k, p.double_well_c}};
    top.dihedrals.push_back(d);
  }
  build_exclusions(top);
  top.validate();
  return top;
}

namespace {

// Places d such that |cd| = bond, angle(b,c,d) = theta and dihedral(a,b,c,d) = phi.
Eigen::Vector3d place_atom(const Eigen::Vector3d& a, const Eigen::Vector3d& b, const Eigen::Vector3d& c,
                           double bond, double theta, double phi) {
  const Eigen::Vector3d bc = (c - b).normalized();
  const Eigen::Vector3d n = (b - a).cross(bc).normalized();
  const Eigen::Vector3d m = n.cross(bc);
  const Eigen::Vector3d local(-bond * std::cos(theta), bond * std::sin(theta) * std::cos(phi),
                              bond * std::sin(theta) * std::sin(phi));
  return c + local.x() * bc + local.y() * m + local.z() * n;
}

}  // namespace

namespace {

Eigen::Vector3d any_perpendicular(const Eigen::Vector3d& w) {
  Eigen::Index axis;
  w.cwiseAbs().minCoeff(&axis);
  return w.cross(Eigen::Vector3d::Unit(axis)).normalized();
}

double bond_length(const Topology& top, int i, int j) {
  for (const auto& b : top.bonds)
    if ((b.i == i && b.j == j) || (b.i == j && b.j == i)) return b.r0;
  throw Error("place_side_chains: atoms " + std::to_string(i) + " and " + std::to_string(j) + " are not bonded");
}

// Equilibrium angle i-j-k; tetrahedral if the topology has no such term.
double bond_angle(const Topology& top, int i, int j, int k) {
  for (const auto& a : top.angles)
    if (a.j == j && ((a.i == i && a.k == k) || (a.i == k && a.k == i))) return a.theta0;
  return std::acos(-1.0 / 3.0);
}

}  // namespace

SideChainPlacement place_side_chains(const Topology& top, const Points3d& anchors,
                                     std::span<const double> outer_torsions) {
  const int nb = top.n_beads();
  if (anchors.rows() != nb) throw Error("place_side_chains: expected one position per bead");
  if (!outer_torsions.empty() && static_cast<int>(outer_torsions.size()) != nb)
    throw Error("place_side_chains: expected one outer torsion per bead");
  const auto members = top.bead_members();
  std::vector<int> anchor(static_cast<std::size_t>(nb), -1);
  for (int b = 0; b < nb; ++b)
    for (int a : members[static_cast<std::size_t>(b)])
      if (top.atoms[static_cast<std::size_t>(a)].bead_anchor) anchor[static_cast<std::size_t>(b)] = a;
  for (int b = 0; b < nb; ++b)
    if (anchor[static_cast<std::size_t>(b)] < 0)
      throw Error("place_side_chains: bead " + std::to_string(b) + " has no anchor atom");

  std::vector<std::vector<int>> adj(static_cast<std::size_t>(top.n_atoms()));
  for (const auto& bd : top.bonds) {
    adj[static_cast<std::size_t>(bd.i)].push_back(bd.j);
    adj[static_cast<std::size_t>(bd.j)].push_back(bd.i);
  }

  SideChainPlacement out;
  out.coords = Points3d::Zero(top.n_atoms(), 3);
  auto P = [&](int b) -> Eigen::Vector3d { return anchors.row(b).transpose(); };

  for (int b = 0; b < nb; ++b) {
    const auto ub = static_cast<std::size_t>(b);
    const int a = anchor[ub];
    const Eigen::Vector3d ca = P(b);
    out.coords.row(a) = ca.transpose();

    // u points to the previous bead, w to the next. Chain ends borrow the
    // direction of the adjacent bond pair so both ends use the same rule.
    Eigen::Vector3d u, w;
    bool degenerate = false;
    if (nb == 2) {
      w = (P(1 - b) - ca).normalized();
      u = any_perpendicular(w);
      if (b == 1) std::swap(u, w);
      degenerate = true;
    } else if (b == 0) {
      w = (P(1) - ca).normalized();
      u = -(P(2) - P(1)).normalized();
    } else if (b == nb - 1) {
      u = (P(b - 1) - ca).normalized();
      w = (P(b - 1) - P(b - 2)).normalized();
    } else {
      u = (P(b - 1) - ca).normalized();
      w = (P(b + 1) - ca).normalized();
    }
    Eigen::Vector3d bis = u + w;
    Eigen::Vector3d nrm = u.cross(w);
    if (bis.norm() < 1e-6 || nrm.norm() < 1e-6) {
      degenerate = true;
      nrm = any_perpendicular(w);
      bis = nrm.cross(w);
    }
    bis.normalize();
    nrm.normalize();
    if (degenerate) out.degenerate_beads.push_back(b);
    const double half = 0.5 * std::acos(std::clamp(u.dot(w), -1.0, 1.0));
    const int ref_bead = b + 1 < nb ? b + 1 : b - 1;
    const int ref = anchor[static_cast<std::size_t>(ref_bead)];

    // Breadth-first over the bead's own atoms starting at the anchor.
    std::vector<int> parent(static_cast<std::size_t>(top.n_atoms()), -2);
    parent[static_cast<std::size_t>(a)] = -1;
    std::vector<int> queue{a};
    int first_shell = 0;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
      const int cur = queue[qi];
      int sibling = 0;
      for (int nbr : adj[static_cast<std::size_t>(cur)]) {
        const auto& at = top.atoms[static_cast<std::size_t>(nbr)];
        if (!at.bead_id || *at.bead_id != b || parent[static_cast<std::size_t>(nbr)] != -2) continue;
        parent[static_cast<std::size_t>(nbr)] = cur;
        queue.push_back(nbr);
        const double len = bond_length(top, cur, nbr);
        Eigen::Vector3d pos;
        if (cur == a) {
          if (first_shell >= 2) throw Error("place_side_chains: more than two satellites on an anchor");
          const double theta = bond_angle(top, nbr, a, ref);
          const double cos_alpha = std::clamp(-std::cos(theta) / std::max(std::cos(half), 1e-3), -1.0, 1.0);
          const double alpha = std::acos(cos_alpha);
          const double face = first_shell == 0 ? 1.0 : -1.0;
          pos = ca + len * (-std::cos(alpha) * bis + face * std::sin(alpha) * nrm).normalized();
          ++first_shell;
        } else {
          const int gp = parent[static_cast<std::size_t>(cur)];
          const Eigen::Vector3d r_gp = out.coords.row(gp).transpose();
          const Eigen::Vector3d r_cur = out.coords.row(cur).transpose();
          const Eigen::Vector3d r_ggp = gp == a ? P(ref_bead) : Eigen::Vector3d(out.coords.row(parent[static_cast<std::size_t>(gp)]).transpose());
          const double base = outer_torsions.empty() ? std::numbers::pi : outer_torsions[ub];
          const double phi = base + sibling * 2.0 * std::numbers::pi / 3.0;
          pos = place_atom(r_ggp, r_gp, r_cur, len, bond_angle(top, gp, cur, nbr), phi);
          ++sibling;
        }
        out.coords.row(nbr) = pos.transpose();
      }
    }
    if (queue.size() != members[ub].size())
      throw Error("place_side_chains: bead " + std::to_string(b) + " is not connected through its anchor");
  }
  return out;
}

Points3d toy_initial_coordinates(const Topology& top, const ToyParams& p) {
  const int nres = top.n_beads();
  // Backbone: an open helix-like trace.
  const double theta = p.angle_backbone;
  const double tau = 60.0 * std::numbers::pi / 180.0;
  Points3d ca(nres, 3);
  ca.row(0).setZero();
  ca.row(1) << p.bond_ca_ca, 0, 0;
  if (nres > 2) ca.row(2) = ca.row(1) + p.bond_ca_ca * Eigen::RowVector3d(-std::cos(theta), std::sin(theta), 0.0);
  for (int m = 3; m < nres; ++m)
    ca.row(m) = place_atom(ca.row(m - 3), ca.row(m - 2), ca.row(m - 1), p.bond_ca_ca, theta, tau).transpose();
  return place_side_chains(top, ca).coords;
}

// ---------------------------------------------------------------------------
// ALMDTRJ1
// ---------------------------------------------------------------------------

namespace {

using binio::put_le;

template <typename T>
T get_le(std::istream& is, const char* what) {
  return binio::get_le<T, TruncatedFileError>(is, "trajectory truncated while reading ", what);
}

void put_block(std::ostream& os, const Points3d& p) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(p.size() * sizeof(double)));
  } else {
    for (Eigen::Index i = 0; i < p.size(); ++i) put_le(os, p.data()[i]);
  }
}

Points3d get_block(std::istream& is, std::uint32_t n_sites, const char* what) {
  Points3d p(n_sites, 3);
  const auto bytes = static_cast<std::streamsize>(p.size() * sizeof(double));
  is.read(reinterpret_cast<char*>(p.data()), bytes);
  if (is.gcount() != bytes) throw TruncatedFileError(std::string("trajectory truncated in ") + what);
  if constexpr (std::endian::native == std::endian::big) {
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      auto* b = reinterpret_cast<unsigned char*>(p.data() + i);
      std::reverse(b, b + sizeof(double));
    }
  }
  return p;
}

}  // namespace

void write_raw_trajectory(const std::filesystem::path& path, std::span<const RawFrame> frames) {
  std::uint32_t n_sites = frames.empty() ? 0 : static_cast<std::uint32_t>(frames.front().coords.rows());
  const bool has_forces = !frames.empty() && frames.front().forces.has_value();
  for (const auto& f : frames) {
    if (f.coords.rows() != n_sites) throw TrajectoryError("write_trajectory: frames differ in site count");
    if (f.forces.has_value() != has_forces)
      throw TrajectoryError("write_trajectory: frames must all carry forces or none");
    if (f.forces && f.forces->rows() != n_sites) throw TrajectoryError("write_trajectory: force block size mismatch");
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw TrajectoryError("write_trajectory: cannot open " + path.string());
  os.write(kTrajectoryMagic, sizeof(kTrajectoryMagic));
  put_le<std::uint32_t>(os, kTrajectoryVersion);
  put_le<std::uint32_t>(os, n_sites);
  put_le<std::uint64_t>(os, frames.size());
  put_le<std::uint8_t>(os, has_forces ? 1 : 0);
  for (const auto& f : frames) {
    put_le<double>(os, f.time);
    put_block(os, f.coords);
    if (has_forces) put_block(os, *f.forces);
  }
  if (!os) throw TrajectoryError("write_trajectory: write failed for " + path.string());
}

std::vector<RawFrame> read_raw_trajectory(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw TrajectoryError("read_trajectory: cannot open " + path.string());
  char magic[sizeof(kTrajectoryMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(magic)))
    throw TruncatedFileError("trajectory truncated in header");
  if (std::memcmp(magic, kTrajectoryMagic, sizeof(magic)) != 0)
    throw BadMagicError("bad magic: " + path.string() + " is not an ALMDTRJ1 trajectory");
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kTrajectoryVersion)
    throw UnsupportedVersionError("unsupported trajectory version " + std::to_string(version));
  const auto n_sites = get_le<std::uint32_t>(is, "site count");
  const auto n_frames = get_le<std::uint64_t>(is, "frame count");
  const auto has_forces = get_le<std::uint8_t>(is, "force flag");
  if (has_forces > 1) throw TrajectoryError("read_trajectory: invalid force flag");

  std::vector<RawFrame> frames;
  frames.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n_frames, 1u << 20)));
  for (std::uint64_t t = 0; t < n_frames; ++t) {
    RawFrame f;
    f.time = get_le<double>(is, "frame time");
    f.coords = get_block(is, n_sites, "coordinates");
    if (has_forces) f.forces = get_block(is, n_sites, "forces");
    frames.push_back(std::move(f));
  }
  return frames;
}

void write_xyz(const std::filesystem::path& path, std::span<const AAFrame> frames, const Topology& top) {
  std::ofstream os(path);
  if (!os) throw Error("write_xyz: cannot open " + path.string());
  os.precision(6);
  os << std::fixed;
  for (const auto& f : frames) {
    os << f.n_sites() << "\n";
    os << "Time=" << f.time << " Properties=species:S:1:pos:R:3" << (f.forces ? ":forces:R:3" : "") << "\n";
    for (int i = 0; i < f.n_sites(); ++i) {
      const std::string name = i < top.n_atoms() ? top.atoms[static_cast<std::size_t>(i)].name : "X";
      os << name << " " << f.coords(i, 0) * 10.0 << " " << f.coords(i, 1) * 10.0 << " " << f.coords(i, 2) * 10.0;
      if (f.forces) os << " " << (*f.forces)(i, 0) << " " << (*f.forces)(i, 1) << " " << (*f.forces)(i, 2);
      os << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

std::string to_string(FrameSource s) { return s == FrameSource::initial ? "initial" : "active"; }

FrameSource frame_source_from_string(const std::string& s) {
  if (s == "initial") return FrameSource::initial;
  if (s == "active") return FrameSource::active;
  throw Error("unknown frame source '" + s + "'");
}

void Dataset::append(CGFrame frame, Provenance prov) {
  if (!frame.forces) throw Error("dataset: frame without forces");
  if (!frame.coords.allFinite() || !frame.forces->allFinite()) throw Error("dataset: non-finite frame");
  if (frame.forces->rows() != frame.coords.rows()) throw Error("dataset: force block size mismatch");
  if (!frames_.empty() && frame.n_sites() != n_beads()) throw Error("dataset: inconsistent bead count");
  if (!provenance_.empty() && prov.iteration < provenance_.back().iteration)
    throw Error("dataset: provenance iteration must be non-decreasing");
  frames_.push_back(std::move(frame));
  provenance_.push_back(prov);
}

void Dataset::append(std::span<const CGFrame> frames, Provenance prov) {
  for (const auto& f : frames) append(f, prov);
}

void save_dataset(const std::filesystem::path& dir, const Dataset& data, const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  struct Batch {
    Provenance prov;
    std::size_t begin, end;
  };
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (batches.empty() || !(batches.back().prov == data.provenance()[i]))
      batches.push_back({data.provenance()[i], i, i});
    batches.back().end = i + 1;
  }
  std::ostringstream manifest;
  manifest << "format = almd-dataset-1\n";
  manifest << "config_hash = " << config_hash << "\n";
  manifest << "frames = " << data.size() << "\n";
  manifest << "batches = " << batches.size() << "\n";
  for (std::size_t b = 0; b < batches.size(); ++b) {
    char name[32];
    std::snprintf(name, sizeof(name), "batch_%04zu.trj", b);
    const auto& batch = batches[b];
    write_trajectory<CgSpace>(dir / name, std::span(data.frames()).subspan(batch.begin, batch.end - batch.begin));
    manifest << "batch." << b << ".file = " << name << "\n";
    manifest << "batch." << b << ".iteration = " << batch.prov.iteration << "\n";
    manifest << "batch." << b << ".source = " << to_string(batch.prov.source) << "\n";
    manifest << "batch." << b << ".count = " << (batch.end - batch.begin) << "\n";
  }
  std::ofstream os(dir / "dataset.manifest", std::ios::trunc);
  os << manifest.str();
  if (!os) throw Error("save_dataset: cannot write manifest in " + dir.string());
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream is(dir / "dataset.manifest");
  if (!is) throw Error("load_dataset: no dataset.manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (kv["format"] != "almd-dataset-1") throw Error("load_dataset: unknown dataset format");
  const int n_batches = std::stoi(kv.at("batches"));
  Dataset data;
  for (int b = 0; b < n_batches; ++b) {
    const std::string key = "batch." + std::to_string(b) + ".";
    Provenance prov{std::stoi(kv.at(key + "iteration")), frame_source_from_string(kv.at(key + "source"))};
    const auto frames = read_trajectory<CgSpace>(dir / kv.at(key + "file"));
    if (frames.size() != std::stoul(kv.at(key + "count")))
      throw Error("load_dataset: batch " + std::to_string(b) + " frame count mismatch");
    data.append(frames, prov);
  }
  return data;
}

}  // namespace almd
