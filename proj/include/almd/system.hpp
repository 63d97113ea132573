#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "almd/mathcore.hpp"
#include "almd/toy_constants.hpp"

namespace almd {

inline constexpr double kBoltzmann = toy::kBoltzmann;

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

struct Atom {
  std::string name;
  std::string element;
  double mass = 0.0;               // amu
  std::optional<int> bead_id;      // CG bead this atom belongs to
  bool bead_anchor = false;        // the C-alpha-like atom of its bead
  int type_id = 0;                 // index into Topology::lj_types
};

struct Bond {
  int i = 0, j = 0;
  double r0 = 0.0;  // nm
  double k = 0.0;   // kJ mol^-1 nm^-2
};

struct AngleTerm {
  int i = 0, j = 0, k = 0;
  double theta0 = 0.0;  // rad
  double k_theta = 0.0;  // kJ mol^-1 rad^-2
};

/// k_phi (1 + cos(n phi - phi0))
struct PeriodicTerm {
  int n = 1;
  double phi0 = 0.0;
  double k_phi = 0.0;
};

/// k_w (cos(phi) - c)^2
struct DoubleWellTerm {
  double k_w = 0.0;
  double c = 0.0;
};

struct DihedralTerm {
  int i = 0, j = 0, k = 0, l = 0;
  std::vector<PeriodicTerm> periodic;
  std::optional<DoubleWellTerm> double_well;
};

struct LjType {
  double sigma = 0.0;    // nm
  double epsilon = 0.0;  // kJ mol^-1
};

struct Topology {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::vector<AngleTerm> angles;
  std::vector<DihedralTerm> dihedrals;
  std::vector<LjType> lj_types;
  /// excluded[i] lists the partners of atom i (sorted); symmetric.
  std::vector<std::vector<int>> excluded;

  int n_atoms() const { return static_cast<int>(atoms.size()); }
  int n_beads() const;
  bool is_excluded(int i, int j) const;
  Eigen::VectorXd masses() const;
  /// Atom indices of each bead, in atom order.
  std::vector<std::vector<int>> bead_members() const;

  /// Throws Error on any broken invariant.
  void validate() const;
};

/// Adds 1-2 and 1-3 exclusions derived from the bond graph.
void build_exclusions(Topology& top);

struct ToyParams {
  int n_residues = toy::kResidues;
  double mass_ca = toy::kMassCA, mass_cb = toy::kMassCB, mass_cg = toy::kMassCG;
  double bond_ca_ca = toy::kBondCACA, bond_ca_cb = toy::kBondCACB, bond_cb_cg = toy::kBondCBCG;
  double bond_k = toy::kBondK;
  double angle_backbone = toy::kAngleBackbone, angle_backbone_k = toy::kAngleBackboneK;
  double angle_side = toy::kAngleSide, angle_side_k = toy::kAngleSideK;
  double angle_ca_cb_cg = toy::kAngleCACBCG, angle_ca_cb_cg_k = toy::kAngleCACBCGK;
  double double_well_k = toy::kDoubleWellK, double_well_c = toy::kDoubleWellC;
  double sigma_ca = toy::kSigmaCA, epsilon_ca = toy::kEpsilonCA;
  double sigma_cb = toy::kSigmaCB, epsilon_cb = toy::kEpsilonCB;
  double sigma_cg = toy::kSigmaCG, epsilon_cg = toy::kEpsilonCG;
};

/// Residue chain: residue m = {CA (bead anchor), CB, CG}. Backbone bonds join
/// consecutive CA atoms; each junction carries one double-well torsion
/// CB(m)-CA(m)-CA(m+1)-CB(m+1).
Topology build_toy_topology(int n_residues, const ToyParams& params = {});

struct SideChainPlacement {
  Points3d coords;
  std::vector<int> degenerate_beads;  // beads whose local frame used the fallback axis
};

/// Puts every bead's anchor atom at the given bead position and builds the
/// remaining atoms from the topology's equilibrium bond lengths and angles.
/// The local frame of bead m is spanned by the bisector and normal of the
/// directions to beads m-1 and m+1; the first satellite sits on the +normal
/// face so that both of its angles to the neighbouring anchors are ideal.
/// End beads use the bond pair next to them (first bead: the direction
/// 1->2 reversed stands in for the missing predecessor; last bead: n-2 -> n-1
/// stands in for the successor). Second-shell atoms sit at torsion
/// outer_torsions[m] (default pi, trans) measured from the next bead's anchor
/// (previous bead at the chain end). Collinear or
/// two-bead inputs fall back to an arbitrary perpendicular axis and are
/// listed in degenerate_beads.
SideChainPlacement place_side_chains(const Topology& top, const Points3d& anchors,
                                     std::span<const double> outer_torsions = {});

/// Idealized starting coordinates (nm) with every junction torsion in the
/// positive basin. Not minimized.
Points3d toy_initial_coordinates(const Topology& top, const ToyParams& params = {});

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

struct AaSpace {};
struct CgSpace {};

template <typename Space>
struct Frame {
  double time = 0.0;  // ps
  Points3d coords;    // nm
  std::optional<Points3d> forces;  // kJ mol^-1 nm^-1

  int n_sites() const { return static_cast<int>(coords.rows()); }
  bool operator==(const Frame&) const = default;
};

using AAFrame = Frame<AaSpace>;
using CGFrame = Frame<CgSpace>;

// ---------------------------------------------------------------------------
// ALMDTRJ1 trajectory files
// ---------------------------------------------------------------------------

class TrajectoryError : public Error {
 public:
  using Error::Error;
};
class BadMagicError : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};
class TruncatedFileError : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};
class UnsupportedVersionError : public TrajectoryError {
 public:
  using TrajectoryError::TrajectoryError;
};

inline constexpr char kTrajectoryMagic[8] = {'A', 'L', 'M', 'D', 'T', 'R', 'J', '1'};
inline constexpr std::uint32_t kTrajectoryVersion = 1;

struct RawFrame {
  double time = 0.0;
  Points3d coords;
  std::optional<Points3d> forces;
};

void write_raw_trajectory(const std::filesystem::path& path, std::span<const RawFrame> frames);
std::vector<RawFrame> read_raw_trajectory(const std::filesystem::path& path);

template <typename Space>
void write_trajectory(const std::filesystem::path& path, std::span<const Frame<Space>> frames) {
  std::vector<RawFrame> raw;
  raw.reserve(frames.size());
  for (const auto& f : frames) raw.push_back({f.time, f.coords, f.forces});
  write_raw_trajectory(path, raw);
}

template <typename Space>
std::vector<Frame<Space>> read_trajectory(const std::filesystem::path& path) {
  std::vector<Frame<Space>> out;
  for (auto& r : read_raw_trajectory(path))
    out.push_back(Frame<Space>{r.time, std::move(r.coords), std::move(r.forces)});
  return out;
}

/// Extended-XYZ style text dump for eyeballing; not read back.
void write_xyz(const std::filesystem::path& path, std::span<const AAFrame> frames,
               const Topology& top);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

enum class FrameSource { initial, active };

struct Provenance {
  int iteration = 0;
  FrameSource source = FrameSource::initial;
  bool operator==(const Provenance&) const = default;
};

/// Growing store of CG training frames with projected forces.
class Dataset {
 public:
  void append(CGFrame frame, Provenance prov);
  void append(std::span<const CGFrame> frames, Provenance prov);

  std::size_t size() const { return frames_.size(); }
  bool empty() const { return frames_.empty(); }
  int n_beads() const { return frames_.empty() ? 0 : frames_.front().n_sites(); }
  const std::vector<CGFrame>& frames() const { return frames_; }
  const std::vector<Provenance>& provenance() const { return provenance_; }
  const CGFrame& operator[](std::size_t i) const { return frames_[i]; }

 private:
  std::vector<CGFrame> frames_;
  std::vector<Provenance> provenance_;
};

/// Directory layout: one ALMDTRJ1 file per provenance batch plus
/// `dataset.manifest`, a UTF-8 key = value listing of the batches.
void save_dataset(const std::filesystem::path& dir, const Dataset& data,
                  const std::string& config_hash = "");
Dataset load_dataset(const std::filesystem::path& dir);

std::string to_string(FrameSource s);
FrameSource frame_source_from_string(const std::string& s);

}  // namespace almd
