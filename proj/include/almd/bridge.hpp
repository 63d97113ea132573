#pragma once

#include <Eigen/SparseCore>

#include <string>
#include <vector>

#include "almd/oracle.hpp"
#include "almd/system.hpp"

namespace almd {

enum class MappingScheme { calpha, center_of_mass };

std::string to_string(MappingScheme s);
MappingScheme mapping_scheme_from_string(const std::string& s);

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Linear AA -> CG map R = Xi r and force projection F = XiF f, both applied
/// to each Cartesian axis separately. XiF = (Xi Xi^T)^-1 Xi.
struct MappingOperator {
  MappingScheme scheme = MappingScheme::calpha;
  SparseRows xi;    // M x N, rows non-negative and summing to one
  SparseRows xi_f;  // M x N

  int n_beads() const { return static_cast<int>(xi.rows()); }
  int n_atoms() const { return static_cast<int>(xi.cols()); }
};

/// calpha: row m is one-hot on bead m's anchor atom. center_of_mass: row m
/// holds the mass fractions of bead m's atoms.
MappingOperator build_mapping(const Topology& top, MappingScheme scheme);

/// Builds the operator from an explicit Xi, checking row-stochasticity.
MappingOperator mapping_from_matrix(SparseRows xi, MappingScheme scheme);

Points3d map_coords(const MappingOperator& op, const Points3d& r);
Points3d project_forces(const MappingOperator& op, const Points3d& f_aa);

/// Maps coordinates and (if present) projects forces of an AA frame.
CGFrame map_frame(const MappingOperator& op, const AAFrame& frame);

struct BackmapConfig {
  bool relax = true;
  bool rotamer_scan = true;  // try the three staggered outer torsions per bead
  double restraint_k = 1000.0;  // kJ mol^-1 nm^-2 on anchor atoms during relaxation
  int max_iters = 200;
  double force_tol = 1.0;          // kJ mol^-1 nm^-1
  double max_spacing_factor = 3.0;  // consecutive beads farther than this x nominal are rejected
  double round_trip_tol = 0.02;      // nm, largest allowed anchor offset after relaxation
  int max_escalations = 4;           // times restraint_k may be multiplied by 4 to meet it
};

struct BackmapResult {
  AAFrame frame;  // coords only
  bool fallback_frame = false;  // some bead used the degenerate-frame axis rule
  std::vector<int> degenerate_beads;
  bool relaxed = false;
  double restraint_k = 0.0;       // tether constant of the final relaxation pass
  double anchor_deviation = 0.0;  // max |anchor - bead| component after relaxation
  double energy = 0.0;  // unrestrained AA energy of the returned coordinates
};

/// CG -> AA reconstruction: anchors at the bead positions, satellites from
/// ideal internal coordinates (see place_side_chains) with a greedy scan over
/// staggered outer torsions, then optionally a
/// short minimization with the anchors tethered to their beads. If an anchor
/// ends up more than round_trip_tol from its bead the tether is stiffened
/// fourfold and the minimization continued. The restraints are not part of
/// the returned energy.
BackmapResult backmap(const CGFrame& cg, const Topology& top, const BackmapConfig& cfg = {});

}  // namespace almd
