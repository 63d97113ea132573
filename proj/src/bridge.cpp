#include "almd/bridge.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <numbers>

namespace almd {

std::string to_string(MappingScheme s) { return s == MappingScheme::calpha ? "calpha" : "center-of-mass"; }

MappingScheme mapping_scheme_from_string(const std::string& s) {
  if (s == "calpha") return MappingScheme::calpha;
  if (s == "center-of-mass" || s == "com") return MappingScheme::center_of_mass;
  throw Error("unknown mapping scheme '" + s + "'");
}

MappingOperator mapping_from_matrix(SparseRows xi, MappingScheme scheme) {
  xi.makeCompressed();
  for (Eigen::Index m = 0; m < xi.rows(); ++m) {
    double sum = 0.0;
    for (SparseRows::InnerIterator it(xi, m); it; ++it) {
      if (it.value() < 0.0) throw Error("mapping: negative weight in row " + std::to_string(m));
      sum += it.value();
    }
    if (std::abs(sum - 1.0) > 1e-12) throw Error("mapping: row " + std::to_string(m) + " does not sum to one");
  }
  // Gram matrix is M x M; dense Cholesky is fine at this size.
  const Eigen::MatrixXd gram = Eigen::MatrixXd(xi * SparseRows(xi.transpose()));
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw Error("mapping: Xi Xi^T is singular (overlapping beads?)");
  const Eigen::MatrixXd dense_f = llt.solve(Eigen::MatrixXd(xi));
  MappingOperator op;
  op.scheme = scheme;
  op.xi = std::move(xi);
  op.xi_f = dense_f.sparseView(0.0, 0.0);  // drop exact zeros only
  op.xi_f.makeCompressed();
  return op;
}

MappingOperator build_mapping(const Topology& top, MappingScheme scheme) {
  const auto members = top.bead_members();
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t b = 0; b < members.size(); ++b) {
    if (scheme == MappingScheme::calpha) {
      int anchor = -1;
      for (int a : members[b])
        if (top.atoms[static_cast<std::size_t>(a)].bead_anchor) anchor = a;
      if (anchor < 0) throw Error("build_mapping: bead " + std::to_string(b) + " has no tagged atom");
      trip.emplace_back(static_cast<int>(b), anchor, 1.0);
    } else {
      double total = 0.0;
      for (int a : members[b]) total += top.atoms[static_cast<std::size_t>(a)].mass;
      for (int a : members[b]) trip.emplace_back(static_cast<int>(b), a, top.atoms[static_cast<std::size_t>(a)].mass / total);
    }
  }
  SparseRows xi(static_cast<Eigen::Index>(members.size()), top.n_atoms());
  xi.setFromTriplets(trip.begin(), trip.end());
  return mapping_from_matrix(std::move(xi), scheme);
}

Points3d map_coords(const MappingOperator& op, const Points3d& r) {
  if (r.rows() != op.n_atoms()) throw Error("map_coords: coordinate count does not match the mapping");
  return op.xi * r;
}

Points3d project_forces(const MappingOperator& op, const Points3d& f_aa) {
  if (f_aa.rows() != op.n_atoms()) throw Error("project_forces: force count does not match the mapping");
  return op.xi_f * f_aa;
}

CGFrame map_frame(const MappingOperator& op, const AAFrame& frame) {
  CGFrame out{frame.time, map_coords(op, frame.coords), std::nullopt};
  if (frame.forces) out.forces = project_forces(op, *frame.forces);
  return out;
}

BackmapResult backmap(const CGFrame& cg, const Topology& top, const BackmapConfig& cfg) {
  const int nb = top.n_beads();
  if (cg.n_sites() != nb) throw Error("backmap: frame has " + std::to_string(cg.n_sites()) + " beads, topology " + std::to_string(nb));
  if (!cg.coords.allFinite()) throw Error("backmap: non-finite bead coordinates");

  // Nominal spacing between consecutive beads: the anchor-anchor bond length.
  std::vector<double> nominal(static_cast<std::size_t>(std::max(nb - 1, 0)), 0.0);
  for (const auto& b : top.bonds) {
    const auto& ai = top.atoms[static_cast<std::size_t>(b.i)];
    const auto& aj = top.atoms[static_cast<std::size_t>(b.j)];
    if (ai.bead_anchor && aj.bead_anchor && ai.bead_id && aj.bead_id && std::abs(*ai.bead_id - *aj.bead_id) == 1)
      nominal[static_cast<std::size_t>(std::min(*ai.bead_id, *aj.bead_id))] = b.r0;
  }
  for (int m = 0; m + 1 < nb; ++m) {
    const double d = (cg.coords.row(m + 1) - cg.coords.row(m)).norm();
    const double lim = cfg.max_spacing_factor * nominal[static_cast<std::size_t>(m)];
    if (nominal[static_cast<std::size_t>(m)] > 0.0 && d > lim)
      throw Error("backmap: beads " + std::to_string(m) + " and " + std::to_string(m + 1) + " are " +
                  std::to_string(d) + " nm apart (limit " + std::to_string(lim) + "); exploded frame?");
  }

  // Pick the staggered outer torsion of each bead that lowers the AA energy
  // most, one bead at a time along the chain.
  std::vector<double> torsions(static_cast<std::size_t>(nb), std::numbers::pi);
  SideChainPlacement placed = place_side_chains(top, cg.coords, torsions);
  if (cfg.rotamer_scan) {
    double best = aa_energy_forces(top, placed.coords).energy;
    for (int b = 0; b < nb; ++b) {
      const double keep = torsions[static_cast<std::size_t>(b)];
      double chosen = keep;
      for (double t : {std::numbers::pi / 3.0, -std::numbers::pi / 3.0}) {
        torsions[static_cast<std::size_t>(b)] = t;
        SideChainPlacement trial = place_side_chains(top, cg.coords, torsions);
        double e;
        try {
          e = aa_energy_forces(top, trial.coords).energy;
        } catch (const Error&) {
          continue;
        }
        if (e < best) {
          best = e;
          chosen = t;
          placed = std::move(trial);
        }
      }
      torsions[static_cast<std::size_t>(b)] = chosen;
    }
  }
  BackmapResult res;
  res.degenerate_beads = std::move(placed.degenerate_beads);
  res.fallback_frame = !res.degenerate_beads.empty();
  res.frame.time = cg.time;
  res.frame.coords = std::move(placed.coords);

  if (cfg.relax) {
    PositionRestraints pr;
    pr.k = cfg.restraint_k;
    pr.targets = cg.coords;
    const auto members = top.bead_members();
    for (int b = 0; b < nb; ++b)
      for (int a : members[static_cast<std::size_t>(b)])
        if (top.atoms[static_cast<std::size_t>(a)].bead_anchor) pr.atoms.push_back(a);
    // Strained input frames can pull the anchors off their beads; stiffen the
    // tether and continue from the current coordinates until they are back
    // within round_trip_tol.
    for (int attempt = 0;; ++attempt) {
      const MinimizeResult mr = minimize(top, res.frame.coords, cfg.max_iters, cfg.force_tol, &pr);
      res.frame.coords = mr.coords;
      res.anchor_deviation = 0.0;
      for (std::size_t b = 0; b < pr.atoms.size(); ++b)
        res.anchor_deviation = std::max(
            res.anchor_deviation,
            (res.frame.coords.row(pr.atoms[b]) - pr.targets.row(static_cast<Eigen::Index>(b))).cwiseAbs().maxCoeff());
      if (res.anchor_deviation <= cfg.round_trip_tol || attempt >= cfg.max_escalations) break;
      pr.k *= 4.0;
    }
    res.restraint_k = pr.k;
    res.relaxed = true;
  }
  res.energy = aa_energy_forces(top, res.frame.coords).energy;
  return res;
}

}  // namespace almd
