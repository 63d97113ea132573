#pragma once

// Default constants of the toy residue chain. Every run manifest echoes
// kToyConstantsVersion together with the values actually used; bump the
// version whenever a number below changes.

namespace almd::toy {

inline constexpr const char* kToyConstantsVersion = "toy-chain-v2";

inline constexpr double kBoltzmann = 0.0083144621;  // kJ mol^-1 K^-1
inline constexpr double kReferenceTemperature = 300.0;  // K

inline constexpr int kResidues = 10;

// Atom masses (amu): backbone bead atom, first and second side-chain atoms.
inline constexpr double kMassCA = 40.0;
inline constexpr double kMassCB = 30.0;
inline constexpr double kMassCG = 40.0;

// Bonds (nm, kJ mol^-1 nm^-2).
inline constexpr double kBondCACA = 0.38;
inline constexpr double kBondCACB = 0.153;
inline constexpr double kBondCBCG = 0.153;
inline constexpr double kBondK = 5.0e3;

// Angles (rad, kJ mol^-1 rad^-2).
inline constexpr double kAngleBackbone = 1.75;  // CA-CA-CA
inline constexpr double kAngleBackboneK = 150.0;
inline constexpr double kAngleSide = 1.92;  // CB-CA-CA
inline constexpr double kAngleSideK = 75.0;
inline constexpr double kAngleCACBCG = 1.95;
inline constexpr double kAngleCACBCGK = 75.0;

// Junction double well V = k_w (cos(phi) - c)^2 on CB(i)-CA(i)-CA(i+1)-CB(i+1).
// Minima at phi = +-acos(c); the lower barrier is k_w (1 - |c|)^2, set to
// 3 k_B T at the reference temperature.
inline constexpr double kDoubleWellC = 0.0;
inline constexpr double kDoubleWellK = 3.0 * kBoltzmann * kReferenceTemperature;

// Lennard-Jones per atom type (nm, kJ mol^-1); 1-2 and 1-3 pairs excluded.
inline constexpr double kSigmaCA = 0.36;
inline constexpr double kEpsilonCA = 0.4;
inline constexpr double kSigmaCB = 0.30;
inline constexpr double kEpsilonCB = 0.4;
inline constexpr double kSigmaCG = 0.38;
inline constexpr double kEpsilonCG = 1.0;

}  // namespace almd::toy
