#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "flowbridge/molecule.hpp"
#include "flowbridge/rng.hpp"

namespace flowbridge::toydata {

/// Synthetic pocket/ligand generator. The statistical couplings the model is
/// expected to learn are built in: ligand size follows the context size,
/// atom types follow radial position, bond types follow interatomic distance,
/// atoms avoid the context clash radius, and context torsion angles are drawn
/// from label-indexed wrapped-Gaussian mixtures.
struct ToyDatasetConfig {
  int n_complexes = 2000;
  uint64_t seed = 0;

  int m_min = 4;
  int m_max = 8;
  int num_atom_types = 5;  // includes the virtual slot; real types = num_atom_types - 1
  int num_bond_types = 3;  // None / short / long distance band
  int num_residue_labels = 4;
  int num_chi = 2;
  int angle_modes = 2;     // modes per (label, slot) mixture
  double angle_mode_sd = 0.15;

  double clash_radius = 1.2;
  double context_radius_min = 3.0;
  double context_radius_max = 5.0;

  double bond_length_mean = 1.5;
  double bond_length_sd = 0.09;
  double bond_double_max = 1.42;  // below: bond type 2 (when available)
  double bond_single_max = 1.9;   // below: bond type 1
  double min_atom_separation = 0.9;
  double type_band_width = 0.8;

  double size_base = 2.0;
  double size_slope = 0.9;
  double size_noise_sd = 1.0;
  int n_min_atoms = 3;
  int n_max_atoms = 24;

  int max_placement_retries = 400;

  void validate() const;
};

/// Deterministic wrapped-Gaussian mixture assigned to a (label, slot) pair.
struct AngleMixture {
  std::vector<double> modes;    // wrapped mode centers
  std::vector<double> weights;  // sums to 1
  double sd = 0.15;
};

AngleMixture angle_mixture(const ToyDatasetConfig& config, int label, int slot);

/// Number of valid torsion slots for a context label (the rest are masked).
int valid_angle_slots(const ToyDatasetConfig& config, int label);

/// Byte-stable generation: per-complex RNG streams derived from the seed.
std::vector<PointCloudMolecule> generate_dataset(const ToyDatasetConfig& config);

/// Toy molecular property oracles:
///  - compactness: negative radius of gyration (higher = tighter)
///  - type_balance: entropy of the real-type histogram minus its maximum over
///    num_real_types categories (0 at a uniform histogram, negative otherwise)
///  - clash_score: fraction of atoms within clash_radius of a context point
std::map<std::string, double> property_oracles(const PointCloudMolecule& molecule,
                                               double clash_radius = 1.2, int num_real_types = 4);

/// Radius of gyration around the ligand centroid.
double radius_of_gyration(const PointCloudMolecule& molecule);

}  // namespace flowbridge::toydata
