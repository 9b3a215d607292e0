#pragma once

#include "flowbridge/backbone.hpp"
#include "flowbridge/molecule.hpp"
#include "flowbridge/rng.hpp"
#include "flowbridge/toydata.hpp"

namespace fixtures {

using namespace flowbridge;

inline backbone::Architecture tiny_arch() {
  backbone::Architecture arch;
  arch.num_atom_types = 4;
  arch.num_bond_types = 3;
  arch.num_residue_labels = 3;
  arch.num_chi = 2;
  arch.embed_dim = 6;
  arch.hidden_dim = 6;
  arch.num_rbf = 4;
  arch.rbf_max = 6.0;
  return arch;
}

inline backbone::BackboneModel tiny_model(uint64_t seed = 7, bool uncertainty = true) {
  backbone::Architecture arch = tiny_arch();
  arch.uncertainty_head = uncertainty;
  backbone::BackboneModel model(arch);
  Rng rng(seed);
  model.init_random(rng, 0.8);
  return model;
}

/// Three atoms and three labelled context points with torsion chains.
inline PointCloudMolecule tiny_molecule() {
  PointCloudMolecule mol;
  mol.id = 42;
  mol.resize_atoms(3);
  mol.coords = {{0.0, 0.0, 0.0}, {1.4, 0.2, 0.0}, {2.1, 1.3, 0.4}};
  mol.atom_types = {0, 1, 2};
  mol.set_bond(0, 1, 1);
  mol.set_bond(1, 2, 2);
  mol.context_coords = {{3.5, 0.0, 0.0}, {-3.0, 1.0, 0.5}, {0.0, -3.5, 1.0}};
  mol.context_labels = {0, 1, 2};
  for (int j = 0; j < 3; ++j) {
    geometry::AngleChain chain;
    chain.angles = {0.5 - j, -1.0 + 0.4 * j};
    chain.mask = {1, static_cast<uint8_t>(j % 2)};
    chain.links = {geometry::LinkGeometry{}, geometry::LinkGeometry{}};
    for (auto& a : chain.angles) a = geometry::wrap(a);
    const geometry::Vec3 p = mol.context_coords[j];
    chain.frame = {p + geometry::Vec3{-2.5, 0.5, 0.0}, p + geometry::Vec3{-1.3, 0.0, 0.0}, p};
    mol.context_angles.push_back(chain);
  }
  return mol;
}

inline toydata::ToyDatasetConfig small_dataset_config(int n = 64, uint64_t seed = 5) {
  toydata::ToyDatasetConfig cfg;
  cfg.n_complexes = n;
  cfg.seed = seed;
  cfg.m_min = 3;
  cfg.m_max = 6;
  cfg.n_min_atoms = 3;
  cfg.n_max_atoms = 12;
  cfg.num_atom_types = 4;
  cfg.num_bond_types = 3;
  cfg.num_residue_labels = 3;
  cfg.num_chi = 2;
  return cfg;
}

}  // namespace fixtures
