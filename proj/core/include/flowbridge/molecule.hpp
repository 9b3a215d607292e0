#pragma once

#include <cstdint>
#include <vector>

#include "flowbridge/geometry.hpp"

namespace flowbridge {

/// A pocket/ligand complex: ligand atoms with categorical types (last type
/// index is the virtual "no atom" category) and a symmetric categorical bond
/// matrix (type 0 is "None"), conditioned on labelled context points that may
/// carry torsion chains.
struct PointCloudMolecule {
  int id = 0;

  std::vector<geometry::Vec3> coords;
  std::vector<int> atom_types;
  std::vector<int> bonds;  // n*n row-major, symmetric, zero diagonal

  std::vector<geometry::Vec3> context_coords;
  std::vector<int> context_labels;
  std::vector<geometry::AngleChain> context_angles;  // empty, or one chain per context point

  int num_atoms() const { return static_cast<int>(coords.size()); }
  int num_context() const { return static_cast<int>(context_coords.size()); }
  bool has_angles() const { return !context_angles.empty(); }

  int bond(int i, int j) const { return bonds[static_cast<size_t>(i) * coords.size() + j]; }
  void set_bond(int i, int j, int type) {
    bonds[static_cast<size_t>(i) * coords.size() + j] = type;
    bonds[static_cast<size_t>(j) * coords.size() + i] = type;
  }
  void resize_atoms(int n) {
    coords.resize(n);
    atom_types.resize(n, 0);
    bonds.assign(static_cast<size_t>(n) * n, 0);
  }

  geometry::Vec3 ligand_centroid() const;
  geometry::Vec3 context_centroid() const;

  /// Checks structural invariants: consistent lengths, symmetric bonds with a
  /// zero diagonal, categories in range, and fully disconnected virtual atoms
  /// (every atom of type virtual_type has only "None" bonds).
  /// Throws std::invalid_argument on violation.
  void validate(int num_atom_types, int num_bond_types, int num_residue_labels) const;
};

/// Removes every atom whose type equals virtual_type, dropping its bond rows
/// and columns. Returns the number of removed atoms.
int strip_virtual_atoms(PointCloudMolecule& mol, int virtual_type);

}  // namespace flowbridge
