#include "flowbridge/molecule.hpp"

#include <stdexcept>

namespace flowbridge {

using geometry::Vec3;

namespace {
Vec3 centroid(const std::vector<Vec3>& pts) {
  Vec3 c{};
  if (pts.empty()) return c;
  for (const Vec3& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}
}  // namespace

Vec3 PointCloudMolecule::ligand_centroid() const { return centroid(coords); }
Vec3 PointCloudMolecule::context_centroid() const { return centroid(context_coords); }

void PointCloudMolecule::validate(int num_atom_types, int num_bond_types, int num_residue_labels) const {
  const size_t n = coords.size();
  if (atom_types.size() != n) throw std::invalid_argument("molecule: atom_types length mismatch");
  if (bonds.size() != n * n) throw std::invalid_argument("molecule: bond matrix size mismatch");
  if (context_labels.size() != context_coords.size())
    throw std::invalid_argument("molecule: context label length mismatch");
  if (!context_angles.empty() && context_angles.size() != context_coords.size())
    throw std::invalid_argument("molecule: context angle chain count mismatch");

  const int virtual_type = num_atom_types - 1;
  for (int t : atom_types)
    if (t < 0 || t >= num_atom_types) throw std::invalid_argument("molecule: atom type out of range");
  for (int l : context_labels)
    if (l < 0 || l >= num_residue_labels) throw std::invalid_argument("molecule: residue label out of range");

  for (size_t i = 0; i < n; ++i) {
    if (bonds[i * n + i] != 0) throw std::invalid_argument("molecule: nonzero bond diagonal");
    for (size_t j = 0; j < n; ++j) {
      const int b = bonds[i * n + j];
      if (b < 0 || b >= num_bond_types) throw std::invalid_argument("molecule: bond type out of range");
      if (b != bonds[j * n + i]) throw std::invalid_argument("molecule: asymmetric bond matrix");
      if (b != 0 && (atom_types[i] == virtual_type || atom_types[j] == virtual_type))
        throw std::invalid_argument("molecule: virtual atom with a non-None bond");
    }
  }

  for (const auto& chain : context_angles) {
    if (chain.mask.size() != chain.angles.size() || chain.links.size() != chain.angles.size())
      throw std::invalid_argument("molecule: inconsistent angle chain");
    for (size_t s = 0; s < chain.angles.size(); ++s) {
      if (!chain.mask[s]) continue;
      if (chain.angles[s] < -geometry::kPi || chain.angles[s] >= geometry::kPi)
        throw std::invalid_argument("molecule: unwrapped torsion angle");
    }
  }
}

int strip_virtual_atoms(PointCloudMolecule& mol, int virtual_type) {
  const int n = mol.num_atoms();
  std::vector<int> keep;
  keep.reserve(n);
  for (int i = 0; i < n; ++i)
    if (mol.atom_types[i] != virtual_type) keep.push_back(i);
  const int removed = n - static_cast<int>(keep.size());
  if (removed == 0) return 0;

  std::vector<Vec3> coords(keep.size());
  std::vector<int> types(keep.size());
  std::vector<int> bonds(keep.size() * keep.size(), 0);
  for (size_t a = 0; a < keep.size(); ++a) {
    coords[a] = mol.coords[keep[a]];
    types[a] = mol.atom_types[keep[a]];
    for (size_t b = 0; b < keep.size(); ++b) bonds[a * keep.size() + b] = mol.bond(keep[a], keep[b]);
  }
  mol.coords = std::move(coords);
  mol.atom_types = std::move(types);
  mol.bonds = std::move(bonds);
  return removed;
}

}  // namespace flowbridge
