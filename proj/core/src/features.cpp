#include "flowbridge/features.hpp"

#include <cmath>
#include <limits>

#include "flowbridge/toydata.hpp"

namespace flowbridge::evaluation {

using geometry::Vec3;

SampleTable molecule_feature_table(const std::vector<PointCloudMolecule>& mols, double clash_radius,
                                   int num_real_types) {
  SampleTable table;
  auto& n_atoms = table.continuous["n_atoms"];
  auto& r_gyr = table.continuous["radius_of_gyration"];
  auto& mean_pair = table.continuous["mean_pairwise_dist"];
  auto& mean_ctx = table.continuous["mean_context_dist"];
  auto& compactness = table.continuous["compactness"];
  auto& type_balance = table.continuous["type_balance"];
  auto& clash = table.continuous["clash_score"];

  for (const auto& mol : mols) {
    const int n = mol.num_atoms();
    n_atoms.push_back(n);
    r_gyr.push_back(toydata::radius_of_gyration(mol));

    double pair_acc = 0.0;
    int pair_count = 0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        pair_acc += distance(mol.coords[i], mol.coords[j]);
        ++pair_count;
      }
    mean_pair.push_back(pair_count > 0 ? pair_acc / pair_count : 0.0);

    double ctx_acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : mol.context_coords) best = std::min(best, distance(mol.coords[i], c));
      ctx_acc += std::isfinite(best) ? best : 0.0;
    }
    mean_ctx.push_back(n > 0 ? ctx_acc / n : 0.0);

    const auto props = toydata::property_oracles(mol, clash_radius, num_real_types);
    compactness.push_back(props.at("compactness"));
    type_balance.push_back(props.at("type_balance"));
    clash.push_back(props.at("clash_score"));
  }
  return table;
}

SampleTable atom_feature_table(const std::vector<PointCloudMolecule>& mols) {
  SampleTable table;
  auto& radial = table.continuous["radial_dist"];
  auto& nearest = table.continuous["nearest_context_dist"];
  auto& types = table.categorical["atom_type"];

  for (const auto& mol : mols) {
    const Vec3 center = mol.num_context() > 0 ? mol.context_centroid() : mol.ligand_centroid();
    for (int i = 0; i < mol.num_atoms(); ++i) {
      radial.push_back(distance(mol.coords[i], center));
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : mol.context_coords) best = std::min(best, distance(mol.coords[i], c));
      nearest.push_back(std::isfinite(best) ? best : 0.0);
      types.push_back(std::to_string(mol.atom_types[i]));
    }
  }
  return table;
}

std::vector<double> bonded_distances(const std::vector<PointCloudMolecule>& mols) {
  std::vector<double> out;
  for (const auto& mol : mols) {
    const int n = mol.num_atoms();
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (mol.bond(i, j) != 0) out.push_back(distance(mol.coords[i], mol.coords[j]));
  }
  return out;
}

std::vector<std::string> atom_type_labels(const std::vector<PointCloudMolecule>& mols) {
  std::vector<std::string> out;
  for (const auto& mol : mols)
    for (int t : mol.atom_types) out.push_back(std::to_string(t));
  return out;
}

}  // namespace flowbridge::evaluation
