#pragma once

#include <string>
#include <vector>

#include "flowbridge/evaluation.hpp"
#include "flowbridge/molecule.hpp"

namespace flowbridge::evaluation {

/// Per-molecule feature rows:
///   n_atoms, radius_of_gyration, mean_pairwise_dist, mean_context_dist
/// plus the toy property oracles.
SampleTable molecule_feature_table(const std::vector<PointCloudMolecule>& mols, double clash_radius,
                                   int num_real_types);

/// Per-atom feature rows: radial_dist (to the context centroid),
/// nearest_context_dist; categorical column atom_type.
SampleTable atom_feature_table(const std::vector<PointCloudMolecule>& mols);

/// Pooled distances of all bonded pairs (bond type != None).
std::vector<double> bonded_distances(const std::vector<PointCloudMolecule>& mols);

/// Pooled atom-type labels as strings.
std::vector<std::string> atom_type_labels(const std::vector<PointCloudMolecule>& mols);

}  // namespace flowbridge::evaluation
