#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "flowbridge/backbone.hpp"
#include "flowbridge/molecule.hpp"

namespace flowbridge::alignment {

/// Winner/loser molecules generated for the same context.
struct PreferencePair {
  PointCloudMolecule winner;
  PointCloudMolecule loser;
  int context_id = 0;
  std::map<std::string, double> winner_properties;
  std::map<std::string, double> loser_properties;
};

/// One preference criterion: the winner must exceed the loser by more than
/// `threshold` in the stated direction.
struct PropertySpec {
  std::string name;
  bool higher_is_better = true;
  double threshold = 0.0;
};

using PropertyOracle = std::function<std::map<std::string, double>(const PointCloudMolecule&)>;

struct PairBuildConfig {
  int samples_per_context = 8;
  std::vector<PropertySpec> properties;  // with several entries the winner must satisfy all of them
  uint64_t seed = 0;
  backbone::GenerateOptions generate;
};

struct PairBuildResult {
  std::vector<PreferencePair> pairs;
  int skipped_contexts = 0;  // contexts without a single qualifying pair
};

/// Samples the reference model per context and pairs samples whose property
/// gaps exceed the thresholds.
PairBuildResult build_preference_dataset(const backbone::BackboneModel& ref_model,
                                         const std::vector<PointCloudMolecule>& contexts,
                                         const PropertyOracle& oracle, const PairBuildConfig& cfg);

struct AlignmentConfig {
  double beta = 100.0;
  double lambda_coord = 1.0;
  double lambda_atom = 0.5;
  double lambda_bond = 0.5;
  double lambda_w = 1.0;
  double lambda_l = 0.2;
  double lambda_mdpa = 1.0;

  backbone::LossWeights reg_weights;  // weights of the full-loss regularizers
  backbone::NoiseConfig noise;
  int n_max_virtual = 10;

  int epochs = 4;
  double learning_rate = 0.005;
  double momentum = 0.9;
  double grad_clip = 10.0;  // global L2 norm clip; 0 disables
  uint64_t seed = 0;
  double divergence_threshold = 1e6;

  // Checkpoint selection by structural validity on validation contexts.
  int validity_samples = 32;
  int validity_steps = 50;
  double clash_radius = 1.2;
  double max_bond_length = 2.6;
};

struct MdpaBreakdown {
  double total = 0.0;
  double preference_term = 0.0;  // -log sigmoid(...)
  double winner_reg = 0.0;       // L^w(phi)
  double loser_reg = 0.0;        // L^l(phi)
  double delta_coord = 0.0;
  double delta_atom = 0.0;
  double delta_bond = 0.0;
};

struct MdpaLossGraph {
  autodiff::Graph graph;
  autodiff::Graph::Id total = -1;
  MdpaBreakdown breakdown;
  bool recorded = false;
};

/// Multi-domain preference loss on shared noise draws:
/// -log sigmoid(-beta * t * sum_c lambda_c (Delta_c^w - Delta_c^l))
///   + lambda_w L^w(phi) + lambda_l L^l(phi),
/// with Delta_c^{w/l} = L_c^{w/l}(phi) - L_c^{w/l}(theta) evaluated on
/// identical noisy states for both models. The reference model is never
/// updated. The pair molecules receive the same virtual-node augmentation as
/// in base training (driven by `rng`).
MdpaLossGraph mdpa_loss(const backbone::BackboneModel& aligned, const backbone::BackboneModel& ref,
                        const PreferencePair& pair, double t, Rng& rng, const AlignmentConfig& cfg);

/// Structural validity of a generated toy molecule: nonempty, clash-free
/// against its context, and all bonded pairs within max_bond_length.
bool is_valid_molecule(const PointCloudMolecule& mol, double clash_radius, double max_bond_length);

struct AlignResult {
  backbone::BackboneModel model;
  std::vector<double> loss_history;
  std::vector<double> validity_history;  // one entry per epoch
  int selected_epoch = -1;
};

/// Copies the reference and trains it on the MDPA loss; after each epoch the
/// candidate is scored by validity on the validation contexts and the best
/// checkpoint is returned.
AlignResult align(const backbone::BackboneModel& ref_model, const std::vector<PreferencePair>& pairs,
                  const std::vector<PointCloudMolecule>& validation_contexts, const AlignmentConfig& cfg);

/// Fine-tuning baseline: the same loop with lambda_mdpa = lambda_l = 0,
/// which reduces the objective to lambda_w * L^w(phi) on winners.
AlignResult finetune(const backbone::BackboneModel& ref_model, const std::vector<PreferencePair>& pairs,
                     const std::vector<PointCloudMolecule>& validation_contexts,
                     const AlignmentConfig& cfg);

}  // namespace flowbridge::alignment
