#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowbridge/autodiff.hpp"
#include "flowbridge/bridges.hpp"
#include "flowbridge/molecule.hpp"
#include "flowbridge/rng.hpp"

namespace flowbridge::backbone {

using autodiff::Graph;

/// Fixed dense architecture. Node features are type embeddings plus time;
/// geometry enters only through radial-basis pair distances, so every head is
/// invariant to global translations; the velocity head is assembled from
/// weighted difference vectors and therefore rotates with the inputs.
struct Architecture {
  int num_atom_types = 5;  // virtual category is the last index
  int num_bond_types = 3;  // "None" is index 0
  int num_residue_labels = 4;
  int num_chi = 2;  // torsion slots per context point (0 disables the angle head)
  int embed_dim = 32;
  int hidden_dim = 32;
  int num_rbf = 8;
  double rbf_max = 8.0;
  bool self_conditioning = false;
  bool uncertainty_head = true;

  int virtual_type() const { return num_atom_types - 1; }
  bool operator==(const Architecture&) const = default;
};

struct LossWeights {
  double lambda_coord = 1.0;
  double lambda_chi = 1.0;
  double lambda_atom = 1.0;
  double lambda_bond = 1.0;
  double lambda_reg = 10.0;  // weight of the |sigma^2 - 1|^2 uncertainty regularizer
};

/// Named slice of the flat parameter vector.
struct ParamSlice {
  size_t offset = 0;
  int rows = 0;
  int cols = 0;
  size_t count() const { return static_cast<size_t>(rows) * cols; }
};

class BackboneModel {
 public:
  explicit BackboneModel(const Architecture& arch);

  const Architecture& arch() const { return arch_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  size_t num_parameters() const { return params_.size(); }

  /// Small random init, scaled per-layer by 1/sqrt(fan_in).
  void init_random(Rng& rng, double scale = 1.0);

  const std::map<std::string, ParamSlice>& layers() const { return layers_; }
  const ParamSlice& layer(const std::string& name) const;

  /// Categorical priors used for bridge starting states during generation and
  /// noisy-draw construction. Defaults are uniform.
  bridges::Categorical type_prior;
  bridges::Categorical bond_prior;

  /// p(N|M): molecule-size histogram per context size, with a marginal
  /// fallback. Counts, not normalized.
  std::map<int, std::vector<double>> size_histogram;
  std::vector<double> size_marginal;

 private:
  void register_layer(const std::string& name, int rows, int cols);

  Architecture arch_;
  std::map<std::string, ParamSlice> layers_;
  std::vector<double> params_;
};

/// Previous-step head outputs for self-conditioning; zero matrices when
/// absent.
struct SelfCondInput {
  Matrix type_probs;  // K_a x n
  Matrix bond_probs;  // K_b x n_pairs
};

/// Noisy system state presented to the network.
struct ModelInput {
  std::vector<geometry::Vec3> coords;  // n, includes virtual nodes
  std::vector<int> atom_types;         // n, current bridge state
  std::vector<int> pair_bonds;         // unordered pairs i<j, current bridge state
  std::vector<geometry::Vec3> context_coords;
  std::vector<int> context_labels;
  std::vector<double> context_angles;  // m * num_chi, wrapped; 0 where masked
  std::vector<uint8_t> angle_mask;     // m * num_chi
  double t = 0.0;
  std::optional<SelfCondInput> prev;

  int num_atoms() const { return static_cast<int>(coords.size()); }
  int num_context() const { return static_cast<int>(context_coords.size()); }
  int num_pairs() const { return num_atoms() * (num_atoms() - 1) / 2; }
};

/// Flattened unordered-pair index (i < j).
int pair_index(int i, int j, int n);

/// Head outputs as graph ids on a caller-owned tape.
struct Heads {
  Graph::Id velocity = -1;        // 3 x n
  Graph::Id angle_velocity = -1;  // num_chi x m (-1 when num_chi == 0 or m == 0)
  Graph::Id atom_logits = -1;     // K_a x n
  Graph::Id atom_probs = -1;
  Graph::Id bond_logits = -1;     // K_b x n_pairs (-1 when n < 2)
  Graph::Id bond_probs = -1;
  Graph::Id log_variance = -1;    // 1 x n
};

/// Records the forward computation on `g`. Deterministic in (parameters,
/// input); all outputs finite for finite parameters.
Heads forward(Graph& g, const BackboneModel& model, const ModelInput& input);

/// Convenience wrapper owning its tape.
struct ForwardResult {
  Graph graph;
  Heads heads;
};
ForwardResult forward(const BackboneModel& model, const ModelInput& input);

/// Per-atom uncertainty-aware flow matching loss:
/// (d/2) log s2 + |v_pred - v_true|^2 / (2 s2) + (lambda/2)(s2 - 1)^2 with
/// s2 = exp(log_var).
double fm_ood_loss(const std::vector<double>& v_pred, const std::vector<double>& v_true, double log_var,
                   double lambda_reg);

/// Noise configuration shared by training and alignment.
struct NoiseConfig {
  double sigma = 0.0;    // Euclidean conditional-path spread
  int scheduler_k = 3;   // torus scheduler exponent
  int bridge_steps = 50; // training-time bridge grid
};

/// Materialized noisy state plus conditional targets for one sample at one t.
struct NoisyDraw {
  ModelInput input;
  Matrix v_true;    // 3 x n
  Matrix chi_dot;   // num_chi x m
  Matrix chi_mask;  // num_chi x m, 0/1
  std::vector<int> atom_y;  // true end-point types
  std::vector<int> bond_y;  // true end-point bond types per pair
  int bridge_index = 0;     // snapped departure index for the bridge terms
  double step_beta = 1.0;
  int bridge_steps = 0;
};

/// Draws priors and intermediate states for `sample` at time t. The sample
/// must already contain any virtual nodes.
NoisyDraw draw_noisy_state(const BackboneModel& model, const PointCloudMolecule& sample, double t,
                           const NoiseConfig& noise, Rng& rng);

/// Per-domain loss terms as graph ids (all scalars).
struct LossTerms {
  Graph::Id coord = -1;  // FM-OOD when the architecture has the uncertainty head, else plain CFM
  Graph::Id coord_plain = -1;  // always the plain |v - v_true|^2 mean (used by alignment)
  Graph::Id chi = -1;
  Graph::Id atom = -1;
  Graph::Id bond = -1;
};

/// Builds the per-domain losses for `draw` on an existing tape.
LossTerms build_loss_terms(Graph& g, const BackboneModel& model, const NoisyDraw& draw,
                           const LossWeights& weights);

/// Weighted total of the per-domain terms.
Graph::Id combine_loss(Graph& g, const LossTerms& terms, const LossWeights& weights);

struct LossBreakdown {
  double total = 0.0;
  double coord = 0.0;
  double chi = 0.0;
  double atom = 0.0;
  double bond = 0.0;
};

/// One evaluation of the combined training loss; owns the tape so gradients
/// can be pulled afterwards.
struct LossGraph {
  Graph graph;
  Graph::Id total = -1;
  LossBreakdown breakdown;
  bool recorded = false;
};

/// Draws a noisy state and evaluates the combined loss at time t.
LossGraph combined_loss(const BackboneModel& model, const PointCloudMolecule& sample, double t,
                        const NoiseConfig& noise, const LossWeights& weights, Rng& rng);

/// Gradient of a recorded loss with respect to all parameters.
std::vector<double> backward(const BackboneModel& model, LossGraph& loss);

/// Appends n_virt ~ U{0..n_max} disconnected virtual atoms at the ligand
/// center of mass.
void add_virtual_nodes(PointCloudMolecule& sample, int n_max, int virtual_type, Rng& rng);

/// Draws N from p(N|M=context_size) (marginal fallback) and adds n_max/2
/// computational nodes. Throws ConfigError when no histogram is available.
int sample_size(int context_size, const std::map<int, std::vector<double>>& histogram,
                const std::vector<double>& marginal, int n_max, Rng& rng);

struct TrainConfig {
  int epochs = 10;
  double learning_rate = 0.02;
  double momentum = 0.9;
  double grad_clip = 10.0;  // global L2 norm clip; 0 disables
  uint64_t seed = 0;
  int n_max_virtual = 10;
  double self_cond_drop = 0.5;  // probability of zeroing the previous prediction
  NoiseConfig noise;
  LossWeights weights;
  double divergence_threshold = 1e6;
  int start_epoch = 0;  // resume offset; RNG streams are indexed by epoch
};

struct TrainResult {
  std::vector<double> loss_history;  // one smoothed-in-order entry per step
  std::vector<double> momentum_state;
  int end_epoch = 0;
};

/// Momentum gradient descent over the dataset. Deterministic in
/// (cfg.seed, cfg.start_epoch); resuming from a checkpointed epoch reproduces
/// the uninterrupted run. Throws TrainingDivergedError when the loss exceeds
/// the divergence threshold.
TrainResult train(BackboneModel& model, const std::vector<PointCloudMolecule>& dataset,
                  const TrainConfig& cfg, const std::vector<double>* momentum_init = nullptr);

/// Estimates type/bond priors and the size histogram from a dataset.
/// Marginal priors mix in the virtual mass implied by n_max_virtual.
void fit_dataset_statistics(BackboneModel& model, const std::vector<PointCloudMolecule>& dataset,
                            int n_max_virtual, bool marginal_priors = true);

struct GenerateOptions {
  int n_steps = 500;
  /// Node budget: <0 draws from p(N|M) + n_max/2; >=0 uses the ground-truth
  /// ligand size plus this many extra nodes.
  int extra_nodes = -1;
  int n_max_virtual = 10;
  bool fixed_ligand = false;  // ground-truth ligand fields; the model drives only angles
  bool self_conditioning = false;
  int scheduler_k = 3;
};

struct GeneratedSample {
  PointCloudMolecule molecule;  // virtual atoms stripped
  std::vector<double> sigma_tot;  // per surviving atom
  std::vector<double> context_angles;  // final wrapped angles, m * num_chi
  int removed_nodes = 0;
};

/// Jointly integrates the coordinate flow, the angle flow and the type/bond
/// bridges over a shared uniform grid, then strips virtual atoms.
GeneratedSample generate(const BackboneModel& model, const PointCloudMolecule& context,
                         const GenerateOptions& opts, Rng& rng);

}  // namespace flowbridge::backbone
