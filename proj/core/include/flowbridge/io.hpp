#pragma once

#include <map>
#include <string>
#include <vector>

#include "flowbridge/alignment.hpp"
#include "flowbridge/backbone.hpp"
#include "flowbridge/evaluation.hpp"
#include "flowbridge/molecule.hpp"

namespace flowbridge::io {

// --- complexes / datasets (JSONL, one complex per line) ---------------------

void save_dataset_jsonl(const std::string& path, const std::vector<PointCloudMolecule>& mols);
std::vector<PointCloudMolecule> load_dataset_jsonl(const std::string& path);

/// Summary statistics stored next to a dataset; consumed by training and
/// sampling (dims, p(N|M), marginals) and by reporting.
struct DatasetStats {
  int num_atom_types = 0;
  int num_bond_types = 0;
  int num_residue_labels = 0;
  int num_chi = 0;
  int n_complexes = 0;
  double clash_radius = 1.2;
  std::map<int, std::vector<double>> size_histogram;  // p(N|M) counts
  std::vector<double> size_marginal;
  std::vector<double> type_marginal;  // over real atom categories
  std::vector<double> bond_marginal;
  std::map<std::string, double> property_mean;
  std::map<std::string, double> property_sd;
};

DatasetStats compute_dataset_stats(const std::vector<PointCloudMolecule>& mols, int num_atom_types,
                                   int num_bond_types, int num_residue_labels, int num_chi,
                                   double clash_radius);
void save_stats_json(const std::string& path, const DatasetStats& stats);
DatasetStats load_stats_json(const std::string& path);

/// Conventional sidecar path for a dataset file.
std::string stats_path_for(const std::string& dataset_path);

// --- checkpoints -------------------------------------------------------------

struct TrainState {
  int epoch = 0;
  std::vector<double> momentum;
};

struct Checkpoint {
  backbone::Architecture arch;
  std::vector<double> parameters;
  bridges::Categorical type_prior;
  bridges::Categorical bond_prior;
  std::map<int, std::vector<double>> size_histogram;
  std::vector<double> size_marginal;
  TrainState train_state;
  std::string config_echo;  // JSON text of the producing configuration
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_model(const backbone::BackboneModel& model, TrainState state,
                                 std::string config_echo = {});
backbone::BackboneModel model_from_checkpoint(const Checkpoint& ckpt);

// --- generated samples --------------------------------------------------------

struct SampleRecord {
  PointCloudMolecule molecule;
  std::vector<double> sigma_tot;  // per surviving atom
  int removed_nodes = 0;
  std::map<std::string, double> properties;
};

void save_samples_jsonl(const std::string& path, const std::vector<SampleRecord>& samples);
std::vector<SampleRecord> load_samples_jsonl(const std::string& path);

// --- preference pairs ----------------------------------------------------------

void save_pairs_jsonl(const std::string& path, const std::vector<alignment::PreferencePair>& pairs);
std::vector<alignment::PreferencePair> load_pairs_jsonl(const std::string& path);

// --- sample tables (CSV + JSON schema sidecar) ----------------------------------

void save_table_csv(const std::string& path, const evaluation::SampleTable& table);
evaluation::SampleTable load_table_csv(const std::string& path);
std::string schema_path_for(const std::string& csv_path);

// --- metric reports --------------------------------------------------------------

void save_report_json(const std::string& path, const evaluation::MetricReport& report);
evaluation::MetricReport load_report_json(const std::string& path);
void save_report_csv(const std::string& path, const evaluation::MetricReport& report);

}  // namespace flowbridge::io
