#include "flowbridge/io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "flowbridge/errors.hpp"
#include "flowbridge/toydata.hpp"

namespace flowbridge::io {

using nlohmann::json;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open for writing: " + path);
  out.precision(17);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open for reading: " + path);
  return in;
}

json vec3_list_to_json(const std::vector<geometry::Vec3>& pts) {
  json arr = json::array();
  for (const auto& p : pts) arr.push_back({p.x, p.y, p.z});
  return arr;
}

std::vector<geometry::Vec3> vec3_list_from_json(const json& arr) {
  std::vector<geometry::Vec3> pts;
  for (const auto& p : arr) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
  return pts;
}

json chain_to_json(const geometry::AngleChain& chain) {
  json j;
  j["values"] = chain.angles;
  j["mask"] = std::vector<int>(chain.mask.begin(), chain.mask.end());
  std::vector<double> lengths, angles;
  for (const auto& link : chain.links) {
    lengths.push_back(link.bond_length);
    angles.push_back(link.bond_angle);
  }
  j["bond_lengths"] = lengths;
  j["bond_angles"] = angles;
  j["frame"] = vec3_list_to_json({chain.frame[0], chain.frame[1], chain.frame[2]});
  return j;
}

geometry::AngleChain chain_from_json(const json& j) {
  geometry::AngleChain chain;
  chain.angles = j.at("values").get<std::vector<double>>();
  for (int v : j.at("mask").get<std::vector<int>>()) chain.mask.push_back(static_cast<uint8_t>(v));
  const auto lengths = j.at("bond_lengths").get<std::vector<double>>();
  const auto angles = j.at("bond_angles").get<std::vector<double>>();
  for (size_t i = 0; i < lengths.size(); ++i)
    chain.links.push_back({lengths[i], angles[i]});
  const auto frame = vec3_list_from_json(j.at("frame"));
  if (frame.size() != 3) throw ConfigError("angle chain frame must have 3 points");
  chain.frame = {frame[0], frame[1], frame[2]};
  return chain;
}

json molecule_to_json(const PointCloudMolecule& mol) {
  json j;
  j["id"] = mol.id;
  j["coords"] = vec3_list_to_json(mol.coords);
  j["atom_types"] = mol.atom_types;
  const int n = mol.num_atoms();
  json bonds = json::array();
  for (int i = 0; i < n; ++i) {
    json row = json::array();
    for (int k = 0; k < n; ++k) row.push_back(mol.bond(i, k));
    bonds.push_back(std::move(row));
  }
  j["bonds"] = std::move(bonds);
  json ctx;
  ctx["coords"] = vec3_list_to_json(mol.context_coords);
  ctx["labels"] = mol.context_labels;
  if (mol.has_angles()) {
    json chains = json::array();
    for (const auto& chain : mol.context_angles) chains.push_back(chain_to_json(chain));
    ctx["angles"] = std::move(chains);
  }
  j["context"] = std::move(ctx);
  return j;
}

PointCloudMolecule molecule_from_json(const json& j) {
  PointCloudMolecule mol;
  mol.id = j.value("id", 0);
  mol.coords = vec3_list_from_json(j.at("coords"));
  mol.atom_types = j.at("atom_types").get<std::vector<int>>();
  const int n = mol.num_atoms();
  mol.bonds.assign(static_cast<size_t>(n) * n, 0);
  const json& bonds = j.at("bonds");
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) mol.bonds[static_cast<size_t>(i) * n + k] = bonds.at(i).at(k).get<int>();
  const json& ctx = j.at("context");
  mol.context_coords = vec3_list_from_json(ctx.at("coords"));
  mol.context_labels = ctx.at("labels").get<std::vector<int>>();
  if (ctx.contains("angles"))
    for (const auto& chain : ctx.at("angles")) mol.context_angles.push_back(chain_from_json(chain));
  return mol;
}

json parse_line(const std::string& line, const std::string& path, size_t lineno) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded())
    throw ConfigError("malformed JSON at " + path + ":" + std::to_string(lineno));
  return j;
}

}  // namespace

void save_dataset_jsonl(const std::string& path, const std::vector<PointCloudMolecule>& mols) {
  auto out = open_out(path);
  for (const auto& mol : mols) out << molecule_to_json(mol).dump() << '\n';
}

std::vector<PointCloudMolecule> load_dataset_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<PointCloudMolecule> mols;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    mols.push_back(molecule_from_json(parse_line(line, path, lineno)));
  }
  return mols;
}

DatasetStats compute_dataset_stats(const std::vector<PointCloudMolecule>& mols, int num_atom_types,
                                   int num_bond_types, int num_residue_labels, int num_chi,
                                   double clash_radius) {
  DatasetStats stats;
  stats.num_atom_types = num_atom_types;
  stats.num_bond_types = num_bond_types;
  stats.num_residue_labels = num_residue_labels;
  stats.num_chi = num_chi;
  stats.n_complexes = static_cast<int>(mols.size());
  stats.clash_radius = clash_radius;
  stats.type_marginal.assign(num_atom_types, 0.0);
  stats.bond_marginal.assign(num_bond_types, 0.0);

  std::map<std::string, std::vector<double>> props;
  for (const auto& mol : mols) {
    const int n = mol.num_atoms();
    auto& hist = stats.size_histogram[mol.num_context()];
    if (static_cast<int>(hist.size()) <= n) hist.resize(n + 1, 0.0);
    hist[n] += 1.0;
    for (int t : mol.atom_types) stats.type_marginal.at(t) += 1.0;
    for (int i = 0; i < n; ++i)
      for (int k = i + 1; k < n; ++k) stats.bond_marginal.at(mol.bond(i, k)) += 1.0;
    for (const auto& [name, v] :
         toydata::property_oracles(mol, clash_radius, num_atom_types - 1))
      props[name].push_back(v);
  }
  for (const auto& [m, hist] : stats.size_histogram) {
    if (hist.size() > stats.size_marginal.size()) stats.size_marginal.resize(hist.size(), 0.0);
    for (size_t i = 0; i < hist.size(); ++i) stats.size_marginal[i] += hist[i];
  }
  for (const auto& [name, values] : props) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= std::max<size_t>(1, values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= std::max<size_t>(1, values.size() - 1);
    stats.property_mean[name] = mean;
    stats.property_sd[name] = std::sqrt(var);
  }
  return stats;
}

namespace {
json histogram_to_json(const std::map<int, std::vector<double>>& hist) {
  json j = json::object();
  for (const auto& [m, counts] : hist) j[std::to_string(m)] = counts;
  return j;
}

std::map<int, std::vector<double>> histogram_from_json(const json& j) {
  std::map<int, std::vector<double>> hist;
  for (auto it = j.begin(); it != j.end(); ++it)
    hist[std::stoi(it.key())] = it.value().get<std::vector<double>>();
  return hist;
}
}  // namespace

void save_stats_json(const std::string& path, const DatasetStats& stats) {
  json j;
  j["num_atom_types"] = stats.num_atom_types;
  j["num_bond_types"] = stats.num_bond_types;
  j["num_residue_labels"] = stats.num_residue_labels;
  j["num_chi"] = stats.num_chi;
  j["n_complexes"] = stats.n_complexes;
  j["clash_radius"] = stats.clash_radius;
  j["size_histogram"] = histogram_to_json(stats.size_histogram);
  j["size_marginal"] = stats.size_marginal;
  j["type_marginal"] = stats.type_marginal;
  j["bond_marginal"] = stats.bond_marginal;
  j["property_mean"] = stats.property_mean;
  j["property_sd"] = stats.property_sd;
  open_out(path) << j.dump(2) << '\n';
}

DatasetStats load_stats_json(const std::string& path) {
  json j = json::parse(open_in(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed stats JSON: " + path);
  DatasetStats stats;
  stats.num_atom_types = j.at("num_atom_types").get<int>();
  stats.num_bond_types = j.at("num_bond_types").get<int>();
  stats.num_residue_labels = j.at("num_residue_labels").get<int>();
  stats.num_chi = j.at("num_chi").get<int>();
  stats.n_complexes = j.at("n_complexes").get<int>();
  stats.clash_radius = j.at("clash_radius").get<double>();
  stats.size_histogram = histogram_from_json(j.at("size_histogram"));
  stats.size_marginal = j.at("size_marginal").get<std::vector<double>>();
  stats.type_marginal = j.at("type_marginal").get<std::vector<double>>();
  stats.bond_marginal = j.at("bond_marginal").get<std::vector<double>>();
  stats.property_mean = j.at("property_mean").get<std::map<std::string, double>>();
  stats.property_sd = j.at("property_sd").get<std::map<std::string, double>>();
  return stats;
}

std::string stats_path_for(const std::string& dataset_path) { return dataset_path + ".stats.json"; }

// --- checkpoints -------------------------------------------------------------

namespace {
json arch_to_json(const backbone::Architecture& a) {
  json j;
  j["num_atom_types"] = a.num_atom_types;
  j["num_bond_types"] = a.num_bond_types;
  j["num_residue_labels"] = a.num_residue_labels;
  j["num_chi"] = a.num_chi;
  j["embed_dim"] = a.embed_dim;
  j["hidden_dim"] = a.hidden_dim;
  j["num_rbf"] = a.num_rbf;
  j["rbf_max"] = a.rbf_max;
  j["self_conditioning"] = a.self_conditioning;
  j["uncertainty_head"] = a.uncertainty_head;
  return j;
}

backbone::Architecture arch_from_json(const json& j) {
  backbone::Architecture a;
  a.num_atom_types = j.at("num_atom_types").get<int>();
  a.num_bond_types = j.at("num_bond_types").get<int>();
  a.num_residue_labels = j.at("num_residue_labels").get<int>();
  a.num_chi = j.at("num_chi").get<int>();
  a.embed_dim = j.at("embed_dim").get<int>();
  a.hidden_dim = j.at("hidden_dim").get<int>();
  a.num_rbf = j.at("num_rbf").get<int>();
  a.rbf_max = j.at("rbf_max").get<double>();
  a.self_conditioning = j.at("self_conditioning").get<bool>();
  a.uncertainty_head = j.at("uncertainty_head").get<bool>();
  return a;
}
}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json j;
  j["format_version"] = 1;
  j["architecture"] = arch_to_json(ckpt.arch);
  j["parameters"] = ckpt.parameters;
  j["type_prior"] = ckpt.type_prior.probs;
  j["bond_prior"] = ckpt.bond_prior.probs;
  j["size_histogram"] = histogram_to_json(ckpt.size_histogram);
  j["size_marginal"] = ckpt.size_marginal;
  j["train_state"] = {{"epoch", ckpt.train_state.epoch}, {"momentum", ckpt.train_state.momentum}};
  if (!ckpt.config_echo.empty()) {
    json echo = json::parse(ckpt.config_echo, nullptr, false);
    j["config"] = echo.is_discarded() ? json(ckpt.config_echo) : echo;
  }
  open_out(path) << j.dump() << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
  json j = json::parse(open_in(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed checkpoint JSON: " + path);
  Checkpoint ckpt;
  if (j.value("format_version", 0) != 1) throw ConfigError("unsupported checkpoint version in " + path);
  ckpt.arch = arch_from_json(j.at("architecture"));
  ckpt.parameters = j.at("parameters").get<std::vector<double>>();
  ckpt.type_prior.probs = j.at("type_prior").get<std::vector<double>>();
  ckpt.bond_prior.probs = j.at("bond_prior").get<std::vector<double>>();
  ckpt.size_histogram = histogram_from_json(j.at("size_histogram"));
  ckpt.size_marginal = j.at("size_marginal").get<std::vector<double>>();
  ckpt.train_state.epoch = j.at("train_state").at("epoch").get<int>();
  ckpt.train_state.momentum = j.at("train_state").at("momentum").get<std::vector<double>>();
  if (j.contains("config")) ckpt.config_echo = j.at("config").dump();
  return ckpt;
}

Checkpoint checkpoint_from_model(const backbone::BackboneModel& model, TrainState state,
                                 std::string config_echo) {
  Checkpoint ckpt;
  ckpt.arch = model.arch();
  ckpt.parameters = model.parameters();
  ckpt.type_prior = model.type_prior;
  ckpt.bond_prior = model.bond_prior;
  ckpt.size_histogram = model.size_histogram;
  ckpt.size_marginal = model.size_marginal;
  ckpt.train_state = std::move(state);
  ckpt.config_echo = std::move(config_echo);
  return ckpt;
}

backbone::BackboneModel model_from_checkpoint(const Checkpoint& ckpt) {
  backbone::BackboneModel model(ckpt.arch);
  if (model.num_parameters() != ckpt.parameters.size())
    throw CheckpointMismatchError("checkpoint parameter count does not match architecture");
  model.parameters() = ckpt.parameters;
  model.type_prior = ckpt.type_prior;
  model.bond_prior = ckpt.bond_prior;
  model.size_histogram = ckpt.size_histogram;
  model.size_marginal = ckpt.size_marginal;
  return model;
}

// --- generated samples ---------------------------------------------------------

void save_samples_jsonl(const std::string& path, const std::vector<SampleRecord>& samples) {
  auto out = open_out(path);
  for (const auto& s : samples) {
    json j = molecule_to_json(s.molecule);
    j["sigma_tot"] = s.sigma_tot;
    j["removed_nodes"] = s.removed_nodes;
    j["properties"] = s.properties;
    out << j.dump() << '\n';
  }
}

std::vector<SampleRecord> load_samples_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<SampleRecord> samples;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, path, lineno);
    SampleRecord rec;
    rec.molecule = molecule_from_json(j);
    rec.sigma_tot = j.value("sigma_tot", std::vector<double>{});
    rec.removed_nodes = j.value("removed_nodes", 0);
    if (j.contains("properties")) rec.properties = j.at("properties").get<std::map<std::string, double>>();
    samples.push_back(std::move(rec));
  }
  return samples;
}

// --- preference pairs ------------------------------------------------------------

void save_pairs_jsonl(const std::string& path, const std::vector<alignment::PreferencePair>& pairs) {
  auto out = open_out(path);
  for (const auto& p : pairs) {
    json j;
    j["context_id"] = p.context_id;
    j["winner"] = molecule_to_json(p.winner);
    j["loser"] = molecule_to_json(p.loser);
    j["winner_properties"] = p.winner_properties;
    j["loser_properties"] = p.loser_properties;
    out << j.dump() << '\n';
  }
}

std::vector<alignment::PreferencePair> load_pairs_jsonl(const std::string& path) {
  auto in = open_in(path);
  std::vector<alignment::PreferencePair> pairs;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const json j = parse_line(line, path, lineno);
    alignment::PreferencePair p;
    p.context_id = j.at("context_id").get<int>();
    p.winner = molecule_from_json(j.at("winner"));
    p.loser = molecule_from_json(j.at("loser"));
    p.winner_properties = j.at("winner_properties").get<std::map<std::string, double>>();
    p.loser_properties = j.at("loser_properties").get<std::map<std::string, double>>();
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// --- sample tables -----------------------------------------------------------------

std::string schema_path_for(const std::string& csv_path) { return csv_path + ".schema.json"; }

void save_table_csv(const std::string& path, const evaluation::SampleTable& table) {
  table.validate();
  std::vector<std::string> cont_names, cat_names;
  for (const auto& [name, _] : table.continuous) cont_names.push_back(name);
  for (const auto& [name, _] : table.categorical) cat_names.push_back(name);

  auto out = open_out(path);
  bool first = true;
  for (const auto& n : cont_names) {
    out << (first ? "" : ",") << n;
    first = false;
  }
  for (const auto& n : cat_names) {
    out << (first ? "" : ",") << n;
    first = false;
  }
  out << '\n';
  const size_t rows = table.rows();
  for (size_t r = 0; r < rows; ++r) {
    first = true;
    for (const auto& n : cont_names) {
      out << (first ? "" : ",") << table.continuous.at(n)[r];
      first = false;
    }
    for (const auto& n : cat_names) {
      out << (first ? "" : ",") << table.categorical.at(n)[r];
      first = false;
    }
    out << '\n';
  }

  json schema;
  schema["continuous"] = cont_names;
  schema["categorical"] = cat_names;
  open_out(schema_path_for(path)) << schema.dump(2) << '\n';
}

evaluation::SampleTable load_table_csv(const std::string& path) {
  json schema = json::parse(open_in(schema_path_for(path)), nullptr, false);
  if (schema.is_discarded()) throw ConfigError("malformed schema sidecar for " + path);
  const auto cont = schema.at("continuous").get<std::vector<std::string>>();
  const auto cat = schema.at("categorical").get<std::vector<std::string>>();

  auto in = open_in(path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty CSV: " + path);

  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(item);
    return out;
  };
  const std::vector<std::string> header = split(line);
  if (header.size() != cont.size() + cat.size())
    throw ConfigError("CSV header does not match schema: " + path);

  evaluation::SampleTable table;
  for (const auto& n : cont) table.continuous[n] = {};
  for (const auto& n : cat) table.categorical[n] = {};

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    if (cells.size() != header.size()) throw ConfigError("ragged CSV row in " + path);
    for (size_t c = 0; c < header.size(); ++c) {
      const std::string& name = header[c];
      if (table.continuous.count(name))
        table.continuous[name].push_back(std::stod(cells[c]));
      else if (table.categorical.count(name))
        table.categorical[name].push_back(cells[c]);
      else
        throw ConfigError("CSV column not in schema: " + name);
    }
  }
  table.validate();
  return table;
}

// --- metric reports ------------------------------------------------------------------

void save_report_json(const std::string& path, const evaluation::MetricReport& report) {
  json metrics = json::object();
  for (const auto& [name, entry] : report.entries) {
    json e;
    e["value"] = entry.value;
    if (entry.boot_mean) e["boot_mean"] = *entry.boot_mean;
    if (entry.boot_std) e["boot_std"] = *entry.boot_std;
    if (!entry.p_values.empty()) e["p_values"] = entry.p_values;
    metrics[name] = std::move(e);
  }
  json j;
  j["metrics"] = std::move(metrics);
  open_out(path) << j.dump(2) << '\n';
}

evaluation::MetricReport load_report_json(const std::string& path) {
  json j = json::parse(open_in(path), nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed report JSON: " + path);
  evaluation::MetricReport report;
  for (auto it = j.at("metrics").begin(); it != j.at("metrics").end(); ++it) {
    evaluation::MetricEntry e;
    e.value = it.value().at("value").get<double>();
    if (it.value().contains("boot_mean")) e.boot_mean = it.value().at("boot_mean").get<double>();
    if (it.value().contains("boot_std")) e.boot_std = it.value().at("boot_std").get<double>();
    if (it.value().contains("p_values"))
      e.p_values = it.value().at("p_values").get<std::map<std::string, double>>();
    report.entries[it.key()] = std::move(e);
  }
  return report;
}

void save_report_csv(const std::string& path, const evaluation::MetricReport& report) {
  auto out = open_out(path);
  out << "metric,value,boot_mean,boot_std\n";
  for (const auto& [name, entry] : report.entries) {
    out << name << ',' << entry.value << ',';
    if (entry.boot_mean) out << *entry.boot_mean;
    out << ',';
    if (entry.boot_std) out << *entry.boot_std;
    out << '\n';
  }
}

}  // namespace flowbridge::io
