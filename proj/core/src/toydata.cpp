#include "flowbridge/toydata.hpp"

#include <algorithm>
#include <cmath>

#include "flowbridge/errors.hpp"

namespace flowbridge::toydata {

using geometry::Vec3;

void ToyDatasetConfig::validate() const {
  if (n_complexes < 1) throw ConfigError("toydata: n_complexes must be >= 1");
  if (num_atom_types < 3) throw ConfigError("toydata: need num_atom_types >= 3 (room for virtual)");
  if (num_bond_types < 2) throw ConfigError("toydata: need num_bond_types >= 2 (room for None)");
  if (m_min < 1 || m_max < m_min) throw ConfigError("toydata: bad context size range");
  if (num_residue_labels < 1) throw ConfigError("toydata: need at least one residue label");
  if (num_chi < 0 || angle_modes < 1) throw ConfigError("toydata: bad angle configuration");
  if (n_min_atoms < 1 || n_max_atoms < n_min_atoms) throw ConfigError("toydata: bad ligand size range");
  if (clash_radius < 0.0) throw ConfigError("toydata: negative clash radius");
}

AngleMixture angle_mixture(const ToyDatasetConfig& config, int label, int slot) {
  AngleMixture mix;
  mix.sd = config.angle_mode_sd;
  const int k = config.angle_modes;
  mix.modes.resize(k);
  mix.weights.resize(k);
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    mix.modes[j] =
        geometry::wrap(-geometry::kPi + (j + 0.5) * geometry::kTwoPi / k + 0.4 * label + 0.7 * slot);
    mix.weights[j] = 1.0 + ((label + j) % 2);
    total += mix.weights[j];
  }
  for (double& w : mix.weights) w /= total;
  return mix;
}

int valid_angle_slots(const ToyDatasetConfig& config, int label) {
  if (config.num_chi == 0) return 0;
  return 1 + label % config.num_chi;
}

namespace {

Vec3 random_unit(Rng& rng) {
  while (true) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(v);
    if (n > 1e-8) return v / n;
  }
}

bool clash_free(const Vec3& p, const std::vector<Vec3>& context, double radius) {
  for (const Vec3& c : context)
    if (distance(p, c) < radius) return false;
  return true;
}

bool separated(const Vec3& p, const std::vector<Vec3>& atoms, double min_sep) {
  for (const Vec3& a : atoms)
    if (distance(p, a) < min_sep) return false;
  return true;
}

PointCloudMolecule generate_complex(const ToyDatasetConfig& cfg, int index, Rng rng) {
  PointCloudMolecule mol;
  mol.id = index;

  // Context shell, centered exactly on its centroid.
  const int m = static_cast<int>(rng.uniform_int(cfg.m_min, cfg.m_max));
  mol.context_coords.resize(m);
  mol.context_labels.resize(m);
  for (int j = 0; j < m; ++j) {
    const double radius = rng.uniform(cfg.context_radius_min, cfg.context_radius_max);
    mol.context_coords[j] = random_unit(rng) * radius;
    mol.context_labels[j] = static_cast<int>(rng.uniform_int(0, cfg.num_residue_labels - 1));
  }
  const Vec3 ctx_com = mol.context_centroid();
  for (Vec3& c : mol.context_coords) c = c - ctx_com;

  // Ligand size coupled to the context size.
  const double raw = cfg.size_base + cfg.size_slope * m + cfg.size_noise_sd * rng.normal();
  const int n = std::clamp(static_cast<int>(std::lround(raw)), cfg.n_min_atoms, cfg.n_max_atoms);

  // Random-walk placement inside the pocket.
  std::vector<Vec3> atoms;
  atoms.reserve(n);
  int retries = 0;
  while (static_cast<int>(atoms.size()) < n) {
    Vec3 candidate;
    if (atoms.empty()) {
      candidate = Vec3{0.4 * rng.normal(), 0.4 * rng.normal(), 0.4 * rng.normal()};
    } else {
      const int parent = static_cast<int>(rng.uniform_int(0, static_cast<int64_t>(atoms.size()) - 1));
      const double len = std::max(0.8, rng.normal(cfg.bond_length_mean, cfg.bond_length_sd));
      candidate = atoms[parent] + random_unit(rng) * len;
    }
    if (clash_free(candidate, mol.context_coords, cfg.clash_radius) &&
        separated(candidate, atoms, cfg.min_atom_separation)) {
      atoms.push_back(candidate);
      continue;
    }
    if (++retries > cfg.max_placement_retries)
      throw ConfigError("toydata: could not place ligand atoms without clashes (complex " +
                        std::to_string(index) + ")");
  }
  mol.coords = std::move(atoms);

  // Types by radial position; the last category stays reserved for virtual.
  const int real_types = cfg.num_atom_types - 1;
  mol.atom_types.resize(n);
  for (int i = 0; i < n; ++i) {
    const int band = static_cast<int>(norm(mol.coords[i]) / cfg.type_band_width);
    mol.atom_types[i] = std::min(band, real_types - 1);
  }

  // Bonds by distance band.
  mol.bonds.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double d = distance(mol.coords[i], mol.coords[j]);
      int b = 0;
      if (d < cfg.bond_double_max && cfg.num_bond_types > 2)
        b = 2;
      else if (d < cfg.bond_single_max)
        b = 1;
      mol.set_bond(i, j, b);
    }

  // Context torsion chains from label-indexed wrapped-Gaussian mixtures.
  if (cfg.num_chi > 0) {
    mol.context_angles.resize(m);
    for (int j = 0; j < m; ++j) {
      geometry::AngleChain chain;
      chain.angles.assign(cfg.num_chi, 0.0);
      chain.mask.assign(cfg.num_chi, 0);
      chain.links.assign(cfg.num_chi, geometry::LinkGeometry{});
      const Vec3 p = mol.context_coords[j];
      chain.frame = geometry::Frame{p + Vec3{-2.5, 0.5, 0.0}, p + Vec3{-1.3, 0.0, 0.0}, p};
      const int valid = valid_angle_slots(cfg, mol.context_labels[j]);
      for (int s = 0; s < valid && s < cfg.num_chi; ++s) {
        const AngleMixture mix = angle_mixture(cfg, mol.context_labels[j], s);
        const int mode = rng.categorical(mix.weights);
        chain.angles[s] = geometry::wrap(mix.modes[mode] + mix.sd * rng.normal());
        chain.mask[s] = 1;
      }
      mol.context_angles[j] = std::move(chain);
    }
  }

  return mol;
}

}  // namespace

std::vector<PointCloudMolecule> generate_dataset(const ToyDatasetConfig& config) {
  config.validate();
  const Rng root(config.seed);
  std::vector<PointCloudMolecule> out;
  out.reserve(config.n_complexes);
  for (int i = 0; i < config.n_complexes; ++i)
    out.push_back(generate_complex(config, i, root.child(static_cast<uint64_t>(i))));
  return out;
}

double radius_of_gyration(const PointCloudMolecule& molecule) {
  const int n = molecule.num_atoms();
  if (n == 0) return 0.0;
  const Vec3 com = molecule.ligand_centroid();
  double acc = 0.0;
  for (const Vec3& x : molecule.coords) {
    const Vec3 d = x - com;
    acc += dot(d, d);
  }
  return std::sqrt(acc / n);
}

std::map<std::string, double> property_oracles(const PointCloudMolecule& molecule, double clash_radius,
                                               int num_real_types) {
  std::map<std::string, double> props;
  props["compactness"] = -radius_of_gyration(molecule);

  // Entropy gap of the real-type histogram: 0 when uniform, negative otherwise.
  const int n = molecule.num_atoms();
  std::map<int, int> counts;
  for (int t : molecule.atom_types) counts[t] += 1;
  const int k = std::max(2, num_real_types);
  double entropy = 0.0;
  if (n > 0) {
    for (const auto& [type, c] : counts) {
      const double p = static_cast<double>(c) / n;
      entropy -= p * std::log(p);
    }
  }
  props["type_balance"] = n > 0 ? entropy - std::log(static_cast<double>(k)) : 0.0;

  int clashing = 0;
  for (const Vec3& x : molecule.coords)
    if (!clash_free(x, molecule.context_coords, clash_radius)) ++clashing;
  props["clash_score"] = n > 0 ? static_cast<double>(clashing) / n : 0.0;
  return props;
}

}  // namespace flowbridge::toydata
