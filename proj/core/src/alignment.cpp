#include "flowbridge/alignment.hpp"

#include <algorithm>
#include <cmath>

#include "flowbridge/errors.hpp"

namespace flowbridge::alignment {

using autodiff::Graph;
using backbone::BackboneModel;
using backbone::LossTerms;
using backbone::NoisyDraw;

PairBuildResult build_preference_dataset(const BackboneModel& ref_model,
                                         const std::vector<PointCloudMolecule>& contexts,
                                         const PropertyOracle& oracle, const PairBuildConfig& cfg) {
  if (cfg.properties.empty()) throw ConfigError("build_preference_dataset: no property specs");
  if (cfg.samples_per_context < 2)
    throw ConfigError("build_preference_dataset: need at least two samples per context");

  // +1 when a beats b on every property, -1 when b beats a, else 0.
  auto compare = [&](const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    bool a_wins_all = true, b_wins_all = true;
    for (const auto& spec : cfg.properties) {
      const double va = a.at(spec.name), vb = b.at(spec.name);
      const double gap = spec.higher_is_better ? va - vb : vb - va;
      if (!(gap > spec.threshold)) a_wins_all = false;
      if (!(-gap > spec.threshold)) b_wins_all = false;
    }
    if (a_wins_all) return 1;
    if (b_wins_all) return -1;
    return 0;
  };

  const Rng root(cfg.seed);
  PairBuildResult result;
  for (size_t c = 0; c < contexts.size(); ++c) {
    std::vector<PointCloudMolecule> samples;
    std::vector<std::map<std::string, double>> props;
    for (int s = 0; s < cfg.samples_per_context; ++s) {
      Rng rng = root.child(c, static_cast<uint64_t>(s));
      backbone::GeneratedSample gen = backbone::generate(ref_model, contexts[c], cfg.generate, rng);
      props.push_back(oracle(gen.molecule));
      samples.push_back(std::move(gen.molecule));
    }
    bool found = false;
    for (size_t i = 0; i < samples.size(); ++i)
      for (size_t j = i + 1; j < samples.size(); ++j) {
        const int cmp = compare(props[i], props[j]);
        if (cmp == 0) continue;
        PreferencePair pair;
        const size_t w = cmp > 0 ? i : j;
        const size_t l = cmp > 0 ? j : i;
        pair.winner = samples[w];
        pair.loser = samples[l];
        pair.winner_properties = props[w];
        pair.loser_properties = props[l];
        pair.context_id = contexts[c].id;
        result.pairs.push_back(std::move(pair));
        found = true;
      }
    if (!found) ++result.skipped_contexts;
  }
  return result;
}

namespace {

struct DomainLosses {
  double coord = 0.0;
  double atom = 0.0;
  double bond = 0.0;
};

/// Loss-term values for a frozen model (no gradient bookkeeping leaks into the
/// caller's tape; the reference shares parameter offsets with the aligned
/// model, so its terms must live on a separate graph).
DomainLosses frozen_losses(const BackboneModel& model, const NoisyDraw& draw,
                           const backbone::LossWeights& weights) {
  Graph g;
  const LossTerms terms = backbone::build_loss_terms(g, model, draw, weights);
  DomainLosses out;
  out.coord = g.scalar_value(terms.coord_plain);
  out.atom = g.scalar_value(terms.atom);
  out.bond = g.scalar_value(terms.bond);
  return out;
}

}  // namespace

MdpaLossGraph mdpa_loss(const BackboneModel& aligned, const BackboneModel& ref,
                        const PreferencePair& pair, double t, Rng& rng, const AlignmentConfig& cfg) {
  if (!(aligned.arch() == ref.arch()))
    throw CheckpointMismatchError("mdpa_loss: aligned and reference architectures differ");

  // Identical augmentation and noise draws for both models; the reference
  // priors drive the categorical draws so that phi = theta gives Delta = 0
  // bitwise.
  PointCloudMolecule winner = pair.winner;
  PointCloudMolecule loser = pair.loser;
  backbone::add_virtual_nodes(winner, cfg.n_max_virtual, ref.arch().virtual_type(), rng);
  backbone::add_virtual_nodes(loser, cfg.n_max_virtual, ref.arch().virtual_type(), rng);
  const NoisyDraw draw_w = backbone::draw_noisy_state(ref, winner, t, cfg.noise, rng);
  const NoisyDraw draw_l = backbone::draw_noisy_state(ref, loser, t, cfg.noise, rng);

  const bool need_loser_phi = cfg.lambda_mdpa != 0.0 || cfg.lambda_l != 0.0;
  const bool need_ref = cfg.lambda_mdpa != 0.0;

  MdpaLossGraph out;
  Graph& g = out.graph;

  const LossTerms terms_w = backbone::build_loss_terms(g, aligned, draw_w, cfg.reg_weights);
  const Graph::Id reg_w = backbone::combine_loss(g, terms_w, cfg.reg_weights);
  Graph::Id total = g.scale(reg_w, cfg.lambda_w);
  out.breakdown.winner_reg = g.scalar_value(reg_w);

  if (need_loser_phi) {
    const LossTerms terms_l = backbone::build_loss_terms(g, aligned, draw_l, cfg.reg_weights);
    const Graph::Id reg_l = backbone::combine_loss(g, terms_l, cfg.reg_weights);
    out.breakdown.loser_reg = g.scalar_value(reg_l);
    if (cfg.lambda_l != 0.0) total = g.add(total, g.scale(reg_l, cfg.lambda_l));

    if (need_ref) {
      const DomainLosses ref_w = frozen_losses(ref, draw_w, cfg.reg_weights);
      const DomainLosses ref_l = frozen_losses(ref, draw_l, cfg.reg_weights);

      const Graph::Id d_coord =
          g.sub(g.add_scalar(terms_w.coord_plain, -ref_w.coord), g.add_scalar(terms_l.coord_plain, -ref_l.coord));
      const Graph::Id d_atom =
          g.sub(g.add_scalar(terms_w.atom, -ref_w.atom), g.add_scalar(terms_l.atom, -ref_l.atom));
      const Graph::Id d_bond =
          g.sub(g.add_scalar(terms_w.bond, -ref_w.bond), g.add_scalar(terms_l.bond, -ref_l.bond));
      out.breakdown.delta_coord = g.scalar_value(d_coord);
      out.breakdown.delta_atom = g.scalar_value(d_atom);
      out.breakdown.delta_bond = g.scalar_value(d_bond);

      Graph::Id weighted = g.scale(d_coord, cfg.lambda_coord);
      weighted = g.add(weighted, g.scale(d_atom, cfg.lambda_atom));
      weighted = g.add(weighted, g.scale(d_bond, cfg.lambda_bond));
      // -log sigmoid(-beta t x) = softplus(beta t x)
      const Graph::Id pref = g.softplus_(g.scale(weighted, cfg.beta * t));
      out.breakdown.preference_term = g.scalar_value(pref);
      total = g.add(total, g.scale(pref, cfg.lambda_mdpa));
    }
  }

  out.total = total;
  out.breakdown.total = g.scalar_value(total);
  out.recorded = true;
  return out;
}

bool is_valid_molecule(const PointCloudMolecule& mol, double clash_radius, double max_bond_length) {
  const int n = mol.num_atoms();
  if (n < 1) return false;
  for (const auto& x : mol.coords)
    for (const auto& c : mol.context_coords)
      if (geometry::distance(x, c) < clash_radius) return false;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (mol.bond(i, j) != 0 && geometry::distance(mol.coords[i], mol.coords[j]) > max_bond_length)
        return false;
  return true;
}

namespace {

double validity_fraction(const BackboneModel& model, const std::vector<PointCloudMolecule>& contexts,
                         const AlignmentConfig& cfg) {
  if (contexts.empty() || cfg.validity_samples <= 0) return 0.0;
  backbone::GenerateOptions opts;
  opts.n_steps = cfg.validity_steps;
  opts.n_max_virtual = cfg.n_max_virtual;
  const Rng root(cfg.seed ^ 0x5eedf00dULL);
  int valid = 0;
  for (int s = 0; s < cfg.validity_samples; ++s) {
    Rng rng = root.child(static_cast<uint64_t>(s));
    const auto& ctx = contexts[s % contexts.size()];
    const auto gen = backbone::generate(model, ctx, opts, rng);
    if (is_valid_molecule(gen.molecule, cfg.clash_radius, cfg.max_bond_length)) ++valid;
  }
  return static_cast<double>(valid) / cfg.validity_samples;
}

AlignResult run_alignment(const BackboneModel& ref_model, const std::vector<PreferencePair>& pairs,
                          const std::vector<PointCloudMolecule>& validation_contexts,
                          const AlignmentConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("align: empty preference dataset");

  AlignResult result{ref_model, {}, {}, -1};
  BackboneModel& model = result.model;
  std::vector<double> vel(model.num_parameters(), 0.0);
  std::vector<double> best_params = model.parameters();
  double best_validity = -1.0;

  const Rng root(cfg.seed);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng = root.child(static_cast<uint64_t>(epoch), 0xffffffffULL);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);

    for (size_t step = 0; step < order.size(); ++step) {
      Rng rng = root.child(static_cast<uint64_t>(epoch), step);
      const double t = rng.uniform();
      MdpaLossGraph loss = mdpa_loss(model, ref_model, pairs[order[step]], t, rng, cfg);
      if (!std::isfinite(loss.breakdown.total) || loss.breakdown.total > cfg.divergence_threshold)
        throw TrainingDivergedError("alignment diverged at epoch " + std::to_string(epoch));
      result.loss_history.push_back(loss.breakdown.total);

      if (cfg.learning_rate != 0.0) {
        loss.graph.backward(loss.total);
        std::vector<double> grad(model.num_parameters(), 0.0);
        loss.graph.accumulate_param_grads(grad);
        if (cfg.grad_clip > 0.0) {
          double norm2 = 0.0;
          for (double gv : grad) norm2 += gv * gv;
          if (norm2 > cfg.grad_clip * cfg.grad_clip) {
            const double scale = cfg.grad_clip / std::sqrt(norm2);
            for (double& gv : grad) gv *= scale;
          }
        }
        auto& params = model.parameters();
        for (size_t i = 0; i < params.size(); ++i) {
          vel[i] = cfg.momentum * vel[i] - cfg.learning_rate * grad[i];
          params[i] += vel[i];
        }
      }
    }

    const double validity = validity_fraction(model, validation_contexts, cfg);
    result.validity_history.push_back(validity);
    if (validity > best_validity) {
      best_validity = validity;
      best_params = model.parameters();
      result.selected_epoch = epoch;
    }
  }

  if (!validation_contexts.empty() && cfg.validity_samples > 0) model.parameters() = best_params;
  return result;
}

}  // namespace

AlignResult align(const BackboneModel& ref_model, const std::vector<PreferencePair>& pairs,
                  const std::vector<PointCloudMolecule>& validation_contexts, const AlignmentConfig& cfg) {
  return run_alignment(ref_model, pairs, validation_contexts, cfg);
}

AlignResult finetune(const BackboneModel& ref_model, const std::vector<PreferencePair>& pairs,
                     const std::vector<PointCloudMolecule>& validation_contexts,
                     const AlignmentConfig& cfg) {
  AlignmentConfig ft = cfg;
  ft.lambda_mdpa = 0.0;
  ft.lambda_l = 0.0;
  return run_alignment(ref_model, pairs, validation_contexts, ft);
}

}  // namespace flowbridge::alignment
