#include "flowbridge/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "flowbridge/errors.hpp"
#include "flowbridge/flows.hpp"

namespace flowbridge::backbone {

using geometry::Vec3;

namespace {
constexpr double kLogEps = 1e-12;
}

int pair_index(int i, int j, int n) {
  if (i > j) std::swap(i, j);
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

BackboneModel::BackboneModel(const Architecture& arch) : arch_(arch) {
  const int E = arch.embed_dim, H = arch.hidden_dim;
  const int Ka = arch.num_atom_types, Kb = arch.num_bond_types, Kr = arch.num_residue_labels;
  const int C = arch.num_chi, R = arch.num_rbf;
  if (Ka < 3 || Kb < 2 || Kr < 1 || E < 1 || H < 1 || R < 1)
    throw std::invalid_argument("Architecture: invalid dimensions");

  register_layer("lig_embed_w", E, 2 * Ka + 2);
  register_layer("lig_embed_b", E, 1);
  register_layer("ctx_embed_w", E, Kr + 2 * C + 2);
  register_layer("ctx_embed_b", E, 1);
  register_layer("ctx_embed2_w", E, E);
  register_layer("ctx_embed2_b", E, 1);
  register_layer("msg_ll_w", H, 2 * E + R + 2 * Kb);
  register_layer("msg_ll_b", H, 1);
  register_layer("msg_lp_w", H, 2 * E + R);
  register_layer("msg_lp_b", H, 1);
  register_layer("msg_pp_w", H, 2 * E + R);
  register_layer("msg_pp_b", H, 1);
  register_layer("upd_lig_w", H, E + H);
  register_layer("upd_lig_b", H, 1);
  register_layer("upd_ctx_w", H, E + H);
  register_layer("upd_ctx_b", H, 1);
  register_layer("msg2_ll_w", H, 2 * H + R + 2 * Kb);
  register_layer("msg2_ll_b", H, 1);
  register_layer("msg2_lp_w", H, 2 * H + R);
  register_layer("msg2_lp_b", H, 1);
  register_layer("upd2_lig_w", H, 2 * H);
  register_layer("upd2_lig_b", H, 1);
  register_layer("upd2_ctx_w", H, 2 * H);
  register_layer("upd2_ctx_b", H, 1);
  register_layer("head_atom_w", Ka, E + H);
  register_layer("head_atom_b", Ka, 1);
  register_layer("head_logvar_w", 1, E + H);
  register_layer("head_logvar_b", 1, 1);
  register_layer("head_bond_w", Kb, 3 * H);
  register_layer("head_bond_b", Kb, 1);
  register_layer("head_vel_ll_w", 1, H);
  register_layer("head_vel_ll_b", 1, 1);
  register_layer("head_vel_lp_w", 1, H);
  register_layer("head_vel_lp_b", 1, 1);
  if (C > 0) {
    register_layer("head_chi_w", C, E + H);
    register_layer("head_chi_b", C, 1);
  }

  type_prior = bridges::Categorical::uniform(Ka);
  bond_prior = bridges::Categorical::uniform(Kb);
}

void BackboneModel::register_layer(const std::string& name, int rows, int cols) {
  ParamSlice s;
  s.offset = params_.size();
  s.rows = rows;
  s.cols = cols;
  layers_[name] = s;
  params_.resize(params_.size() + s.count(), 0.0);
}

const ParamSlice& BackboneModel::layer(const std::string& name) const {
  auto it = layers_.find(name);
  if (it == layers_.end()) throw std::invalid_argument("BackboneModel: unknown layer " + name);
  return it->second;
}

void BackboneModel::init_random(Rng& rng, double scale) {
  for (const auto& [name, slice] : layers_) {
    // Head layers start at zero so the initial velocity field vanishes and
    // all categorical predictions start uniform.
    const bool zero = name.ends_with("_b") || name.starts_with("head_");
    const double s = zero ? 0.0 : scale / std::sqrt(static_cast<double>(slice.cols));
    for (size_t i = 0; i < slice.count(); ++i) params_[slice.offset + i] = s == 0.0 ? 0.0 : s * rng.normal();
  }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

struct PairSet {
  std::vector<int> first;
  std::vector<int> second;
  int size() const { return static_cast<int>(first.size()); }
};

void append_rbf(Matrix& feat, int row0, int col, double d, int num_rbf, double rbf_max) {
  const double spacing = rbf_max / std::max(1, num_rbf - 1);
  for (int k = 0; k < num_rbf; ++k) {
    const double mu = spacing * k;
    const double z = (d - mu) / spacing;
    feat(row0 + k, col) = std::exp(-0.5 * z * z);
  }
}

Graph::Id affine(Graph& g, const BackboneModel& model, const std::string& base, Graph::Id x) {
  const ParamSlice& w = model.layer(base + "_w");
  const ParamSlice& b = model.layer(base + "_b");
  const Graph::Id wid = g.parameter(model.parameters(), w.offset, w.rows, w.cols);
  const Graph::Id bid = g.parameter(model.parameters(), b.offset, b.rows, b.cols);
  return g.add_col_broadcast(g.matmul(wid, x), bid);
}

Graph::Id fold_add(Graph& g, const std::vector<Graph::Id>& parts, int rows, int cols) {
  if (parts.empty()) return g.constant(Matrix::zeros(rows, cols));
  Graph::Id acc = parts[0];
  for (size_t i = 1; i < parts.size(); ++i) acc = g.add(acc, parts[i]);
  return acc;
}

}  // namespace

Heads forward(Graph& g, const BackboneModel& model, const ModelInput& input) {
  const Architecture& arch = model.arch();
  const int n = input.num_atoms();
  const int m = input.num_context();
  const int H = arch.hidden_dim;
  const int Ka = arch.num_atom_types, Kb = arch.num_bond_types, Kr = arch.num_residue_labels;
  const int C = arch.num_chi, R = arch.num_rbf;

  if (n < 1) throw std::invalid_argument("forward: need at least one atom node");
  if (static_cast<int>(input.atom_types.size()) != n) throw std::invalid_argument("forward: atom type length");
  if (static_cast<int>(input.pair_bonds.size()) != input.num_pairs())
    throw std::invalid_argument("forward: pair bond length");
  if (static_cast<int>(input.context_labels.size()) != m)
    throw std::invalid_argument("forward: context label length");
  if (C > 0 && m > 0 &&
      (input.context_angles.size() != static_cast<size_t>(m) * C ||
       input.angle_mask.size() != static_cast<size_t>(m) * C))
    throw std::invalid_argument("forward: context angle length");
  for (int tval : input.atom_types)
    if (tval < 0 || tval >= Ka) throw std::invalid_argument("forward: atom type out of range");
  for (int b : input.pair_bonds)
    if (b < 0 || b >= Kb) throw std::invalid_argument("forward: bond type out of range");

  const double t = input.t;

  // Ligand node features: [one-hot type; previous type probs; t; 1-t]
  Matrix ul(2 * Ka + 2, n);
  for (int i = 0; i < n; ++i) {
    ul(input.atom_types[i], i) = 1.0;
    if (input.prev && !input.prev->type_probs.empty())
      for (int k = 0; k < Ka; ++k) ul(Ka + k, i) = input.prev->type_probs(k, i);
    ul(2 * Ka, i) = t;
    ul(2 * Ka + 1, i) = 1.0 - t;
  }
  const Graph::Id e_lig = g.tanh_(affine(g, model, "lig_embed", g.constant(std::move(ul))));

  Graph::Id e_ctx = -1;
  if (m > 0) {
    Matrix up(Kr + 2 * C + 2, m);
    for (int j = 0; j < m; ++j) {
      up(input.context_labels[j], j) = 1.0;
      for (int s = 0; s < C; ++s) {
        const size_t slot = static_cast<size_t>(j) * C + s;
        if (slot < input.angle_mask.size() && input.angle_mask[slot]) {
          up(Kr + s, j) = std::sin(input.context_angles[slot]);
          up(Kr + C + s, j) = std::cos(input.context_angles[slot]);
        }
      }
      up(Kr + 2 * C, j) = t;
      up(Kr + 2 * C + 1, j) = 1.0 - t;
    }
    const Graph::Id e1 = g.tanh_(affine(g, model, "ctx_embed", g.constant(std::move(up))));
    e_ctx = g.tanh_(affine(g, model, "ctx_embed2", e1));
  }

  // Pair index sets.
  PairSet ll, lp, pp;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      ll.first.push_back(i);
      ll.second.push_back(j);
    }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) {
      lp.first.push_back(i);
      lp.second.push_back(j);
    }
  for (int j = 0; j < m; ++j)
    for (int j2 = j + 1; j2 < m; ++j2) {
      pp.first.push_back(j);
      pp.second.push_back(j2);
    }

  // Ligand-ligand messages.
  Graph::Id m_ll = -1;
  Matrix d_ll(3, std::max(1, ll.size()));
  if (ll.size() > 0) {
    Matrix extra(R + 2 * Kb, ll.size());
    d_ll = Matrix(3, ll.size());
    for (int p = 0; p < ll.size(); ++p) {
      const Vec3 diff = input.coords[ll.second[p]] - input.coords[ll.first[p]];
      const Vec3 dir = diff / std::max(norm(diff), 1e-9);
      d_ll(0, p) = dir.x;
      d_ll(1, p) = dir.y;
      d_ll(2, p) = dir.z;
      append_rbf(extra, 0, p, norm(diff), R, arch.rbf_max);
      extra(R + input.pair_bonds[p], p) = 1.0;
      if (input.prev && !input.prev->bond_probs.empty())
        for (int k = 0; k < Kb; ++k) extra(R + Kb + k, p) = input.prev->bond_probs(k, p);
    }
    const Graph::Id a = g.gather_cols(e_lig, ll.first);
    const Graph::Id b = g.gather_cols(e_lig, ll.second);
    const Graph::Id in = g.vstack({g.add(a, b), g.mul(a, b), g.constant(std::move(extra))});
    m_ll = g.tanh_(affine(g, model, "msg_ll", in));
  }

  // Ligand-context messages.
  Graph::Id m_lp = -1;
  Matrix d_lp(3, std::max(1, lp.size()));
  if (lp.size() > 0) {
    Matrix extra(R, lp.size());
    d_lp = Matrix(3, lp.size());
    for (int p = 0; p < lp.size(); ++p) {
      const Vec3 diff = input.context_coords[lp.second[p]] - input.coords[lp.first[p]];
      const Vec3 dir = diff / std::max(norm(diff), 1e-9);
      d_lp(0, p) = dir.x;
      d_lp(1, p) = dir.y;
      d_lp(2, p) = dir.z;
      append_rbf(extra, 0, p, norm(diff), R, arch.rbf_max);
    }
    const Graph::Id a = g.gather_cols(e_lig, lp.first);
    const Graph::Id b = g.gather_cols(e_ctx, lp.second);
    const Graph::Id in = g.vstack({g.add(a, b), g.mul(a, b), g.constant(std::move(extra))});
    m_lp = g.tanh_(affine(g, model, "msg_lp", in));
  }

  // Context-context messages.
  Graph::Id m_pp = -1;
  if (pp.size() > 0) {
    Matrix extra(R, pp.size());
    for (int p = 0; p < pp.size(); ++p) {
      const double d = distance(input.context_coords[pp.first[p]], input.context_coords[pp.second[p]]);
      append_rbf(extra, 0, p, d, R, arch.rbf_max);
    }
    const Graph::Id a = g.gather_cols(e_ctx, pp.first);
    const Graph::Id b = g.gather_cols(e_ctx, pp.second);
    const Graph::Id in = g.vstack({g.add(a, b), g.mul(a, b), g.constant(std::move(extra))});
    m_pp = g.tanh_(affine(g, model, "msg_pp", in));
  }

  // Aggregate and update ligand nodes.
  std::vector<Graph::Id> lig_agg;
  if (m_ll >= 0) {
    lig_agg.push_back(g.scatter_add_cols(m_ll, ll.first, n));
    lig_agg.push_back(g.scatter_add_cols(m_ll, ll.second, n));
  }
  if (m_lp >= 0) lig_agg.push_back(g.scatter_add_cols(m_lp, lp.first, n));
  const double lig_count = std::max(1, n - 1 + m);
  const Graph::Id g_lig = g.scale(fold_add(g, lig_agg, H, n), 1.0 / lig_count);
  const Graph::Id h_lig = g.tanh_(affine(g, model, "upd_lig", g.vstack({e_lig, g_lig})));

  Graph::Id h_ctx = -1;
  if (m > 0) {
    std::vector<Graph::Id> ctx_agg;
    if (m_pp >= 0) {
      ctx_agg.push_back(g.scatter_add_cols(m_pp, pp.first, m));
      ctx_agg.push_back(g.scatter_add_cols(m_pp, pp.second, m));
    }
    if (m_lp >= 0) ctx_agg.push_back(g.scatter_add_cols(m_lp, lp.second, m));
    const double ctx_count = std::max(1, m - 1 + n);
    const Graph::Id g_ctx = g.scale(fold_add(g, ctx_agg, H, m), 1.0 / ctx_count);
    h_ctx = g.tanh_(affine(g, model, "upd_ctx", g.vstack({e_ctx, g_ctx})));
  }

  Heads heads;
  heads.atom_logits = affine(g, model, "head_atom", h_lig);
  heads.atom_probs = g.softmax_cols(heads.atom_logits);
  heads.log_variance = affine(g, model, "head_logvar", h_lig);

  // Velocity: weighted sums of difference vectors (equivariant by
  // construction; zero-sum anchor weights can express position-independent
  // fields).
  std::vector<Graph::Id> vel_parts;
  if (m_ll >= 0) {
    const Graph::Id alpha = affine(g, model, "head_vel_ll", m_ll);
    Matrix d_neg = d_ll;
    for (size_t i = 0; i < d_neg.size(); ++i) d_neg[i] = -d_neg[i];
    vel_parts.push_back(g.weighted_sum_cols(alpha, d_ll, ll.first, n));
    vel_parts.push_back(g.weighted_sum_cols(alpha, std::move(d_neg), ll.second, n));
  }
  if (m_lp >= 0) {
    const Graph::Id alpha = affine(g, model, "head_vel_lp", m_lp);
    vel_parts.push_back(g.weighted_sum_cols(alpha, d_lp, lp.first, n));
  }
  heads.velocity = g.scale(fold_add(g, vel_parts, 3, n), 1.0 / lig_count);

  if (m_ll >= 0) {
    const Graph::Id ha = g.gather_cols(h_lig, ll.first);
    const Graph::Id hb = g.gather_cols(h_lig, ll.second);
    const Graph::Id bond_in = g.vstack({m_ll, g.add(ha, hb), g.mul(ha, hb)});
    heads.bond_logits = affine(g, model, "head_bond", bond_in);
    heads.bond_probs = g.softmax_cols(heads.bond_logits);
  }

  if (C > 0 && h_ctx >= 0) heads.angle_velocity = affine(g, model, "head_chi", h_ctx);

  return heads;
}

ForwardResult forward(const BackboneModel& model, const ModelInput& input) {
  ForwardResult res;
  res.heads = forward(res.graph, model, input);
  return res;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double fm_ood_loss(const std::vector<double>& v_pred, const std::vector<double>& v_true, double log_var,
                   double lambda_reg) {
  if (v_pred.size() != v_true.size()) throw std::invalid_argument("fm_ood_loss: dimension mismatch");
  if (!std::isfinite(log_var)) throw std::invalid_argument("fm_ood_loss: non-finite log variance");
  const double d = static_cast<double>(v_pred.size());
  double err2 = 0.0;
  for (size_t i = 0; i < v_pred.size(); ++i) {
    const double e = v_pred[i] - v_true[i];
    err2 += e * e;
  }
  const double s2 = std::exp(log_var);
  return 0.5 * d * log_var + err2 / (2.0 * s2) + 0.5 * lambda_reg * (s2 - 1.0) * (s2 - 1.0);
}

NoisyDraw draw_noisy_state(const BackboneModel& model, const PointCloudMolecule& sample, double t,
                           const NoiseConfig& noise, Rng& rng) {
  const Architecture& arch = model.arch();
  const int n = sample.num_atoms();
  const int m = sample.num_context();
  const int C = arch.num_chi;
  if (n < 1) throw std::invalid_argument("draw_noisy_state: empty sample");
  if (t < 0.0 || t >= 1.0) throw std::invalid_argument("draw_noisy_state: t must be in [0,1)");

  bridges::BridgeSchedule schedule;
  schedule.n_steps = noise.bridge_steps;

  NoisyDraw draw;
  draw.bridge_steps = noise.bridge_steps;
  draw.bridge_index = std::min(static_cast<int>(t * noise.bridge_steps), noise.bridge_steps - 1);
  draw.step_beta = schedule.step_beta_at(draw.bridge_index);
  const double marginal = schedule.marginal_coeff_at(draw.bridge_index);

  ModelInput& in = draw.input;
  in.t = t;
  in.context_coords = sample.context_coords;
  in.context_labels = sample.context_labels;

  // Coordinates: Gaussian prior centered on the pocket.
  const Vec3 center = m > 0 ? sample.context_centroid() : sample.ligand_centroid();
  in.coords.resize(n);
  draw.v_true = Matrix(3, n);
  for (int i = 0; i < n; ++i) {
    const Vec3 x0{center.x + rng.normal(), center.y + rng.normal(), center.z + rng.normal()};
    const Vec3 x1 = sample.coords[i];
    Vec3 xt = x0 * (1.0 - t) + x1 * t;
    if (noise.sigma > 0.0) {
      xt.x += noise.sigma * rng.normal();
      xt.y += noise.sigma * rng.normal();
      xt.z += noise.sigma * rng.normal();
    }
    in.coords[i] = xt;
    const Vec3 v = x1 - x0;
    draw.v_true(0, i) = v.x;
    draw.v_true(1, i) = v.y;
    draw.v_true(2, i) = v.z;
  }

  // Angles: uniform prior on the torus, geodesic path, scheduler targets.
  if (C > 0 && m > 0) {
    in.context_angles.assign(static_cast<size_t>(m) * C, 0.0);
    in.angle_mask.assign(static_cast<size_t>(m) * C, 0);
    draw.chi_dot = Matrix(C, m);
    draw.chi_mask = Matrix(C, m);
    if (sample.has_angles()) {
      for (int j = 0; j < m; ++j) {
        const auto& chain = sample.context_angles[j];
        for (int s = 0; s < C && s < static_cast<int>(chain.size()); ++s) {
          if (!chain.mask[s]) continue;
          const double chi1 = chain.angles[s];
          const double chi0 = rng.uniform(-geometry::kPi, geometry::kPi);
          const size_t slot = static_cast<size_t>(j) * C + s;
          in.context_angles[slot] = flows::torus_path(chi0, chi1, t, noise.scheduler_k);
          in.angle_mask[slot] = 1;
          draw.chi_dot(s, j) = flows::torus_target_field(chi0, chi1, t, noise.scheduler_k);
          draw.chi_mask(s, j) = 1.0;
        }
      }
    }
  }

  // Atom types: bridge prior and closed-form intermediate state.
  in.atom_types.resize(n);
  draw.atom_y = sample.atom_types;
  for (int i = 0; i < n; ++i) {
    const int z0 = rng.categorical(model.type_prior.probs);
    in.atom_types[i] = rng.uniform() < marginal ? z0 : sample.atom_types[i];
  }

  // Bonds, one variable per unordered pair.
  const int num_pairs = n * (n - 1) / 2;
  in.pair_bonds.resize(num_pairs);
  draw.bond_y.resize(num_pairs);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const int p = pair_index(i, j, n);
      const int y = sample.bond(i, j);
      draw.bond_y[p] = y;
      const int z0 = rng.categorical(model.bond_prior.probs);
      in.pair_bonds[p] = rng.uniform() < marginal ? z0 : y;
    }

  return draw;
}

namespace {

/// KL of the true one-step kernel against the predicted mixture, summed over
/// columns and scaled by n_steps / n_columns.
Graph::Id mbm_term(Graph& g, Graph::Id probs, const std::vector<int>& z_t, const std::vector<int>& y,
                   double beta, int n_steps) {
  const Matrix& pv = g.value(probs);
  const int K = pv.rows();
  const int cols = pv.cols();
  Matrix p_true(K, cols);
  double entropy = 0.0;
  for (int c = 0; c < cols; ++c) {
    p_true(z_t[c], c) += beta;
    p_true(y[c], c) += 1.0 - beta;
    for (int k = 0; k < K; ++k) {
      const double p = p_true(k, c);
      if (p > 0.0) entropy += p * std::log(p);
    }
  }
  Matrix beta_zt(K, cols);
  for (int c = 0; c < cols; ++c) beta_zt(z_t[c], c) = beta;

  const Graph::Id q = g.add_const(g.scale(probs, 1.0 - beta), std::move(beta_zt));
  const Graph::Id lq = g.log_floor(q, kLogEps);
  const Graph::Id cross = g.scale(g.dot_const(lq, std::move(p_true)), -1.0);
  const Graph::Id kl = g.add_scalar(cross, entropy);
  return g.scale(kl, static_cast<double>(n_steps) / std::max(1, cols));
}

}  // namespace

LossTerms build_loss_terms(Graph& g, const BackboneModel& model, const NoisyDraw& draw,
                           const LossWeights& weights) {
  const Architecture& arch = model.arch();
  const Heads heads = forward(g, model, draw.input);
  const int n = draw.input.num_atoms();
  const int m = draw.input.num_context();

  LossTerms terms;

  // Coordinate domain.
  const Graph::Id err = g.sub(heads.velocity, g.constant(draw.v_true));
  const Graph::Id per_atom_sq = g.colwise_sum(g.square(err));  // 1 x n
  terms.coord_plain = g.scale(g.sum(per_atom_sq), 1.0 / n);
  if (arch.uncertainty_head) {
    const Graph::Id log_var = heads.log_variance;
    const Graph::Id s2 = g.exp_(log_var);
    const Graph::Id inv_s2 = g.exp_(g.scale(log_var, -1.0));
    const Graph::Id nll = g.add(g.scale(log_var, 1.5), g.mul(per_atom_sq, g.scale(inv_s2, 0.5)));
    const Graph::Id reg = g.scale(g.square(g.add_scalar(s2, -1.0)), 0.5 * weights.lambda_reg);
    terms.coord = g.scale(g.sum(g.add(nll, reg)), 1.0 / n);
  } else {
    terms.coord = terms.coord_plain;
  }

  // Angle domain.
  if (heads.angle_velocity >= 0 && !draw.chi_mask.empty()) {
    double total_mask = 0.0;
    for (size_t i = 0; i < draw.chi_mask.size(); ++i) total_mask += draw.chi_mask[i];
    if (total_mask > 0.0) {
      const Graph::Id chi_err = g.sub(heads.angle_velocity, g.constant(draw.chi_dot));
      const Graph::Id masked = g.mul_const(chi_err, draw.chi_mask);
      terms.chi = g.scale(g.sum(g.square(masked)), 1.0 / total_mask);
    }
  }
  if (terms.chi < 0) terms.chi = g.scalar_constant(0.0);
  (void)m;

  // Discrete domains.
  terms.atom = mbm_term(g, heads.atom_probs, draw.input.atom_types, draw.atom_y, draw.step_beta,
                        draw.bridge_steps);
  if (heads.bond_probs >= 0 && !draw.bond_y.empty())
    terms.bond = mbm_term(g, heads.bond_probs, draw.input.pair_bonds, draw.bond_y, draw.step_beta,
                          draw.bridge_steps);
  else
    terms.bond = g.scalar_constant(0.0);

  return terms;
}

Graph::Id combine_loss(Graph& g, const LossTerms& terms, const LossWeights& weights) {
  Graph::Id total = g.scale(terms.coord, weights.lambda_coord);
  total = g.add(total, g.scale(terms.chi, weights.lambda_chi));
  total = g.add(total, g.scale(terms.atom, weights.lambda_atom));
  total = g.add(total, g.scale(terms.bond, weights.lambda_bond));
  return total;
}

LossGraph combined_loss(const BackboneModel& model, const PointCloudMolecule& sample, double t,
                        const NoiseConfig& noise, const LossWeights& weights, Rng& rng) {
  LossGraph out;
  const NoisyDraw draw = draw_noisy_state(model, sample, t, noise, rng);
  const LossTerms terms = build_loss_terms(out.graph, model, draw, weights);
  out.total = combine_loss(out.graph, terms, weights);
  out.breakdown.total = out.graph.scalar_value(out.total);
  out.breakdown.coord = out.graph.scalar_value(terms.coord);
  out.breakdown.chi = out.graph.scalar_value(terms.chi);
  out.breakdown.atom = out.graph.scalar_value(terms.atom);
  out.breakdown.bond = out.graph.scalar_value(terms.bond);
  out.recorded = true;
  return out;
}

std::vector<double> backward(const BackboneModel& model, LossGraph& loss) {
  if (!loss.recorded) throw std::logic_error("backward: loss graph not recorded");
  loss.graph.backward(loss.total);
  std::vector<double> grad(model.num_parameters(), 0.0);
  loss.graph.accumulate_param_grads(grad);
  return grad;
}

// ---------------------------------------------------------------------------
// Virtual nodes and size sampling
// ---------------------------------------------------------------------------

void add_virtual_nodes(PointCloudMolecule& sample, int n_max, int virtual_type, Rng& rng) {
  if (n_max < 0) throw std::invalid_argument("add_virtual_nodes: n_max must be >= 0");
  if (n_max == 0) return;
  const int n_virt = static_cast<int>(rng.uniform_int(0, n_max));
  if (n_virt == 0) return;
  const Vec3 com = sample.ligand_centroid();
  const int n_old = sample.num_atoms();
  const int n_new = n_old + n_virt;

  std::vector<int> bonds(static_cast<size_t>(n_new) * n_new, 0);
  for (int i = 0; i < n_old; ++i)
    for (int j = 0; j < n_old; ++j) bonds[static_cast<size_t>(i) * n_new + j] = sample.bond(i, j);
  sample.bonds = std::move(bonds);
  sample.coords.resize(n_new, com);
  sample.atom_types.resize(n_new, virtual_type);
}

int sample_size(int context_size, const std::map<int, std::vector<double>>& histogram,
                const std::vector<double>& marginal, int n_max, Rng& rng) {
  const std::vector<double>* weights = nullptr;
  auto it = histogram.find(context_size);
  if (it != histogram.end() && !it->second.empty()) weights = &it->second;
  if (weights == nullptr) {
    if (marginal.empty()) throw ConfigError("sample_size: empty size histogram");
    weights = &marginal;
  }
  double total = 0.0;
  for (double w : *weights) total += w;
  if (total <= 0.0) throw ConfigError("sample_size: size histogram has no mass");
  const int n = rng.categorical(*weights);
  return n + n_max / 2;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainResult train(BackboneModel& model, const std::vector<PointCloudMolecule>& dataset,
                  const TrainConfig& cfg, const std::vector<double>* momentum_init) {
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  const Architecture& arch = model.arch();

  TrainResult result;
  result.momentum_state.assign(model.num_parameters(), 0.0);
  if (momentum_init != nullptr) {
    if (momentum_init->size() != model.num_parameters())
      throw std::invalid_argument("train: momentum state size mismatch");
    result.momentum_state = *momentum_init;
  }

  const Rng root(cfg.seed);
  std::vector<double>& vel = result.momentum_state;
  std::vector<double>& params = model.parameters();

  for (int epoch = cfg.start_epoch; epoch < cfg.start_epoch + cfg.epochs; ++epoch) {
    // Deterministic per-epoch shuffle.
    std::vector<int> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng shuffle_rng = root.child(static_cast<uint64_t>(epoch), 0xffffffffULL);
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);

    for (size_t step = 0; step < order.size(); ++step) {
      Rng rng = root.child(static_cast<uint64_t>(epoch), step);
      PointCloudMolecule sample = dataset[order[step]];
      add_virtual_nodes(sample, cfg.n_max_virtual, arch.virtual_type(), rng);
      const double t = rng.uniform();

      NoisyDraw draw = draw_noisy_state(model, sample, t, cfg.noise, rng);
      if (arch.self_conditioning && rng.uniform() >= cfg.self_cond_drop) {
        ForwardResult prelim = forward(model, draw.input);
        SelfCondInput prev;
        prev.type_probs = prelim.graph.value(prelim.heads.atom_probs);
        if (prelim.heads.bond_probs >= 0) prev.bond_probs = prelim.graph.value(prelim.heads.bond_probs);
        draw.input.prev = std::move(prev);
      }

      LossGraph loss;
      const LossTerms terms = build_loss_terms(loss.graph, model, draw, cfg.weights);
      loss.total = combine_loss(loss.graph, terms, cfg.weights);
      loss.recorded = true;
      const double value = loss.graph.scalar_value(loss.total);
      if (!std::isfinite(value) || value > cfg.divergence_threshold)
        throw TrainingDivergedError("training diverged at epoch " + std::to_string(epoch) + " step " +
                                    std::to_string(step) + ": loss=" + std::to_string(value));
      result.loss_history.push_back(value);

      if (cfg.learning_rate != 0.0) {
        std::vector<double> grad = backward(model, loss);
        if (cfg.grad_clip > 0.0) {
          double norm2 = 0.0;
          for (double gv : grad) norm2 += gv * gv;
          if (norm2 > cfg.grad_clip * cfg.grad_clip) {
            const double scale = cfg.grad_clip / std::sqrt(norm2);
            for (double& gv : grad) gv *= scale;
          }
        }
        for (size_t i = 0; i < params.size(); ++i) {
          vel[i] = cfg.momentum * vel[i] - cfg.learning_rate * grad[i];
          params[i] += vel[i];
        }
      }
    }
  }
  result.end_epoch = cfg.start_epoch + cfg.epochs;
  return result;
}

void fit_dataset_statistics(BackboneModel& model, const std::vector<PointCloudMolecule>& dataset,
                            int n_max_virtual, bool marginal_priors) {
  const Architecture& arch = model.arch();
  const int Ka = arch.num_atom_types, Kb = arch.num_bond_types;

  std::vector<double> type_counts(Ka, 0.0);
  std::vector<double> bond_counts(Kb, 0.0);
  model.size_histogram.clear();
  double total_atoms = 0.0;

  for (const auto& mol : dataset) {
    const int n = mol.num_atoms();
    total_atoms += n;
    for (int t : mol.atom_types) type_counts.at(t) += 1.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) bond_counts.at(mol.bond(i, j)) += 1.0;
    auto& hist = model.size_histogram[mol.num_context()];
    if (static_cast<int>(hist.size()) <= n) hist.resize(n + 1, 0.0);
    hist[n] += 1.0;
  }

  model.size_marginal.clear();
  for (const auto& [mval, hist] : model.size_histogram) {
    if (hist.size() > model.size_marginal.size()) model.size_marginal.resize(hist.size(), 0.0);
    for (size_t i = 0; i < hist.size(); ++i) model.size_marginal[i] += hist[i];
  }

  if (!marginal_priors) {
    model.type_prior = bridges::Categorical::uniform(Ka);
    model.bond_prior = bridges::Categorical::uniform(Kb);
    return;
  }

  // Virtual nodes contribute n_max/2 extra atoms per molecule on average.
  const double mean_atoms = total_atoms / std::max<size_t>(1, dataset.size());
  const double w_virt = n_max_virtual > 0
                            ? (0.5 * n_max_virtual) / (mean_atoms + 0.5 * n_max_virtual)
                            : 0.0;
  double type_total = 0.0;
  for (double c : type_counts) type_total += c;
  model.type_prior.probs.assign(Ka, 0.0);
  for (int k = 0; k < Ka; ++k)
    model.type_prior.probs[k] = (1.0 - w_virt) * (type_counts[k] / std::max(1.0, type_total));
  model.type_prior.probs[arch.virtual_type()] += w_virt;

  double bond_total = 0.0;
  for (double c : bond_counts) bond_total += c;
  model.bond_prior.probs.assign(Kb, 0.0);
  for (int k = 0; k < Kb; ++k) model.bond_prior.probs[k] = bond_counts[k] / std::max(1.0, bond_total);
  // Guard against zero-mass categories in the prior.
  for (auto* prior : {&model.type_prior, &model.bond_prior}) {
    double rest = 0.0;
    for (double& p : prior->probs) {
      if (p < 1e-6) p = 1e-6;
      rest += p;
    }
    for (double& p : prior->probs) p /= rest;
  }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

GeneratedSample generate(const BackboneModel& model, const PointCloudMolecule& context,
                         const GenerateOptions& opts, Rng& rng) {
  const Architecture& arch = model.arch();
  const int m = context.num_context();
  const int C = arch.num_chi;
  if (opts.n_steps < 1) throw std::invalid_argument("generate: n_steps must be >= 1");

  int n = 0;
  if (opts.fixed_ligand) {
    n = context.num_atoms();
    if (n < 1) throw std::invalid_argument("generate: fixed ligand requires ground-truth atoms");
  } else if (opts.extra_nodes >= 0) {
    n = context.num_atoms() + opts.extra_nodes;
  } else {
    n = sample_size(m, model.size_histogram, model.size_marginal, opts.n_max_virtual, rng);
  }
  if (n < 1) throw std::invalid_argument("generate: empty node budget");

  const Vec3 center = m > 0 ? context.context_centroid() : Vec3{};

  // Priors.
  std::vector<Vec3> coords(n);
  std::vector<Vec3> x0(n);
  for (int i = 0; i < n; ++i) {
    x0[i] = Vec3{center.x + rng.normal(), center.y + rng.normal(), center.z + rng.normal()};
    coords[i] = x0[i];
  }
  std::vector<int> types(n);
  for (int i = 0; i < n; ++i) types[i] = rng.categorical(model.type_prior.probs);
  const int num_pairs = n * (n - 1) / 2;
  std::vector<int> pair_bonds(num_pairs);
  for (int p = 0; p < num_pairs; ++p) pair_bonds[p] = rng.categorical(model.bond_prior.probs);

  std::vector<double> angles(static_cast<size_t>(m) * C, 0.0);
  std::vector<uint8_t> angle_mask(static_cast<size_t>(m) * C, 0);
  if (C > 0 && context.has_angles()) {
    for (int j = 0; j < m; ++j) {
      const auto& chain = context.context_angles[j];
      for (int s = 0; s < C && s < static_cast<int>(chain.size()); ++s) {
        if (!chain.mask[s]) continue;
        const size_t slot = static_cast<size_t>(j) * C + s;
        angle_mask[slot] = 1;
        angles[slot] = rng.uniform(-geometry::kPi, geometry::kPi);
      }
    }
  }

  bridges::BridgeSchedule schedule;
  schedule.n_steps = opts.n_steps;
  const double dt = 1.0 / opts.n_steps;

  std::vector<std::vector<double>> var_series(n);
  for (auto& v : var_series) v.reserve(opts.n_steps + 1);
  std::optional<SelfCondInput> prev;

  auto make_input = [&](double t) {
    ModelInput in;
    in.coords = coords;
    in.atom_types = types;
    in.pair_bonds = pair_bonds;
    in.context_coords = context.context_coords;
    in.context_labels = context.context_labels;
    in.context_angles = angles;
    in.angle_mask = angle_mask;
    in.t = t;
    if (opts.self_conditioning && arch.self_conditioning && prev) in.prev = prev;
    return in;
  };

  for (int step = 0; step < opts.n_steps; ++step) {
    const double t = static_cast<double>(step) / opts.n_steps;
    ForwardResult fwd = forward(model, make_input(t));
    const Graph& g = fwd.graph;

    const Matrix& log_var = g.value(fwd.heads.log_variance);
    for (int i = 0; i < n; ++i) var_series[i].push_back(std::exp(log_var(0, i)));

    // Coordinates.
    if (opts.fixed_ligand) {
      for (int i = 0; i < n; ++i) coords[i] += (context.coords[i] - x0[i]) * dt;
    } else {
      const Matrix& v = g.value(fwd.heads.velocity);
      for (int i = 0; i < n; ++i) coords[i] += Vec3{v(0, i), v(1, i), v(2, i)} * dt;
      for (const Vec3& c : coords)
        if (!std::isfinite(c.x) || !std::isfinite(c.y) || !std::isfinite(c.z))
          throw IntegrationDivergedError("generate: non-finite coordinates");
    }

    // Angles.
    if (C > 0 && fwd.heads.angle_velocity >= 0) {
      const Matrix& w = g.value(fwd.heads.angle_velocity);
      for (int j = 0; j < m; ++j)
        for (int s = 0; s < C; ++s) {
          const size_t slot = static_cast<size_t>(j) * C + s;
          if (!angle_mask[slot]) continue;
          angles[slot] = geometry::wrap(angles[slot] + dt * w(s, j));
        }
    }

    // Discrete bridges.
    const double beta = schedule.step_beta_at(step);
    if (opts.fixed_ligand) {
      for (int i = 0; i < n; ++i)
        if (rng.uniform() >= beta) types[i] = context.atom_types[i];
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
          const int p = pair_index(i, j, n);
          if (rng.uniform() >= beta) pair_bonds[p] = context.bond(i, j);
        }
    } else {
      const Matrix& tp = g.value(fwd.heads.atom_probs);
      for (int i = 0; i < n; ++i) {
        if (rng.uniform() < beta) continue;
        std::vector<double> w(arch.num_atom_types);
        for (int k = 0; k < arch.num_atom_types; ++k) w[k] = tp(k, i);
        types[i] = rng.categorical(w);
      }
      if (fwd.heads.bond_probs >= 0) {
        const Matrix& bp = g.value(fwd.heads.bond_probs);
        for (int p = 0; p < num_pairs; ++p) {
          if (rng.uniform() < beta) continue;
          std::vector<double> w(arch.num_bond_types);
          for (int k = 0; k < arch.num_bond_types; ++k) w[k] = bp(k, p);
          pair_bonds[p] = rng.categorical(w);
        }
      }
    }

    if (opts.self_conditioning && arch.self_conditioning) {
      SelfCondInput sc;
      sc.type_probs = g.value(fwd.heads.atom_probs);
      if (fwd.heads.bond_probs >= 0) sc.bond_probs = g.value(fwd.heads.bond_probs);
      prev = std::move(sc);
    }
  }

  // Close the variance record at t=1.
  {
    ForwardResult fwd = forward(model, make_input(1.0));
    const Matrix& log_var = fwd.graph.value(fwd.heads.log_variance);
    for (int i = 0; i < n; ++i) var_series[i].push_back(std::exp(log_var(0, i)));
  }

  std::vector<double> times(opts.n_steps + 1);
  for (int i = 0; i <= opts.n_steps; ++i) times[i] = static_cast<double>(i) / opts.n_steps;

  GeneratedSample out;
  out.molecule.id = context.id;
  out.molecule.context_coords = context.context_coords;
  out.molecule.context_labels = context.context_labels;
  out.molecule.context_angles = context.context_angles;
  out.molecule.coords = coords;
  out.molecule.atom_types = types;
  out.molecule.bonds.assign(static_cast<size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const int b = pair_bonds[pair_index(i, j, n)];
      if (types[i] == arch.virtual_type() || types[j] == arch.virtual_type()) continue;
      out.molecule.set_bond(i, j, b);
    }

  std::vector<double> all_sigma(n);
  for (int i = 0; i < n; ++i)
    all_sigma[i] = std::sqrt(std::max(0.0, flows::trapezoid(times, var_series[i])));

  out.removed_nodes = strip_virtual_atoms(out.molecule, arch.virtual_type());
  out.sigma_tot.reserve(out.molecule.num_atoms());
  for (int i = 0; i < n; ++i)
    if (types[i] != arch.virtual_type()) out.sigma_tot.push_back(all_sigma[i]);
  out.context_angles = angles;
  return out;
}

}  // namespace flowbridge::backbone
