#include "flowbridge/bridges.hpp"

#include <cmath>
#include <stdexcept>

namespace flowbridge::bridges {

namespace {
constexpr double kLogFloor = 1e-12;
constexpr double kLossCap = 1e6;
}

void Categorical::validate() const {
  if (probs.size() < 2) throw std::invalid_argument("Categorical: need K >= 2");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw std::invalid_argument("Categorical: negative or NaN probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("Categorical: probabilities do not sum to 1");
}

Categorical Categorical::point_mass(int k, int K) {
  Categorical c;
  c.probs.assign(K, 0.0);
  c.probs.at(k) = 1.0;
  return c;
}

Categorical Categorical::uniform(int K) {
  Categorical c;
  c.probs.assign(K, 1.0 / K);
  return c;
}

int BridgeSchedule::grid_index(double t) const {
  const double scaled = t * n_steps;
  const int i = static_cast<int>(std::lround(scaled));
  if (i < 0 || i > n_steps || std::abs(scaled - i) > 1e-6)
    throw std::invalid_argument("BridgeSchedule: time off the grid");
  return i;
}

double BridgeSchedule::step_beta_at(int i) const {
  if (i < 0 || i >= n_steps) throw std::invalid_argument("BridgeSchedule: step index out of range");
  if (i == n_steps - 1) return 0.0;  // pinned endpoint
  const double bb = beta_bar(static_cast<double>(i) / n_steps);
  const double bb_prev = (i == 0) ? 1.0 : beta_bar(static_cast<double>(i - 1) / n_steps);
  if (bb_prev <= 0.0) return 0.0;
  return bb / bb_prev;
}

double BridgeSchedule::marginal_coeff_at(int j) const {
  if (j < 0 || j > n_steps) throw std::invalid_argument("BridgeSchedule: grid index out of range");
  if (j == 0) return 1.0;
  return beta_bar(static_cast<double>(j - 1) / n_steps);
}

void BridgeSchedule::validate() const {
  if (n_steps < 1) throw std::invalid_argument("BridgeSchedule: n_steps must be >= 1");
  if (std::abs(beta_bar(0.0) - 1.0) > 1e-12 || std::abs(beta_bar(1.0)) > 1e-12)
    throw std::invalid_argument("BridgeSchedule: beta_bar must satisfy beta_bar(0)=1, beta_bar(1)=0");
  for (int i = 0; i < n_steps; ++i) {
    const double b = step_beta_at(i);
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("BridgeSchedule: step beta outside [0,1]");
  }
}

Matrix transition_matrix(int y, int num_categories, double beta_t) {
  if (y < 0 || y >= num_categories) throw std::invalid_argument("transition_matrix: invalid end point");
  if (!(beta_t >= 0.0 && beta_t <= 1.0)) throw std::invalid_argument("transition_matrix: beta outside [0,1]");
  Matrix q(num_categories, num_categories);
  for (int j = 0; j < num_categories; ++j) {
    q(y, j) += 1.0 - beta_t;
    q(j, j) += beta_t;
  }
  return q;
}

Matrix cumulative_matrix(int y, int num_categories, double beta_bar_t) {
  return transition_matrix(y, num_categories, beta_bar_t);
}

Categorical bridge_marginal(int z0, int y, double t, const BridgeSchedule& schedule, int num_categories) {
  if (z0 < 0 || z0 >= num_categories || y < 0 || y >= num_categories)
    throw std::invalid_argument("bridge_marginal: category out of range");
  const int j = schedule.grid_index(t);
  const double coeff = schedule.marginal_coeff_at(j);
  Categorical out;
  out.probs.assign(num_categories, 0.0);
  out.probs[z0] += coeff;
  out.probs[y] += 1.0 - coeff;
  return out;
}

int bridge_step_sample(int z_t, int y, double t, const BridgeSchedule& schedule, int num_categories,
                       Rng& rng) {
  if (z_t < 0 || z_t >= num_categories || y < 0 || y >= num_categories)
    throw std::invalid_argument("bridge_step_sample: category out of range");
  const int i = schedule.grid_index(t);
  if (i >= schedule.n_steps) throw std::invalid_argument("bridge_step_sample: t must be < 1");
  const double beta = schedule.step_beta_at(i);
  if (rng.uniform() < beta) return z_t;
  return y;
}

Categorical predicted_step_distribution(const Categorical& predicted_y_probs, int z_t, double beta) {
  Categorical q;
  q.probs.resize(predicted_y_probs.probs.size());
  for (size_t k = 0; k < q.probs.size(); ++k) q.probs[k] = (1.0 - beta) * predicted_y_probs.probs[k];
  q.probs.at(z_t) += beta;
  return q;
}

Categorical true_step_distribution(int z_t, int y_true, double beta, int num_categories) {
  return predicted_step_distribution(Categorical::point_mass(y_true, num_categories), z_t, beta);
}

MbmLossResult mbm_loss(const Categorical& predicted_y_probs, int z_t, int y_true, double t,
                       const BridgeSchedule& schedule) {
  predicted_y_probs.validate();
  const int K = predicted_y_probs.size();
  if (z_t < 0 || z_t >= K || y_true < 0 || y_true >= K)
    throw std::invalid_argument("mbm_loss: category out of range");
  const int i = schedule.grid_index(t);
  if (i >= schedule.n_steps) throw std::invalid_argument("mbm_loss: t must be < 1");
  const double beta = schedule.step_beta_at(i);

  const Categorical p = predicted_step_distribution(Categorical::point_mass(y_true, K), z_t, beta);
  const Categorical q = predicted_step_distribution(predicted_y_probs, z_t, beta);

  MbmLossResult res;
  double kl = 0.0;
  for (int k = 0; k < K; ++k) {
    const double pk = p.probs[k];
    if (pk <= 0.0) continue;
    double qk = q.probs[k];
    if (qk < kLogFloor) {
      qk = kLogFloor;
      res.support_clipped = true;
    }
    kl += pk * (std::log(pk) - std::log(qk));
  }
  res.value = schedule.n_steps * std::max(0.0, kl);
  if (res.value > kLossCap) res.value = kLossCap;
  return res;
}

}  // namespace flowbridge::bridges
