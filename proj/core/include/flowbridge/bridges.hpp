#pragma once

#include <functional>
#include <vector>

#include "flowbridge/matrix.hpp"
#include "flowbridge/rng.hpp"

namespace flowbridge::bridges {

/// Probability vector over K >= 2 categories.
struct Categorical {
  std::vector<double> probs;

  int size() const { return static_cast<int>(probs.size()); }
  /// Throws std::invalid_argument unless entries are nonnegative and sum to 1
  /// within 1e-9, with K >= 2.
  void validate() const;
  static Categorical point_mass(int k, int K);
  static Categorical uniform(int K);
};

/// Decay schedule of a pinned chain with n_steps transitions on the uniform
/// grid. beta_bar must satisfy beta_bar(0)=1 and beta_bar(1)=0. Only the
/// linear schedule is exercised by the test suite; the hook exists for
/// experimentation.
struct BridgeSchedule {
  int n_steps = 50;
  std::function<double(double)> beta_bar = [](double t) { return 1.0 - t; };

  double dt() const { return 1.0 / n_steps; }

  /// Snaps t to the grid {0, 1/N, ..., 1}; throws when off-grid.
  int grid_index(double t) const;

  /// Coefficient of the single-step kernel departing at grid time index i
  /// (i in [0, n_steps)). The final departure is pinned: beta = 0.
  double step_beta_at(int i) const;

  /// Coefficient of the closed-form marginal at grid time index j:
  /// beta_bar of the previous grid time, with beta_bar(-dt) taken as 1.
  double marginal_coeff_at(int j) const;

  void validate() const;
};

/// One-hot state of a pinned chain.
struct BridgeState {
  int category = 0;
  double t = 0.0;
};

/// Q = beta * I + (1-beta) * y 1^T; column-stochastic (columns sum to 1).
Matrix transition_matrix(int y, int num_categories, double beta_t);

/// Cumulative kernel: same parameterization with beta_bar.
Matrix cumulative_matrix(int y, int num_categories, double beta_bar_t);

/// Closed-form marginal p(z_t | z0, y) at grid time t: probability
/// marginal_coeff at z0 plus the rest at y. Valid for t <= 1 - dt; the final
/// transition is pinned at y by the sampler, not by this formula.
Categorical bridge_marginal(int z0, int y, double t, const BridgeSchedule& schedule, int num_categories);

/// Draws z_{t+dt} from the step kernel departing at grid time t < 1.
/// The final step returns y with probability 1.
int bridge_step_sample(int z_t, int y, double t, const BridgeSchedule& schedule, int num_categories, Rng& rng);

struct MbmLossResult {
  double value = 0.0;
  /// True when the log floor clipped a zero-support prediction.
  bool support_clipped = false;
};

/// Step-kernel KL loss, scaled by the number of steps:
/// N * KL( p(z_{t+dt} | z_t, y_true) || q(z_{t+dt} | z_t) ) where q mixes the
/// transition kernel over the predicted end-point distribution. Natural log
/// with a 1e-12 floor; capped at 1e6 on support mismatch.
MbmLossResult mbm_loss(const Categorical& predicted_y_probs, int z_t, int y_true, double t,
                       const BridgeSchedule& schedule);

/// Mixture next-step distribution q(z_{t+dt}|z_t) = beta z_t + (1-beta) y_hat.
Categorical predicted_step_distribution(const Categorical& predicted_y_probs, int z_t, double beta);

/// True next-step distribution p(z_{t+dt}|z_t, y) = beta z_t + (1-beta) y.
Categorical true_step_distribution(int z_t, int y_true, double beta, int num_categories);

}  // namespace flowbridge::bridges
