#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "flowbridge/bridges.hpp"
#include "flowbridge/rng.hpp"
#include "support/test_oracles.hpp"

using namespace flowbridge;
using namespace flowbridge::bridges;

TEST_CASE("transition_matrix limiting cases and column stochasticity") {
  // beta = 1: identity.
  Matrix q = transition_matrix(1, 3, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(q(i, j) == (i == j ? 1.0 : 0.0));

  // beta = 0: absorbing into y.
  q = transition_matrix(1, 3, 0.0);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) CHECK(q(i, j) == (i == 1 ? 1.0 : 0.0));

  // K=3, y=e2 (index 1), beta=0.5 applied to e1 (index 0) -> (0.5, 0.5, 0).
  q = transition_matrix(1, 3, 0.5);
  CHECK(q(0, 0) == doctest::Approx(0.5));
  CHECK(q(1, 0) == doctest::Approx(0.5));
  CHECK(q(2, 0) == 0.0);

  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int K = 2 + static_cast<int>(rng.uniform_int(0, 4));
    const int y = static_cast<int>(rng.uniform_int(0, K - 1));
    const double beta = rng.uniform();
    q = transition_matrix(y, K, beta);
    // Columns sum to one and map probability vectors to probability vectors.
    std::vector<double> p(K);
    double total = 0.0;
    for (int k = 0; k < K; ++k) total += (p[k] = rng.uniform());
    for (double& v : p) v /= total;
    double out_sum = 0.0;
    for (int i = 0; i < K; ++i) {
      double col = 0.0;
      for (int j = 0; j < K; ++j) col += q(j, i);
      CHECK(col == doctest::Approx(1.0).epsilon(1e-12));
      double row = 0.0;
      for (int j = 0; j < K; ++j) row += q(i, j) * p[j];
      CHECK(row >= 0.0);
      out_sum += row;
    }
    CHECK(out_sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(transition_matrix(3, 3, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(transition_matrix(0, 3, 1.5), std::invalid_argument);
}

TEST_CASE("cumulative matrix equals the product of step kernels") {
  BridgeSchedule schedule;
  schedule.n_steps = 16;
  schedule.validate();
  const int K = 4, y = 2;

  // beta_bar = 1 -> identity; beta_bar = 0 -> absorbing.
  Matrix c = cumulative_matrix(y, K, 1.0);
  for (int i = 0; i < K; ++i) CHECK(c(i, i) == 1.0);
  c = cumulative_matrix(y, K, 0.0);
  for (int j = 0; j < K; ++j) CHECK(c(y, j) == 1.0);

  // Product check Q_t * Qbar_{t-dt} = Qbar_t elementwise (interior steps).
  for (int i = 1; i + 1 < schedule.n_steps; ++i) {
    const double t = static_cast<double>(i) / schedule.n_steps;
    const double t_prev = static_cast<double>(i - 1) / schedule.n_steps;
    const Matrix lhs = matmul(transition_matrix(y, K, schedule.step_beta_at(i)),
                              cumulative_matrix(y, K, schedule.beta_bar(t_prev)));
    const Matrix rhs = cumulative_matrix(y, K, schedule.beta_bar(t));
    for (size_t e = 0; e < rhs.size(); ++e) CHECK(std::abs(lhs[e] - rhs[e]) < 1e-12);
  }
}

TEST_CASE("bridge_marginal closed form") {
  BridgeSchedule schedule;
  schedule.n_steps = 10;

  // z0 == y: point mass.
  Categorical m = bridge_marginal(2, 2, 0.5, schedule, 4);
  CHECK(m.probs[2] == doctest::Approx(1.0));

  // N=10, t=0.5: beta_bar(0.4) = 0.6 at z0, 0.4 at y.
  m = bridge_marginal(0, 3, 0.5, schedule, 4);
  CHECK(m.probs[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(m.probs[3] == doctest::Approx(0.4).epsilon(1e-12));

  // t = dt: still pinned at the start.
  m = bridge_marginal(1, 3, 0.1, schedule, 4);
  CHECK(m.probs[1] == doctest::Approx(1.0));

  CHECK_THROWS_AS(bridge_marginal(0, 1, 0.123, schedule, 4), std::invalid_argument);
}

TEST_CASE("bridge_step_sample is pinned at the end and frozen at beta=1") {
  BridgeSchedule schedule;
  schedule.n_steps = 8;
  Rng rng(32);
  // Final step returns y always.
  for (int i = 0; i < 200; ++i)
    CHECK(bridge_step_sample(0, 3, 1.0 - schedule.dt(), schedule, 4, rng) == 3);
  // First step has beta=1: state unchanged.
  for (int i = 0; i < 200; ++i) CHECK(bridge_step_sample(2, 3, 0.0, schedule, 4, rng) == 2);
  CHECK_THROWS_AS(bridge_step_sample(0, 1, 1.0, schedule, 4, rng), std::invalid_argument);
}

TEST_CASE("simulated chains match the closed-form marginal and end at y") {
  BridgeSchedule schedule;
  schedule.n_steps = 50;
  const int K = 6, z0 = 1, y = 4;
  const int n_chains = 100000;
  Rng rng(33);

  std::vector<double> counts_half(K, 0.0);
  for (int c = 0; c < n_chains; ++c) {
    int z = z0;
    for (int i = 0; i < schedule.n_steps; ++i) {
      const double t = static_cast<double>(i) / schedule.n_steps;
      z = bridge_step_sample(z, y, t, schedule, K, rng);
      if (i + 1 == schedule.n_steps / 2) counts_half[z] += 1.0;
    }
    REQUIRE(z == y);  // pinned endpoint
  }

  const Categorical expected = bridge_marginal(z0, y, 0.5, schedule, K);
  double tv = 0.0;
  for (int k = 0; k < K; ++k) tv += std::abs(counts_half[k] / n_chains - expected.probs[k]);
  CHECK(0.5 * tv < 0.01);
}

TEST_CASE("mbm_loss zero at the true point mass and positive otherwise") {
  BridgeSchedule schedule;
  schedule.n_steps = 10;
  const int K = 3;

  Categorical exact = Categorical::point_mass(2, K);
  CHECK(mbm_loss(exact, 0, 2, 0.3, schedule).value == doctest::Approx(0.0).epsilon(1e-12));

  Categorical uniform = Categorical::uniform(K);
  const auto res = mbm_loss(uniform, 0, 2, 0.3, schedule);
  CHECK(res.value > 0.0);
  CHECK_FALSE(res.support_clipped);
}

TEST_CASE("mbm_loss agrees with a brute-force KL computation") {
  BridgeSchedule schedule;
  schedule.n_steps = 10;
  const int K = 2, z_t = 0, y = 1;
  const double t = 0.3;
  const double beta = schedule.step_beta_at(schedule.grid_index(t));

  const Categorical pred = Categorical::uniform(K);
  // True next-step distribution and prediction-mixed distribution.
  std::vector<double> p(K, 0.0), q(K, 0.0);
  p[z_t] += beta;
  p[y] += 1.0 - beta;
  for (int k = 0; k < K; ++k) q[k] = (1.0 - beta) * pred.probs[k];
  q[z_t] += beta;
  const double expected = schedule.n_steps * test_oracles::brute_force_kl(p, q);
  CHECK(mbm_loss(pred, z_t, y, t, schedule).value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("mbm_loss is invariant to a joint relabeling of categories") {
  BridgeSchedule schedule;
  schedule.n_steps = 20;
  const int K = 4;
  Categorical pred;
  pred.probs = {0.1, 0.5, 0.15, 0.25};
  const double v1 = mbm_loss(pred, 0, 2, 0.25, schedule).value;

  // Swap categories 0 and 2 everywhere.
  Categorical relabeled;
  relabeled.probs = {0.15, 0.5, 0.1, 0.25};
  const double v2 = mbm_loss(relabeled, 2, 0, 0.25, schedule).value;
  CHECK(v1 == doctest::Approx(v2).epsilon(1e-12));
  (void)K;
}

TEST_CASE("mbm_loss caps zero-support mismatches with a flag") {
  BridgeSchedule schedule;
  schedule.n_steps = 10;
  Categorical pred;
  pred.probs = {1.0, 0.0};
  // Pinned final step: true distribution is a point mass at y=1, predicted
  // support is {0} only.
  const auto res = mbm_loss(pred, 0, 1, 1.0 - schedule.dt(), schedule);
  CHECK(res.support_clipped);
  CHECK(res.value <= 1e6);
  CHECK(res.value > 0.0);
}

TEST_CASE("schedule invariants") {
  BridgeSchedule schedule;
  schedule.n_steps = 25;
  schedule.validate();
  CHECK(schedule.beta_bar(0.0) == 1.0);
  CHECK(schedule.beta_bar(1.0) == 0.0);
  for (int i = 0; i < schedule.n_steps; ++i) {
    const double b = schedule.step_beta_at(i);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
  }
  CHECK(schedule.step_beta_at(0) == 1.0);
  CHECK(schedule.step_beta_at(schedule.n_steps - 1) == 0.0);
  CHECK_THROWS_AS(schedule.grid_index(0.503), std::invalid_argument);

  Categorical bad;
  bad.probs = {0.5, 0.4};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
