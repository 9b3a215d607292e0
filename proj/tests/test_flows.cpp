#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "flowbridge/errors.hpp"
#include "flowbridge/flows.hpp"
#include "flowbridge/geometry.hpp"
#include "flowbridge/rng.hpp"

using namespace flowbridge;
using namespace flowbridge::flows;
namespace geo = flowbridge::geometry;

TEST_CASE("euclid_path_sample boundaries and Monte Carlo mean") {
  Rng rng(21);
  const std::vector<double> x0{1.0, -2.0, 0.5};
  const std::vector<double> x1{-1.0, 4.0, 2.5};

  CHECK(euclid_path_sample(x0, x1, 0.0, 0.0, rng) == x0);
  CHECK(euclid_path_sample(x0, x1, 1.0, 0.0, rng) == x1);
  CHECK_THROWS_AS(euclid_path_sample(x0, {1.0}, 0.5, 0.0, rng), std::invalid_argument);

  // Empirical mean over 1e5 draws approaches the midpoint within 3 sigma/sqrt(N).
  const int n_draws = 100000;
  std::vector<double> mean(3, 0.0);
  for (int i = 0; i < n_draws; ++i) {
    const auto s = euclid_path_sample(x0, x1, 0.5, 0.1, rng);
    for (int d = 0; d < 3; ++d) mean[d] += s[d];
  }
  const double tol = 3.0 * 0.1 / std::sqrt(static_cast<double>(n_draws));
  for (int d = 0; d < 3; ++d) {
    mean[d] /= n_draws;
    CHECK(std::abs(mean[d] - 0.5 * (x0[d] + x1[d])) < tol);
  }
}

TEST_CASE("euclid_target_field is the constant displacement") {
  const std::vector<double> x0{1.0, 1.0}, x1{1.0, 1.0};
  CHECK(euclid_target_field(x0, x1) == std::vector<double>{0.0, 0.0});
  CHECK(euclid_target_field({0.0, 0.0}, {1.0, 0.0}) == std::vector<double>{1.0, 0.0});

  // Consistency: (x1 - x_t)/(1-t) on the sigma=0 path equals x1 - x0.
  Rng rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> a{rng.normal(), rng.normal()};
    const std::vector<double> b{rng.normal(), rng.normal()};
    const double t = rng.uniform(0.0, 0.99);
    const auto xt = euclid_path_sample(a, b, t, 0.0, rng);
    for (int d = 0; d < 2; ++d)
      CHECK((b[d] - xt[d]) / (1.0 - t) == doctest::Approx(b[d] - a[d]).epsilon(1e-9));
  }
}

TEST_CASE("torus_path boundaries and fixed example") {
  CHECK(torus_path(0.3, -2.0, 0.0, 3) == doctest::Approx(0.3));
  CHECK(std::abs(geo::torus_log(torus_path(0.3, -2.0, 1.0, 3), -2.0)) < 1e-12);
  // 1 - kappa(0.5) = 0.875 of the displacement pi/2
  CHECK(torus_path(0.0, geo::kPi / 2.0, 0.5, 3) == doctest::Approx(0.875 * geo::kPi / 2.0).epsilon(1e-12));
}

TEST_CASE("torus_path contracts geodesic distance by exactly kappa(t)") {
  Rng rng(23);
  for (int i = 0; i < 10000; ++i) {
    const double x0 = rng.uniform(-geo::kPi, geo::kPi);
    const double x1 = rng.uniform(-geo::kPi, geo::kPi);
    const double t = rng.uniform();
    const double xt = torus_path(x0, x1, t, 3);
    CHECK(xt >= -geo::kPi);
    CHECK(xt < geo::kPi);
    const double d_t = geo::torus_distance(xt, x1);
    const double d_0 = geo::torus_distance(x0, x1);
    CHECK(d_t == doctest::Approx(geo::kappa(t, 3) * d_0).epsilon(1e-12));
  }
}

TEST_CASE("torus_target_field matches the numeric derivative of the path") {
  Rng rng(24);
  const double h = 1e-5;
  for (int i = 0; i < 2000; ++i) {
    const double x0 = rng.uniform(-geo::kPi, geo::kPi);
    const double x1 = rng.uniform(-geo::kPi, geo::kPi);
    const double t = rng.uniform(h, 1.0 - h);
    const double fd =
        geo::torus_log(torus_path(x0, x1, t - h, 3), torus_path(x0, x1, t + h, 3)) / (2.0 * h);
    CHECK(torus_target_field(x0, x1, t, 3) == doctest::Approx(fd).epsilon(1e-6));
  }
  CHECK(torus_target_field(0.7, 0.7, 0.3, 3) == 0.0);
  CHECK(torus_target_field(0.1, 2.0, 1.0, 3) == 0.0);
}

TEST_CASE("integrated torus field displacement equals the full log map") {
  // integral of k (1-t)^(k-1) dt over [0,1] is 1, so quadrature of the field
  // recovers log_{x0}(x1).
  const double x0 = -1.3, x1 = 2.2;
  for (int k = 1; k <= 4; ++k) {
    const int n = 20000;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double t0 = static_cast<double>(i) / n;
      const double t1 = static_cast<double>(i + 1) / n;
      acc += 0.5 * (torus_target_field(x0, x1, t0, k) + torus_target_field(x0, x1, t1, k)) / n;
    }
    CHECK(acc == doctest::Approx(geo::torus_log(x0, x1)).epsilon(1e-6));
  }
}

TEST_CASE("integrate_ode with a constant field is exact; zero field is identity") {
  FlowState s0;
  s0.euclidean = {0.0, 1.0, -2.0};
  const std::vector<double> target{3.0, -1.0, 0.5};

  auto const_field = [&](const FlowState&, double) {
    FieldEval f;
    f.d_euclidean = {target[0] - 0.0, target[1] - 1.0, target[2] - (-2.0)};
    return f;
  };
  const Trajectory traj = integrate_ode(s0, const_field, 500);
  CHECK(traj.times.front() == 0.0);
  CHECK(traj.times.back() == 1.0);
  REQUIRE(traj.states.size() == 501);
  for (int d = 0; d < 3; ++d)
    CHECK(std::abs(traj.states.back().euclidean[d] - target[d]) < 1e-9);

  auto zero_field = [](const FlowState& s, double) {
    FieldEval f;
    f.d_euclidean.assign(s.euclidean.size(), 0.0);
    return f;
  };
  const Trajectory still = integrate_ode(s0, zero_field, 10);
  CHECK(still.states.back().euclidean == s0.euclidean);
}

TEST_CASE("integrate_ode follows the torus target field to within 0.01 rad") {
  Rng rng(25);
  for (int trial = 0; trial < 50; ++trial) {
    const double x0 = rng.uniform(-geo::kPi, geo::kPi);
    const double x1 = rng.uniform(-geo::kPi, geo::kPi);
    FlowState s0;
    s0.angular = {x0};
    auto field = [&](const FlowState& s, double t) {
      FieldEval f;
      // Conditional field evaluated along the current state's own geodesic:
      // reconstruct from the closed form by matching remaining distance.
      f.d_angular = {torus_target_field(x0, x1, t, 3)};
      return f;
    };
    const Trajectory traj = integrate_ode(s0, field, 500);
    CHECK(std::abs(geo::torus_log(traj.states.back().angular[0], x1)) < 0.01);
    for (const auto& st : traj.states) {
      CHECK(st.angular[0] >= -geo::kPi);
      CHECK(st.angular[0] < geo::kPi);
    }
  }
}

TEST_CASE("integrate_ode flags non-finite states") {
  FlowState s0;
  s0.euclidean = {1.0};
  auto bad_field = [](const FlowState&, double) {
    FieldEval f;
    f.d_euclidean = {std::numeric_limits<double>::infinity()};
    return f;
  };
  CHECK_THROWS_AS(integrate_ode(s0, bad_field, 4), IntegrationDivergedError);
}

TEST_CASE("sigma_tot quadrature cases") {
  // Constant sigma^2 = c^2 -> c.
  FlowState s0;
  s0.euclidean = {0.0};
  auto make_field = [](std::function<double(double)> var) {
    return [var](const FlowState&, double t) {
      FieldEval f;
      f.d_euclidean = {0.0};
      f.sigma_sq = var(t);
      return f;
    };
  };
  const double c = 0.37;
  Trajectory traj = integrate_ode(s0, make_field([&](double) { return c * c; }), 100);
  REQUIRE(traj.per_step_variance.size() == traj.times.size());
  CHECK(sigma_tot(traj) == doctest::Approx(c).epsilon(1e-12));

  // sigma^2(t) = t -> sqrt(1/2) at 500 steps.
  traj = integrate_ode(s0, make_field([](double t) { return t; }), 500);
  CHECK(sigma_tot(traj) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-4));

  // All-zero variances -> 0.
  traj = integrate_ode(s0, make_field([](double) { return 0.0; }), 50);
  CHECK(sigma_tot(traj) == 0.0);

  // Missing record is an error.
  Trajectory bare = integrate_ode(
      s0,
      [](const FlowState&, double) {
        FieldEval f;
        f.d_euclidean = {0.0};
        return f;
      },
      10);
  CHECK(bare.per_step_variance.empty());
  CHECK_THROWS_AS(sigma_tot(bare), std::invalid_argument);
}

TEST_CASE("integrate_sde at zero variance matches the deterministic integrator") {
  FlowState s0;
  s0.euclidean = {0.5, -0.5};
  auto field = [](const FlowState& s, double t) {
    FieldEval f;
    f.d_euclidean = {std::sin(t) - s.euclidean[0], std::cos(t)};
    f.sigma_sq = 0.0;
    return f;
  };
  Rng rng(26);
  const Trajectory a = integrate_ode(s0, field, 64);
  const Trajectory b = integrate_sde(s0, field, 64, rng);
  for (size_t i = 0; i < a.states.size(); ++i)
    for (int d = 0; d < 2; ++d)
      CHECK(a.states[i].euclidean[d] == b.states[i].euclidean[d]);

  // With positive variance the endpoint fluctuates around the ODE solution.
  auto noisy = [](const FlowState&, double) {
    FieldEval f;
    f.d_euclidean = {1.0};
    f.sigma_sq = 0.04;
    return f;
  };
  FlowState z0;
  z0.euclidean = {0.0};
  double acc = 0.0;
  const int n_runs = 2000;
  for (int i = 0; i < n_runs; ++i) {
    Rng r(1000 + i);
    acc += integrate_sde(z0, noisy, 50, r).states.back().euclidean[0];
  }
  CHECK(acc / n_runs == doctest::Approx(1.0).epsilon(0.02));
}
