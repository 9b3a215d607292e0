#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "flowbridge/rng.hpp"

namespace flowbridge::flows {

struct EuclideanFlowConfig {
  double sigma = 0.0;  // spread of the conditional probability path
  int n_steps = 500;
};

struct TorusFlowConfig {
  int k = 3;  // scheduler exponent
  int n_steps = 500;
};

/// Mixed integration state: Euclidean components evolve freely, angular
/// components are wrapped to [-pi, pi) after every step.
struct FlowState {
  std::vector<double> euclidean;
  std::vector<double> angular;
};

/// One evaluation of a driving field; sigma_sq, when supplied, is recorded
/// along the trajectory for the uncertainty score.
struct FieldEval {
  std::vector<double> d_euclidean;
  std::vector<double> d_angular;
  std::optional<double> sigma_sq;
};

using FieldFn = std::function<FieldEval(const FlowState&, double t)>;

struct Trajectory {
  std::vector<double> times;               // uniform grid, times.front()=0, times.back()=1
  std::vector<FlowState> states;           // same length as times
  std::vector<double> per_step_variance;   // sigma^2 samples on the same grid (may be empty)
};

/// Sample from the Gaussian conditional path: t*x1 + (1-t)*x0 + sigma*eps.
std::vector<double> euclid_path_sample(const std::vector<double>& x0, const std::vector<double>& x1,
                                       double t, double sigma, Rng& rng);

/// Constant conditional velocity x1 - x0.
std::vector<double> euclid_target_field(const std::vector<double>& x0, const std::vector<double>& x1);

/// Geodesic path on the circle with polynomial scheduler:
/// exp_{x0}((1 - kappa(t)) log_{x0}(x1)). Contracts the geodesic distance
/// to x1 by exactly kappa(t).
double torus_path(double x0, double x1, double t, int k);

/// Tangent velocity of torus_path: k (1-t)^(k-1) log_{x0}(x1).
double torus_target_field(double x0, double x1, double t, int k);

/// Explicit Euler on the uniform grid with n_steps steps. The field is also
/// evaluated at t=1 so that variance records cover the full interval.
/// Throws IntegrationDivergedError on non-finite states.
Trajectory integrate_ode(const FlowState& state0, const FieldFn& field, int n_steps);

/// Euler-Maruyama diagnostic sampler: adds sqrt(dt)*sigma*z noise per step,
/// with sigma^2 taken from the field's variance output (0 when absent).
Trajectory integrate_sde(const FlowState& state0, const FieldFn& field, int n_steps, Rng& rng);

/// Trapezoidal quadrature of `values` sampled at `times`.
double trapezoid(const std::vector<double>& times, const std::vector<double>& values);

/// Trajectory uncertainty sqrt(integral of sigma^2 dt). Requires a populated
/// variance record.
double sigma_tot(const Trajectory& trajectory);

}  // namespace flowbridge::flows
