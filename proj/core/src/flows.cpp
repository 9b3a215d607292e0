#include "flowbridge/flows.hpp"

#include <cmath>
#include <stdexcept>

#include "flowbridge/errors.hpp"
#include "flowbridge/geometry.hpp"

namespace flowbridge::flows {

namespace geo = flowbridge::geometry;

std::vector<double> euclid_path_sample(const std::vector<double>& x0, const std::vector<double>& x1,
                                       double t, double sigma, Rng& rng) {
  if (x0.size() != x1.size()) throw std::invalid_argument("euclid_path_sample: dimension mismatch");
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = t * x1[i] + (1.0 - t) * x0[i];
    if (sigma > 0.0) out[i] += sigma * rng.normal();
  }
  return out;
}

std::vector<double> euclid_target_field(const std::vector<double>& x0, const std::vector<double>& x1) {
  if (x0.size() != x1.size()) throw std::invalid_argument("euclid_target_field: dimension mismatch");
  std::vector<double> out(x0.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x1[i] - x0[i];
  return out;
}

double torus_path(double x0, double x1, double t, int k) {
  const double progress = 1.0 - geo::kappa(t, k);
  return geo::torus_exp(x0, progress * geo::torus_log(x0, x1));
}

double torus_target_field(double x0, double x1, double t, int k) {
  return -geo::kappa_dot(t, k) * geo::torus_log(x0, x1);
}

namespace {

void check_finite(const FlowState& s, double t) {
  for (double v : s.euclidean)
    if (!std::isfinite(v)) throw IntegrationDivergedError("non-finite euclidean state at t=" + std::to_string(t));
  for (double v : s.angular)
    if (!std::isfinite(v)) throw IntegrationDivergedError("non-finite angular state at t=" + std::to_string(t));
}

Trajectory integrate_impl(const FlowState& state0, const FieldFn& field, int n_steps, Rng* rng) {
  if (n_steps < 1) throw std::invalid_argument("integrate: n_steps must be >= 1");
  const double dt = 1.0 / n_steps;
  Trajectory traj;
  traj.times.reserve(n_steps + 1);
  traj.states.reserve(n_steps + 1);

  FlowState s = state0;
  check_finite(s, 0.0);
  traj.times.push_back(0.0);
  traj.states.push_back(s);

  bool record_variance = true;
  for (int i = 0; i < n_steps; ++i) {
    const double t = static_cast<double>(i) / n_steps;
    FieldEval f = field(s, t);
    if (f.d_euclidean.size() != s.euclidean.size() || f.d_angular.size() != s.angular.size())
      throw std::invalid_argument("integrate: field dimension mismatch");
    if (f.sigma_sq.has_value() && record_variance)
      traj.per_step_variance.push_back(*f.sigma_sq);
    else
      record_variance = false;

    const double noise_scale = (rng != nullptr && f.sigma_sq.has_value() && *f.sigma_sq > 0.0)
                                   ? std::sqrt(*f.sigma_sq * dt)
                                   : 0.0;
    for (size_t j = 0; j < s.euclidean.size(); ++j) {
      s.euclidean[j] += dt * f.d_euclidean[j];
      if (noise_scale > 0.0) s.euclidean[j] += noise_scale * rng->normal();
    }
    for (size_t j = 0; j < s.angular.size(); ++j)
      s.angular[j] = geo::wrap(s.angular[j] + dt * f.d_angular[j]);

    const double t_next = (i + 1 == n_steps) ? 1.0 : static_cast<double>(i + 1) / n_steps;
    check_finite(s, t_next);
    traj.times.push_back(t_next);
    traj.states.push_back(s);
  }

  // Close the variance record at t=1 so quadrature spans the whole interval.
  if (record_variance && !traj.per_step_variance.empty()) {
    FieldEval f = field(s, 1.0);
    if (f.sigma_sq.has_value())
      traj.per_step_variance.push_back(*f.sigma_sq);
    else
      traj.per_step_variance.clear();
  } else {
    traj.per_step_variance.clear();
  }
  return traj;
}

}  // namespace

Trajectory integrate_ode(const FlowState& state0, const FieldFn& field, int n_steps) {
  return integrate_impl(state0, field, n_steps, nullptr);
}

Trajectory integrate_sde(const FlowState& state0, const FieldFn& field, int n_steps, Rng& rng) {
  return integrate_impl(state0, field, n_steps, &rng);
}

double trapezoid(const std::vector<double>& times, const std::vector<double>& values) {
  if (times.size() != values.size() || times.size() < 2)
    throw std::invalid_argument("trapezoid: need matching series of length >= 2");
  double acc = 0.0;
  for (size_t i = 0; i + 1 < times.size(); ++i)
    acc += 0.5 * (values[i] + values[i + 1]) * (times[i + 1] - times[i]);
  return acc;
}

double sigma_tot(const Trajectory& trajectory) {
  if (trajectory.per_step_variance.empty())
    throw std::invalid_argument("sigma_tot: trajectory has no variance record");
  if (trajectory.per_step_variance.size() != trajectory.times.size())
    throw std::invalid_argument("sigma_tot: variance record length mismatch");
  const double integral = trapezoid(trajectory.times, trajectory.per_step_variance);
  return std::sqrt(std::max(0.0, integral));
}

}  // namespace flowbridge::flows
