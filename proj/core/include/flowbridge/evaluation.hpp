#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "flowbridge/bridges.hpp"
#include "flowbridge/rng.hpp"

namespace flowbridge::evaluation {

/// Columnar sample set: named continuous and categorical columns with equal
/// row counts inside one table.
struct SampleTable {
  std::map<std::string, std::vector<double>> continuous;
  std::map<std::string, std::vector<std::string>> categorical;

  size_t rows() const;
  /// Checks equal row counts and finiteness of continuous values.
  void validate() const;
};

struct MetricEntry {
  double value = 0.0;
  std::optional<double> boot_mean;
  std::optional<double> boot_std;
  std::map<std::string, double> p_values;
};

struct MetricReport {
  std::map<std::string, MetricEntry> entries;
};

/// Exact 1D Wasserstein-1 distance between empirical distributions
/// (CDF-difference integral; handles unequal sample sizes).
double wasserstein1(const std::vector<double>& a, const std::vector<double>& b);

/// Jensen-Shannon divergence in nats; bounded by ln 2.
double jsd_categorical(const bridges::Categorical& p, const bridges::Categorical& q);

/// JSD between label multisets over the union of observed labels.
double jsd_labels(const std::vector<std::string>& a, const std::vector<std::string>& b);

/// JSD between joint histograms of the named continuous columns. Bin edges
/// are fixed from the reference table's min/max per column; out-of-range
/// values in `b` are clamped to the edge bins. Throws on zero-width ranges.
double jsd_joint_histogram(const SampleTable& reference, const SampleTable& b,
                           const std::vector<std::string>& columns, int bins_per_dim = 10);

/// Gaussian-moment (Frechet) distance between two feature matrices given as
/// rows of feature vectors. Symmetric PSD matrix square root via
/// eigendecomposition with negative eigenvalues floored at zero.
double frechet_gaussian(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b);

using MetricFn = std::function<double(const std::vector<double>&, const std::vector<double>&)>;

struct BootstrapResult {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Resamples the generated side `b` with replacement and recomputes the
/// metric against the fixed reference `a`.
BootstrapResult bootstrap_metric(const MetricFn& metric, const std::vector<double>& a,
                                 const std::vector<double>& b, int n_boot, int boot_size, Rng& rng);

/// Welch two-sample t-test, two-sided p-value.
double two_sample_ttest(const std::vector<double>& x, const std::vector<double>& y);

/// Mann-Whitney U with tie-corrected normal approximation, two-sided.
double mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y);

/// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Group comparison of trajectory uncertainty scores: per-group means, a
/// Mann-Whitney p-value for the out-of-distribution group exceeding the
/// in-distribution group, and the rank correlation of sigma with size.
MetricReport uncertainty_report(const std::vector<double>& sigma_tot, const std::vector<int>& sizes,
                                const std::vector<uint8_t>& in_dist_flags);

/// Regularized incomplete beta function I_x(a, b).
double incomplete_beta(double a, double b, double x);

}  // namespace flowbridge::evaluation
