#include "flowbridge/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace flowbridge::evaluation {

size_t SampleTable::rows() const {
  if (!continuous.empty()) return continuous.begin()->second.size();
  if (!categorical.empty()) return categorical.begin()->second.size();
  return 0;
}

void SampleTable::validate() const {
  const size_t n = rows();
  for (const auto& [name, col] : continuous) {
    if (col.size() != n) throw std::invalid_argument("SampleTable: ragged column " + name);
    for (double v : col)
      if (!std::isfinite(v)) throw std::invalid_argument("SampleTable: non-finite value in " + name);
  }
  for (const auto& [name, col] : categorical)
    if (col.size() != n) throw std::invalid_argument("SampleTable: ragged column " + name);
}

double wasserstein1(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty sample");
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());

  std::vector<double> merged;
  merged.reserve(sa.size() + sb.size());
  merged.insert(merged.end(), sa.begin(), sa.end());
  merged.insert(merged.end(), sb.begin(), sb.end());
  std::sort(merged.begin(), merged.end());

  double acc = 0.0;
  const double inv_n = 1.0 / sa.size(), inv_m = 1.0 / sb.size();
  for (size_t k = 0; k + 1 < merged.size(); ++k) {
    const double width = merged[k + 1] - merged[k];
    if (width <= 0.0) continue;
    const double fa = (std::upper_bound(sa.begin(), sa.end(), merged[k]) - sa.begin()) * inv_n;
    const double fb = (std::upper_bound(sb.begin(), sb.end(), merged[k]) - sb.begin()) * inv_m;
    acc += std::abs(fa - fb) * width;
  }
  return acc;
}

namespace {
double kl_to_mixture(const std::vector<double>& p, const std::vector<double>& m) {
  double acc = 0.0;
  for (size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    acc += p[k] * (std::log(p[k]) - std::log(m[k]));
  }
  return acc;
}
}  // namespace

double jsd_categorical(const bridges::Categorical& p, const bridges::Categorical& q) {
  if (p.probs.size() != q.probs.size()) throw std::invalid_argument("jsd_categorical: dimension mismatch");
  std::vector<double> m(p.probs.size());
  for (size_t k = 0; k < m.size(); ++k) m[k] = 0.5 * (p.probs[k] + q.probs[k]);
  return 0.5 * kl_to_mixture(p.probs, m) + 0.5 * kl_to_mixture(q.probs, m);
}

double jsd_labels(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("jsd_labels: empty sample");
  std::set<std::string> labels(a.begin(), a.end());
  labels.insert(b.begin(), b.end());
  bridges::Categorical p, q;
  p.probs.assign(labels.size(), 0.0);
  q.probs.assign(labels.size(), 0.0);
  auto index_of = [&](const std::string& s) {
    return static_cast<size_t>(std::distance(labels.begin(), labels.find(s)));
  };
  for (const auto& s : a) p.probs[index_of(s)] += 1.0 / a.size();
  for (const auto& s : b) q.probs[index_of(s)] += 1.0 / b.size();
  if (p.probs.size() < 2) {
    p.probs.push_back(0.0);
    q.probs.push_back(0.0);
  }
  return jsd_categorical(p, q);
}

double jsd_joint_histogram(const SampleTable& reference, const SampleTable& b,
                           const std::vector<std::string>& columns, int bins_per_dim) {
  if (columns.empty()) throw std::invalid_argument("jsd_joint_histogram: no columns");
  if (bins_per_dim < 1) throw std::invalid_argument("jsd_joint_histogram: bins_per_dim must be >= 1");

  struct Edges {
    double lo, hi;
  };
  std::vector<Edges> edges;
  for (const auto& name : columns) {
    auto it = reference.continuous.find(name);
    auto it2 = b.continuous.find(name);
    if (it == reference.continuous.end() || it2 == b.continuous.end())
      throw std::invalid_argument("jsd_joint_histogram: missing column " + name);
    const auto [mn, mx] = std::minmax_element(it->second.begin(), it->second.end());
    if (!(*mx > *mn)) throw std::invalid_argument("jsd_joint_histogram: zero-width range in " + name);
    edges.push_back({*mn, *mx});
  }

  size_t total_bins = 1;
  for (size_t d = 0; d < columns.size(); ++d) total_bins *= bins_per_dim;

  auto histogram = [&](const SampleTable& table) {
    std::vector<double> h(total_bins, 0.0);
    const size_t n = table.rows();
    if (n == 0) throw std::invalid_argument("jsd_joint_histogram: empty table");
    for (size_t r = 0; r < n; ++r) {
      size_t flat = 0;
      for (size_t d = 0; d < columns.size(); ++d) {
        const double v = table.continuous.at(columns[d])[r];
        const double scaled = (v - edges[d].lo) / (edges[d].hi - edges[d].lo) * bins_per_dim;
        int idx = static_cast<int>(std::floor(scaled));
        idx = std::clamp(idx, 0, bins_per_dim - 1);
        flat = flat * bins_per_dim + static_cast<size_t>(idx);
      }
      h[flat] += 1.0 / n;
    }
    return h;
  };

  bridges::Categorical p, q;
  p.probs = histogram(reference);
  q.probs = histogram(b);
  return jsd_categorical(p, q);
}

double frechet_gaussian(const std::vector<std::vector<double>>& a,
                        const std::vector<std::vector<double>>& b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("frechet_gaussian: need >= 2 rows");
  const size_t dim = a.front().size();
  if (dim == 0 || b.front().size() != dim)
    throw std::invalid_argument("frechet_gaussian: feature dimension mismatch");

  auto moments = [&](const std::vector<std::vector<double>>& rows) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(dim);
    for (const auto& r : rows) {
      if (r.size() != dim) throw std::invalid_argument("frechet_gaussian: ragged feature rows");
      for (size_t d = 0; d < dim; ++d) mu(d) += r[d];
    }
    mu /= static_cast<double>(rows.size());
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
    for (const auto& r : rows) {
      Eigen::VectorXd x(dim);
      for (size_t d = 0; d < dim; ++d) x(d) = r[d] - mu(d);
      cov += x * x.transpose();
    }
    cov /= static_cast<double>(rows.size() - 1);
    return std::pair{mu, cov};
  };

  auto sqrtm = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()));
    Eigen::VectorXd ev = solver.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) ev(i) = std::sqrt(std::max(0.0, ev(i)));
    return Eigen::MatrixXd(solver.eigenvectors() * ev.asDiagonal() * solver.eigenvectors().transpose());
  };

  const auto [mu_a, cov_a] = moments(a);
  const auto [mu_b, cov_b] = moments(b);
  const Eigen::MatrixXd root_a = sqrtm(cov_a);
  const Eigen::MatrixXd inner = sqrtm(root_a * cov_b * root_a);
  const double mean_term = (mu_a - mu_b).squaredNorm();
  const double trace_term = (cov_a + cov_b).trace() - 2.0 * inner.trace();
  return std::max(0.0, mean_term + trace_term);
}

BootstrapResult bootstrap_metric(const MetricFn& metric, const std::vector<double>& a,
                                 const std::vector<double>& b, int n_boot, int boot_size, Rng& rng) {
  if (b.empty()) throw std::invalid_argument("bootstrap_metric: empty generated sample");
  if (n_boot < 1 || boot_size < 1) throw std::invalid_argument("bootstrap_metric: bad bootstrap size");
  std::vector<double> values(n_boot);
  std::vector<double> resampled(boot_size);
  for (int it = 0; it < n_boot; ++it) {
    for (int i = 0; i < boot_size; ++i)
      resampled[i] = b[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(b.size()) - 1))];
    values[it] = metric(a, resampled);
  }
  BootstrapResult res;
  for (double v : values) res.mean += v;
  res.mean /= n_boot;
  if (n_boot > 1) {
    double acc = 0.0;
    for (double v : values) acc += (v - res.mean) * (v - res.mean);
    res.stddev = std::sqrt(acc / (n_boot - 1));
  }
  return res;
}

double incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // Continued fraction (modified Lentz), series form from standard references.
  auto betacf = [](double aa, double bb, double xx) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14, kFpMin = 1e-300;
    const double qab = aa + bb, qap = aa + 1.0, qam = aa - 1.0;
    double c = 1.0, d = 1.0 - qab * xx / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
      const int m2 = 2 * m;
      double num = m * (bb - m) * xx / ((qam + m2) * (aa + m2));
      d = 1.0 + num * d;
      if (std::abs(d) < kFpMin) d = kFpMin;
      c = 1.0 + num / c;
      if (std::abs(c) < kFpMin) c = kFpMin;
      d = 1.0 / d;
      h *= d * c;
      num = -(aa + m) * (qab + m) * xx / ((aa + m2) * (qap + m2));
      d = 1.0 + num * d;
      if (std::abs(d) < kFpMin) d = kFpMin;
      c = 1.0 + num / c;
      if (std::abs(c) < kFpMin) c = kFpMin;
      d = 1.0 / d;
      const double del = d * c;
      h *= del;
      if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
  };
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                          b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

namespace {
std::pair<double, double> mean_var(const std::vector<double>& x) {
  double mean = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= std::max<size_t>(1, x.size() - 1);
  return {mean, var};
}
}  // namespace

double two_sample_ttest(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2 || y.size() < 2) throw std::invalid_argument("two_sample_ttest: need >= 2 points each");
  const auto [mx, vx] = mean_var(x);
  const auto [my, vy] = mean_var(y);
  const double sx = vx / x.size(), sy = vy / y.size();
  const double se2 = sx + sy;
  if (se2 <= 0.0) return 1.0;
  const double t = (mx - my) / std::sqrt(se2);
  const double df = se2 * se2 / (sx * sx / (x.size() - 1) + sy * sy / (y.size() - 1));
  if (!(df > 0.0)) return 1.0;
  // Two-sided p: survival of |t| under Student-t with df degrees of freedom.
  const double p = incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return std::clamp(p, 0.0, 1.0);
}

namespace {
/// Average ranks of `v` within the combined multiset `sorted_all`.
std::vector<double> average_ranks(const std::vector<double>& all) {
  const size_t n = all.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return all[a] < all[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && all[idx[j + 1]] == all[idx[i]]) ++j;
    const double avg = 0.5 * (i + j) + 1.0;  // 1-based average rank
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double mann_whitney_u(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("mann_whitney_u: empty sample");
  const double n1 = static_cast<double>(x.size()), n2 = static_cast<double>(y.size());
  std::vector<double> all = x;
  all.insert(all.end(), y.begin(), y.end());
  const std::vector<double> ranks = average_ranks(all);

  double r1 = 0.0;
  for (size_t i = 0; i < x.size(); ++i) r1 += ranks[i];
  const double u = r1 - n1 * (n1 + 1.0) / 2.0;

  // Tie correction on the variance.
  const double n = n1 + n2;
  std::vector<double> sorted = all;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;
  const double z = (u - n1 * n2 / 2.0) / std::sqrt(var);
  return std::clamp(std::erfc(std::abs(z) / std::sqrt(2.0)), 0.0, 1.0);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need matched samples");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const auto [mx, vx] = mean_var(rx);
  const auto [my, vy] = mean_var(ry);
  if (vx <= 0.0 || vy <= 0.0) return 0.0;
  double cov = 0.0;
  for (size_t i = 0; i < rx.size(); ++i) cov += (rx[i] - mx) * (ry[i] - my);
  cov /= static_cast<double>(rx.size() - 1);
  return cov / std::sqrt(vx * vy);
}

MetricReport uncertainty_report(const std::vector<double>& sigma_tot, const std::vector<int>& sizes,
                                const std::vector<uint8_t>& in_dist_flags) {
  if (sigma_tot.size() != sizes.size() || sigma_tot.size() != in_dist_flags.size())
    throw std::invalid_argument("uncertainty_report: length mismatch");
  std::vector<double> in, out;
  for (size_t i = 0; i < sigma_tot.size(); ++i)
    (in_dist_flags[i] ? in : out).push_back(sigma_tot[i]);
  if (in.empty() || out.empty()) throw std::invalid_argument("uncertainty_report: both groups required");

  MetricReport report;
  auto mean_of = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  };
  report.entries["mean_sigma_in_dist"].value = mean_of(in);
  report.entries["mean_sigma_out_dist"].value = mean_of(out);
  MetricEntry mw;
  mw.value = mann_whitney_u(out, in);
  report.entries["sigma_group_mw_p"] = mw;

  std::vector<double> size_d(sizes.begin(), sizes.end());
  report.entries["sigma_size_spearman"].value = spearman(sigma_tot, size_d);
  return report;
}

}  // namespace flowbridge::evaluation
