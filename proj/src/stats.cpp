#include "covtraj/stats.hpp"

#include "covtraj/error.hpp"
#include "covtraj/regression.hpp"

#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace covtraj::stats {

double chi2_sf(double x, int df) {
  if (df < 1) throw ValidationError("chi2_sf: degrees of freedom must be >= 1");
  if (std::isnan(x) || x < 0.0) throw ValidationError("chi2_sf: x must be non-negative");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

double chi2_quantile(double prob, int df) {
  if (df < 1) throw ValidationError("chi2_quantile: degrees of freedom must be >= 1");
  if (!(prob > 0.0 && prob < 1.0)) throw ValidationError("chi2_quantile: probability must lie in (0, 1)");
  if (prob < 0.5) return 2.0 * boost::math::gamma_p_inv(0.5 * df, prob);
  return 2.0 * boost::math::gamma_q_inv(0.5 * df, 1.0 - prob);
}

double f_sf(double x, double d1, double d2) {
  if (!(d1 > 0.0 && d2 > 0.0)) throw ValidationError("f_sf: degrees of freedom must be positive");
  if (std::isnan(x)) throw ValidationError("f_sf: x is NaN");
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::cdf(boost::math::complement(boost::math::fisher_f_distribution<double>(d1, d2), x));
}

double log_wishart_variance(int r, int m) {
  if (r < 1 || m < r) throw ValidationError("log_wishart_variance: need 1 <= r <= m");
  double total = 0.0;
  for (int i = 1; i <= r; ++i) total += boost::math::trigamma(0.5 * static_cast<double>(m - i + 1));
  return total / static_cast<double>(r);
}

// ---------------------------------------------------------------------------

LinearFit ols(const Matrix& responses, const Matrix& covariates) {
  const auto n = responses.rows();
  if (covariates.rows() != n) throw DimensionError("ols: responses and covariates have different row counts");
  if (n == 0) throw ValidationError("ols: no observations");
  const auto k = covariates.cols();
  Vector x_mean = covariates.colwise().mean().transpose();
  Vector y_mean = responses.colwise().mean().transpose();
  Matrix xc = covariates.rowwise() - x_mean.transpose();
  Matrix yc = responses.rowwise() - y_mean.transpose();
  Matrix gram = xc.transpose() * xc;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
  const double hi = k > 0 ? eig.eigenvalues().maxCoeff() : 0.0;
  if (k == 0 || !(hi > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * hi) {
    throw ValidationError("ols: covariates are constant or collinear");
  }
  LinearFit fit;
  // q x k
  fit.slopes = (gram.ldlt().solve(xc.transpose() * yc)).transpose();
  fit.intercepts = y_mean - fit.slopes * x_mean;
  Matrix resid = yc - xc * fit.slopes.transpose();
  const auto dof = n - k - 1;
  fit.residual_variance =
      dof > 0 && responses.cols() > 0 ? resid.squaredNorm() / static_cast<double>(dof * responses.cols()) : 0.0;
  fit.n = static_cast<int>(n);
  return fit;
}

namespace {

Matrix time_column(std::span<const double> times) {
  Matrix x(static_cast<Eigen::Index>(times.size()), 1);
  for (std::size_t i = 0; i < times.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = times[i];
  return x;
}

void require_path_shape(std::span<const SpdMatrix> cov_path, std::span<const double> times) {
  if (cov_path.size() != times.size()) throw DimensionError("covariance path and times have different lengths");
  if (cov_path.size() < 2) throw ValidationError("need at least two timepoints");
  for (const auto& c : cov_path) {
    if (c.dim() != cov_path.front().dim()) throw DimensionError("covariance path has mixed dimensions");
  }
}

}  // namespace

LinearFit naive_cov_glm(std::span<const SpdMatrix> cov_path, std::span<const double> times) {
  require_path_shape(cov_path, times);
  const auto p = cov_path.front().dim();
  Matrix y(static_cast<Eigen::Index>(cov_path.size()), spd::hvec_size(p));
  for (std::size_t t = 0; t < cov_path.size(); ++t) {
    y.row(static_cast<Eigen::Index>(t)) = spd::hvec(cov_path[t].matrix()).transpose();
  }
  try {
    return ols(y, time_column(times));
  } catch (const ValidationError&) {
    throw ValidationError("naive_cov_glm: all times are identical");
  }
}

Vector naive_slope_variance(std::span<const SpdMatrix> cov_path, std::span<const double> times,
                            std::span<const int> counts) {
  require_path_shape(cov_path, times);
  if (counts.size() != times.size()) throw DimensionError("naive_slope_variance: counts and times differ in length");
  double t_mean = 0.0;
  for (double t : times) t_mean += t;
  t_mean /= static_cast<double>(times.size());
  double sxx = 0.0;
  for (double t : times) sxx += (t - t_mean) * (t - t_mean);
  if (!(sxx > 0.0)) throw ValidationError("naive_slope_variance: all times are identical");

  const auto p = cov_path.front().dim();
  Vector var = Vector::Zero(spd::hvec_size(p));
  for (std::size_t t = 0; t < times.size(); ++t) {
    if (counts[t] < 2) throw ValidationError("naive_slope_variance: every timepoint needs at least two samples");
    const double w = (times[t] - t_mean) / sxx;
    const double scale = w * w / static_cast<double>(counts[t] - 1);
    const Matrix& c = cov_path[t].matrix();
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < p; ++i) {
      for (Eigen::Index j = i; j < p; ++j, ++k) {
        const double entry_var = c(i, i) * c(j, j) + c(i, j) * c(i, j);
        var(k) += scale * (i == j ? entry_var : 2.0 * entry_var);
      }
    }
  }
  return var;
}

namespace {

Vector stacked_difference(const LinearFit& fit1, const LinearFit& fit2) {
  if (fit1.slopes.rows() != fit2.slopes.rows() || fit1.slopes.cols() != fit2.slopes.cols()) {
    throw DimensionError("slope test: fits have different shapes");
  }
  Matrix diff = fit1.slopes - fit2.slopes;
  return Eigen::Map<const Vector>(diff.data(), diff.size());
}

TestDecision decide(double statistic, int df, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  TestDecision out;
  out.statistic = statistic;
  out.df = df;
  out.critical_value = chi2_quantile(1.0 - alpha, df);
  out.p_value = chi2_sf(std::max(statistic, 0.0), df);
  out.reject = statistic > out.critical_value;
  return out;
}

}  // namespace

TestDecision euclidean_slope_test(const LinearFit& fit1, const LinearFit& fit2, const Matrix& noise_cov_inverse,
                                  double alpha) {
  Vector d = stacked_difference(fit1, fit2);
  if (noise_cov_inverse.rows() != d.size() || noise_cov_inverse.cols() != d.size()) {
    throw DimensionError("euclidean_slope_test: noise covariance has the wrong shape");
  }
  return decide(d.dot(noise_cov_inverse * d), static_cast<int>(d.size()), alpha);
}

TestDecision euclidean_slope_test(const LinearFit& fit1, const LinearFit& fit2, double alpha) {
  Vector d = stacked_difference(fit1, fit2);
  return decide(d.squaredNorm(), static_cast<int>(d.size()), alpha);
}

TestDecision euclidean_slope_test_diagonal(const LinearFit& fit1, const LinearFit& fit2,
                                           const Vector& noise_precision_diagonal, double alpha) {
  Vector d = stacked_difference(fit1, fit2);
  if (noise_precision_diagonal.size() != d.size()) {
    throw DimensionError("euclidean_slope_test: noise precision has the wrong length");
  }
  return decide((d.array().square() * noise_precision_diagonal.array()).sum(), static_cast<int>(d.size()), alpha);
}

double region_slope_stat(const Vector& beta1, const Vector& beta2, const Matrix& sigma_inverse) {
  if (beta1.size() != beta2.size()) throw DimensionError("region_slope_stat: slope vectors differ in length");
  if (sigma_inverse.rows() != beta1.size() || sigma_inverse.cols() != beta1.size()) {
    throw DimensionError("region_slope_stat: sigma has the wrong shape");
  }
  Vector d = beta1 - beta2;
  return std::max(0.0, d.dot(sigma_inverse * d));
}

double standardize_region_stat(double raw, int edge_count) {
  if (edge_count < 1) throw ValidationError("standardize_region_stat: region has no edges");
  const double e = static_cast<double>(edge_count);
  return (raw - e) / std::sqrt(e);
}

// ---------------------------------------------------------------------------

std::optional<std::size_t> GaussianModelPath::find(double time) const {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] == time) return i;
  }
  return std::nullopt;
}

void validate_path(const GaussianModelPath& path) {
  if (path.times.size() != path.means.size() || path.times.size() != path.covariances.size()) {
    throw ValidationError("Gaussian model path has inconsistent lengths");
  }
  for (std::size_t i = 0; i < path.times.size(); ++i) {
    if (path.means[i].size() != path.covariances[i].dim() || path.means[i].size() != path.means.front().size()) {
      throw DimensionError("Gaussian model path has inconsistent dimensions");
    }
  }
}

Matrix sample_covariance(const Matrix& samples) {
  if (samples.rows() < 2) throw ValidationError("sample_covariance: need at least two samples");
  Matrix centered = samples.rowwise() - samples.colwise().mean();
  return spd::symmetrized(centered.transpose() * centered / static_cast<double>(samples.rows() - 1));
}

double gaussian_log_likelihood(const Matrix& samples, const Vector& mean, const SpdMatrix& cov) {
  const auto p = cov.dim();
  if (samples.cols() != p || mean.size() != p) throw DimensionError("gaussian_log_likelihood: dimension mismatch");
  const double log_det = cov.eigenvalues().array().log().sum();
  // ||L^{-1}(x - mu)||^2 with cov^{-1/2} from the stored decomposition.
  Matrix centered = samples.rowwise() - mean.transpose();
  Matrix white = centered * cov.inv_sqrt();
  const double n = static_cast<double>(samples.rows());
  return -0.5 * (n * (static_cast<double>(p) * std::log(2.0 * std::numbers::pi) + log_det) + white.squaredNorm());
}

double gaussian_log_likelihood(const GroupSamples& data, const GaussianModelPath& path) {
  validate_path(path);
  double total = 0.0;
  for (const auto& tp : data) {
    auto idx = path.find(tp.time);
    if (!idx) throw ValidationError("gaussian_log_likelihood: timepoint not covered by the model path");
    if (tp.samples.rows() == 0) continue;
    total += gaussian_log_likelihood(tp.samples, path.means[*idx], path.covariances[*idx]);
  }
  return total;
}

GroupSamples pool_samples(const GroupSamples& g1, const GroupSamples& g2) {
  std::map<double, std::vector<const Matrix*>> by_time;
  for (const auto& tp : g1) by_time[tp.time].push_back(&tp.samples);
  for (const auto& tp : g2) by_time[tp.time].push_back(&tp.samples);
  GroupSamples out;
  for (const auto& [time, parts] : by_time) {
    Eigen::Index rows = 0, cols = 0;
    for (const Matrix* m : parts) {
      rows += m->rows();
      if (m->cols() > 0) cols = m->cols();
    }
    Matrix merged(rows, cols);
    Eigen::Index r = 0;
    for (const Matrix* m : parts) {
      if (m->rows() == 0) continue;
      if (m->cols() != cols) throw DimensionError("pool_samples: groups have different feature counts");
      merged.middleRows(r, m->rows()) = *m;
      r += m->rows();
    }
    out.push_back({time, std::move(merged)});
  }
  return out;
}

GaussianModelPath fit_gaussian_path(const GroupSamples& data, double floor) {
  if (data.empty()) throw ValidationError("fit_gaussian_path: no timepoints");
  Eigen::Index p = -1, total = 0;
  for (const auto& tp : data) {
    if (tp.samples.rows() == 0) continue;
    if (p >= 0 && tp.samples.cols() != p) throw DimensionError("fit_gaussian_path: mixed feature counts");
    p = tp.samples.cols();
    total += tp.samples.rows();
  }
  if (p <= 0) throw ValidationError("fit_gaussian_path: no samples");

  Matrix stacked(total, p);
  Matrix stacked_t(total, 1);
  std::vector<double> cov_times;
  std::vector<SpdMatrix> covs;
  Eigen::Index r = 0;
  for (const auto& tp : data) {
    if (tp.samples.rows() == 0) continue;
    stacked.middleRows(r, tp.samples.rows()) = tp.samples;
    stacked_t.middleRows(r, tp.samples.rows()).setConstant(tp.time);
    r += tp.samples.rows();
    if (tp.samples.rows() >= 2) {
      cov_times.push_back(tp.time);
      covs.push_back(spd::project_to_spd(spd::SymmetricMatrix(sample_covariance(tp.samples)), floor));
    }
  }
  if (covs.empty()) throw ValidationError("fit_gaussian_path: no timepoint has two or more samples");

  const bool varying_time = (stacked_t.array() != stacked_t(0, 0)).any();
  std::optional<LinearFit> mean_fit;
  if (varying_time) mean_fit = ols(stacked, stacked_t);
  Vector overall_mean = stacked.colwise().mean().transpose();

  std::optional<regression::TrajectoryFit> cov_fit;
  if (covs.size() >= 2) {
    regression::FitOptions opts;
    opts.compute_residuals = false;
    cov_fit = regression::fit_lcglm(covs, regression::CovariateMatrix::from_times(cov_times), opts);
  }

  GaussianModelPath path;
  for (const auto& tp : data) {
    path.times.push_back(tp.time);
    path.means.push_back(mean_fit ? Vector(mean_fit->intercepts + mean_fit->slopes.col(0) * tp.time) : overall_mean);
    if (cov_fit) {
      path.covariances.push_back(regression::predict(*cov_fit, Vector::Constant(1, tp.time)));
    } else {
      path.covariances.push_back(covs.front());
    }
  }
  return path;
}

double product_space_stat(const GroupSamples& data_g1, const GroupSamples& data_g2, const GaussianModelPath& path_g1,
                          const GaussianModelPath& path_g2, const GaussianModelPath& pooled_path) {
  const double l1 = gaussian_log_likelihood(data_g1, path_g1);
  const double l2 = gaussian_log_likelihood(data_g2, path_g2);
  const double lp = gaussian_log_likelihood(pool_samples(data_g1, data_g2), pooled_path);
  return 2.0 * (l1 + l2 - lp);
}

// ---------------------------------------------------------------------------

std::optional<TestDecision> interaction_glm_test(const GroupSamples& g1, const GroupSamples& g2,
                                                 std::span<const std::pair<int, int>> terms, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("interaction_glm_test: alpha must lie in (0, 1)");
  if (terms.empty()) throw ValidationError("interaction_glm_test: no interaction terms");
  Eigen::Index n = 0, p = -1;
  for (const auto* g : {&g1, &g2}) {
    for (const auto& tp : *g) {
      if (tp.samples.rows() == 0) continue;
      if (p >= 0 && tp.samples.cols() != p) throw DimensionError("interaction_glm_test: mixed feature counts");
      p = tp.samples.cols();
      n += tp.samples.rows();
    }
  }
  for (const auto& [a, b] : terms) {
    if (a < 0 || b < 0 || a >= p || b >= p) throw ValidationError("interaction_glm_test: term index out of range");
  }
  const auto m = static_cast<Eigen::Index>(terms.size());
  constexpr Eigen::Index kParams = 4;
  const Eigen::Index resid_dof = n - kParams;
  if (resid_dof - m + 1 < 1) return std::nullopt;

  Matrix x(n, kParams);
  Matrix z(n, m);
  Eigen::Index row = 0;
  for (int g = 0; g < 2; ++g) {
    for (const auto& tp : (g == 0 ? g1 : g2)) {
      for (Eigen::Index i = 0; i < tp.samples.rows(); ++i, ++row) {
        x.row(row) << 1.0, tp.time, static_cast<double>(g), g * tp.time;
        for (Eigen::Index j = 0; j < m; ++j) {
          const auto& [a, b] = terms[static_cast<std::size_t>(j)];
          z(row, j) = tp.samples(i, a) * tp.samples(i, b);
        }
      }
    }
  }
  Matrix xtx = x.transpose() * x;
  Eigen::SelfAdjointEigenSolver<Matrix> xeig(xtx);
  if (xeig.eigenvalues().minCoeff() <= 1e-12 * xeig.eigenvalues().maxCoeff()) return std::nullopt;
  Matrix xtx_inv = xeig.eigenvectors() * xeig.eigenvalues().cwiseInverse().asDiagonal() * xeig.eigenvectors().transpose();
  Matrix coef = xtx_inv * x.transpose() * z;  // kParams x m
  Matrix resid = z - x * coef;
  Matrix s = resid.transpose() * resid / static_cast<double>(resid_dof);
  Eigen::SelfAdjointEigenSolver<Matrix> seig(spd::symmetrized(s));
  const double s_hi = seig.eigenvalues().maxCoeff();
  if (!(s_hi > 0.0) || seig.eigenvalues().minCoeff() <= 1e-12 * s_hi) return std::nullopt;

  Vector b = coef.row(kParams - 1).transpose();
  const double c = xtx_inv(kParams - 1, kParams - 1);
  Vector w = seig.eigenvectors().transpose() * b;
  const double t2 = (w.array().square() / seig.eigenvalues().array()).sum() / c;

  const double d1 = static_cast<double>(m);
  const double d2 = static_cast<double>(resid_dof - m + 1);
  const double f = t2 * d2 / (d1 * static_cast<double>(resid_dof));
  TestDecision out;
  out.statistic = t2;
  out.df = static_cast<int>(m);
  out.p_value = f_sf(f, d1, d2);
  out.reject = out.p_value <= alpha;
  out.critical_value = std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace covtraj::stats
