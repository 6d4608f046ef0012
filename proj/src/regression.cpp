#include "covtraj/regression.hpp"

#include "covtraj/error.hpp"
#include "covtraj/stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace covtraj::regression {

CovariateMatrix::CovariateMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.rows() == 0 || values_.cols() == 0) throw ValidationError("covariate matrix is empty");
  if (!values_.allFinite()) throw ValidationError("covariate matrix has non-finite entries");
}

CovariateMatrix CovariateMatrix::from_times(std::span<const double> times) {
  Matrix m(static_cast<Eigen::Index>(times.size()), 1);
  for (std::size_t i = 0; i < times.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = times[i];
  return CovariateMatrix(std::move(m));
}

TrajectoryFit fit_lcglm(std::span<const SpdMatrix> responses, const CovariateMatrix& covariates,
                        const FitOptions& options) {
  if (responses.empty()) throw ValidationError("fit_lcglm: no responses");
  const Eigen::Index n = static_cast<Eigen::Index>(responses.size());
  if (covariates.n() != n) {
    throw DimensionError("fit_lcglm: covariate rows do not match the number of responses");
  }
  const Eigen::Index p = responses.front().dim();
  for (const auto& y : responses) {
    if (y.dim() != p) throw DimensionError("fit_lcglm: responses have different dimensions");
  }
  const Eigen::Index k = covariates.k();
  if (n < k + 1) throw ValidationError("fit_lcglm: need at least k + 1 responses for k covariates");

  Vector mean = covariates.values().colwise().mean().transpose();
  Matrix centered = covariates.values().rowwise() - mean.transpose();
  Matrix gram = centered.transpose() * centered;
  Eigen::SelfAdjointEigenSolver<Matrix> gram_eig(gram);
  const double gram_hi = gram_eig.eigenvalues().maxCoeff();
  if (!(gram_hi > 0.0) || gram_eig.eigenvalues().minCoeff() <= 1e-12 * gram_hi) {
    throw ValidationError("fit_lcglm: centered covariate Gram matrix is singular");
  }

  spd::KarcherResult km = spd::karcher_mean(responses, options.karcher);
  // Ill-conditioned responses can stall at rounding level.
  const double stall_tol = std::max(1e-6 * static_cast<double>(n), 100.0 * km.rounding_level);
  const bool accepted = km.converged || (km.stalled && km.riemannian_gradient_norm <= stall_tol);
  if (!accepted) {
    std::ostringstream os;
    os << "fit_lcglm: Karcher mean did not converge after " << km.iterations
       << " iterations (gradient norm " << km.gradient_norm << ", whitened " << km.riemannian_gradient_norm
       << (km.stalled ? ", stalled" : "") << ")";
    throw NumericalError(os.str());
  }

  const Eigen::Index m = spd::hvec_size(p);
  Matrix y(m, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    y.col(i) = spd::hvec(spd::log_map(km.mean, responses[static_cast<std::size_t>(i)]).matrix());
  }
  Matrix coef = y * centered * gram.ldlt().solve(Matrix::Identity(k, k));

  TrajectoryFit fit{km.mean, {}, {}, mean, 0.0, static_cast<int>(n), km.iterations};
  const SpdMatrix identity = SpdMatrix::identity(p);
  fit.slopes.reserve(static_cast<std::size_t>(k));
  fit.slopes_at_identity.reserve(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    TangentVector slope(km.mean, spd::hvec_inverse(coef.col(j), p));
    fit.slopes_at_identity.push_back(spd::parallel_transport(km.mean, identity, slope));
    fit.slopes.push_back(std::move(slope));
  }

  if (options.compute_residuals) {
    for (Eigen::Index i = 0; i < n; ++i) {
      SpdMatrix fitted = predict(fit, covariates.values().row(i).transpose());
      const double d = spd::geodesic_distance(fitted, responses[static_cast<std::size_t>(i)]);
      fit.residual_sse += d * d;
    }
  }
  return fit;
}

SpdMatrix predict(const TrajectoryFit& fit, const Vector& x) {
  if (x.size() != static_cast<Eigen::Index>(fit.slopes.size())) {
    throw DimensionError("predict: covariate vector length does not match the number of slopes");
  }
  Matrix v = Matrix::Zero(fit.dim(), fit.dim());
  for (std::size_t j = 0; j < fit.slopes.size(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    v += (x(jj) - fit.covariate_mean(jj)) * fit.slopes[j].matrix();
  }
  return spd::exp_map(fit.base, TangentVector(fit.base, v));
}

double trajectory_stat(const TrajectoryFit& fit1, const TrajectoryFit& fit2) {
  if (fit1.dim() != fit2.dim()) throw DimensionError("trajectory_stat: fits have different dimensions");
  if (fit1.slopes_at_identity.size() != fit2.slopes_at_identity.size()) {
    throw DimensionError("trajectory_stat: fits have different numbers of slopes");
  }
  double total = 0.0;
  for (std::size_t j = 0; j < fit1.slopes_at_identity.size(); ++j) {
    total += (fit1.slopes_at_identity[j].matrix() - fit2.slopes_at_identity[j].matrix()).squaredNorm();
  }
  return total;
}

int default_trajectory_df(const TrajectoryFit& fit) {
  return static_cast<int>(spd::hvec_size(fit.dim()) * static_cast<Eigen::Index>(fit.slopes.size()));
}

TestDecision trajectory_test(const TrajectoryFit& fit1, const TrajectoryFit& fit2, double alpha, int df) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("trajectory_test: alpha must lie in (0, 1)");
  if (df < 1) throw ValidationError("trajectory_test: df must be positive");
  TestDecision out;
  out.statistic = trajectory_stat(fit1, fit2);
  out.df = df;
  out.critical_value = stats::chi2_quantile(1.0 - alpha, df);
  out.p_value = stats::chi2_sf(out.statistic, df);
  out.reject = out.statistic > out.critical_value;
  return out;
}

}  // namespace covtraj::regression
