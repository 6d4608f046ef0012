#pragma once

// Geodesic (longitudinal-covariance) regression of SPD responses on real
// covariates, fitted with the log-Euclidean approximation: the base point is
// the Karcher mean of the responses and the slopes are the closed-form
// least-squares solution in the tangent space at that mean.

#include "covtraj/spd.hpp"
#include "covtraj/stats.hpp"

#include <span>
#include <vector>

namespace covtraj::regression {

using spd::Matrix;
using spd::SpdMatrix;
using spd::TangentVector;
using spd::Vector;

/// n samples by k covariates (e.g. a single column of times).
class CovariateMatrix {
 public:
  /// Throws ValidationError for non-finite entries or an empty matrix.
  explicit CovariateMatrix(Matrix values);
  /// Single covariate.
  static CovariateMatrix from_times(std::span<const double> times);

  Eigen::Index n() const { return values_.rows(); }
  Eigen::Index k() const { return values_.cols(); }
  const Matrix& values() const { return values_; }

 private:
  Matrix values_;
};

struct TrajectoryFit {
  SpdMatrix base;
  std::vector<TangentVector> slopes;
  /// slopes transported to the identity.
  std::vector<TangentVector> slopes_at_identity;
  /// Column means of the training covariates; predictions are made at x - mean.
  Vector covariate_mean;
  /// Sum of squared geodesic residuals of the training responses.
  double residual_sse = 0.0;
  int n_points = 0;
  int karcher_iterations = 0;

  Eigen::Index dim() const { return base.dim(); }
};

struct FitOptions {
  spd::KarcherOptions karcher;
  /// Skip the residual computation (one exp map and one distance per point).
  bool compute_residuals = true;
};

/// Throws ValidationError for shape problems or a singular centered Gram
/// matrix, NumericalError when the Karcher iteration does not converge.
TrajectoryFit fit_lcglm(std::span<const SpdMatrix> responses, const CovariateMatrix& covariates,
                        const FitOptions& options = {});

/// Exp(base, sum_j V^j (x_j - mean_j)).
SpdMatrix predict(const TrajectoryFit& fit, const Vector& x);

/// sum_j || Gamma_{b1->I} V1^j - Gamma_{b2->I} V2^j ||_F^2.
double trajectory_stat(const TrajectoryFit& fit1, const TrajectoryFit& fit2);

/// p(p+1)/2 per slope.
int default_trajectory_df(const TrajectoryFit& fit);

using stats::TestDecision;

/// Rejects iff the statistic is strictly greater than the chi-square
/// 1 - alpha quantile with `df` degrees of freedom.
TestDecision trajectory_test(const TrajectoryFit& fit1, const TrajectoryFit& fit2, double alpha, int df);

}  // namespace covtraj::regression
