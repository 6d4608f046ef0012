#pragma once

// Distribution functions, Euclidean slope models and the region statistics
// built on them, and the Gaussian likelihood-ratio statistic over the
// product of mean and covariance trajectories.

#include "covtraj/spd.hpp"

#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace covtraj::stats {

using spd::Matrix;
using spd::SpdMatrix;
using spd::Vector;

/// Upper tail of the chi-square distribution, Q(df/2, x/2).
double chi2_sf(double x, int df);
/// Inverse of the lower tail: chi2_sf(chi2_quantile(prob, df), df) == 1 - prob.
double chi2_quantile(double prob, int df);
/// Upper tail of Fisher's F(d1, d2).
double f_sf(double x, double d1, double d2);

/// Per-coordinate variance of the half-vectorized log of W / m for
/// W ~ Wishart_r(I, m): (1/r) sum_{i=1}^{r} trigamma((m - i + 1) / 2), exact
/// for the log-determinant share and 2/m to first order. Requires m >= r.
double log_wishart_variance(int r, int m);

struct TestDecision {
  double statistic = 0.0;
  double p_value = 1.0;
  double critical_value = 0.0;
  int df = 0;
  bool reject = false;
};

// ---------------------------------------------------------------------------
// Linear models

struct LinearFit {
  Vector intercepts;  // q
  Matrix slopes;      // q x k
  double residual_variance = 0.0;
  int n = 0;
};

/// Ordinary least squares with intercept of each column of `responses`
/// (n x q) on `covariates` (n x k). Throws ValidationError when the centered
/// covariates are rank deficient.
LinearFit ols(const Matrix& responses, const Matrix& covariates);

/// OLS of the half-vectorized covariances on time.
LinearFit naive_cov_glm(std::span<const SpdMatrix> cov_path, std::span<const double> times);

/// Plug-in sampling variance of each naive-GLM slope coordinate, using the
/// Wishart variance (C_ii C_jj + C_ij^2) / (n_t - 1) of a sample covariance
/// entry at each timepoint. Off-diagonal coordinates carry the factor 2 of
/// the sqrt(2) half-vectorization.
Vector naive_slope_variance(std::span<const SpdMatrix> cov_path, std::span<const double> times,
                            std::span<const int> counts);

/// L = (b1 - b2)^T Sigma^{-1} (b1 - b2) over the stacked slope coordinates,
/// compared with chi2 at q*k degrees of freedom.
TestDecision euclidean_slope_test(const LinearFit& fit1, const LinearFit& fit2, const Matrix& noise_cov_inverse,
                                  double alpha);
/// Sigma = I.
TestDecision euclidean_slope_test(const LinearFit& fit1, const LinearFit& fit2, double alpha);
/// Diagonal Sigma given by its inverse diagonal.
TestDecision euclidean_slope_test_diagonal(const LinearFit& fit1, const LinearFit& fit2,
                                           const Vector& noise_precision_diagonal, double alpha);

double region_slope_stat(const Vector& beta1, const Vector& beta2, const Matrix& sigma_inverse);

/// (raw - edge_count) / sqrt(edge_count).
double standardize_region_stat(double raw, int edge_count);

// ---------------------------------------------------------------------------
// Gaussian likelihood over time

/// Samples observed at one timepoint: n_t x p.
struct TimepointSamples {
  double time = 0.0;
  Matrix samples;
};
using GroupSamples = std::vector<TimepointSamples>;

/// Per-timepoint mean and covariance of a Gaussian model.
struct GaussianModelPath {
  std::vector<double> times;
  std::vector<Vector> means;
  std::vector<SpdMatrix> covariances;

  /// Index of `time`, or nullopt.
  std::optional<std::size_t> find(double time) const;
};

/// Checks sizes and dimensions; throws ValidationError.
void validate_path(const GaussianModelPath& path);

double gaussian_log_likelihood(const Matrix& samples, const Vector& mean, const SpdMatrix& cov);
/// Sum over timepoints; throws ValidationError when a timepoint is not
/// covered by the path.
double gaussian_log_likelihood(const GroupSamples& data, const GaussianModelPath& path);

/// Unbiased sample covariance of the rows of `samples` (needs >= 2 rows).
Matrix sample_covariance(const Matrix& samples);

/// Merges two groups' samples timepoint by timepoint (group 1 rows first).
GroupSamples pool_samples(const GroupSamples& g1, const GroupSamples& g2);

/// Mean path from a per-feature linear model in time over all samples;
/// covariance path from the geodesic regression of the per-timepoint sample
/// covariances (projected to SPD with `floor`). Timepoints with fewer than two
/// samples do not contribute a covariance.
GaussianModelPath fit_gaussian_path(const GroupSamples& data, double floor = spd::kDefaultSpdFloor);

/// -2 log of the likelihood ratio between the two group models and the pooled
/// model evaluated on the pooled data.
double product_space_stat(const GroupSamples& data_g1, const GroupSamples& data_g2, const GaussianModelPath& path_g1,
                          const GaussianModelPath& path_g2, const GaussianModelPath& pooled_path);

// ---------------------------------------------------------------------------
// Interaction GLM baseline

/// Joint test that the group-by-time interaction vanishes for every product
/// term x_a * x_b in `terms`, using the design [1, t, g, g t] over all samples
/// and Hotelling's T^2 on the interaction coefficients. Returns nullopt when
/// the model is not identifiable (too few samples for the number of terms or a
/// singular residual covariance).
std::optional<TestDecision> interaction_glm_test(const GroupSamples& g1, const GroupSamples& g2,
                                                 std::span<const std::pair<int, int>> terms, double alpha);

}  // namespace covtraj::stats
