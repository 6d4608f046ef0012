#pragma once

// Feature graph from the graphical lasso applied to the between-group
// difference of per-entry covariance slopes.

#include "covtraj/feature_graph.hpp"
#include "covtraj/spd.hpp"

#include <span>
#include <vector>

namespace covtraj::oracle {

using graph::FeatureGraph;
using spd::Matrix;
using spd::SpdMatrix;
using spd::SymmetricMatrix;
using spd::Vector;

/// |OLS slope over time of C1[i,j] - OLS slope of C2[i,j]| for every entry.
/// Each group needs at least two distinct times.
SymmetricMatrix slope_difference_matrix(std::span<const SpdMatrix> group1, std::span<const SpdMatrix> group2,
                                        std::span<const double> times1, std::span<const double> times2);

struct GlassoOptions {
  /// Mean absolute change of the entries of Theta over one sweep; <= 0 means
  /// 1e-4 times the mean absolute off-diagonal entry of C.
  double tol = 0.0;
  int max_iter = 100;
  /// Coordinate descent limit for each column subproblem.
  int inner_max_iter = 1000;
};

struct PrecisionEstimate {
  SpdMatrix theta;
  /// Theta^{-1}.
  Matrix covariance;
  double lambda = 0.0;
  /// Objective after initialization and after every sweep.
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations = 0;
  /// Multiple of I added to C before solving (0 when C was already PD).
  double ridge_shift = 0.0;
};

/// Minimizes -log|Theta| + tr(C Theta) + lambda sum_{i != j} |Theta_ij| by
/// block coordinate descent over columns (diagonal unpenalized). When C is
/// not positive definite it is shifted by (|lambda_min| + 1e-6) I first.
/// Throws ValidationError for negative lambda or non-finite input.
PrecisionEstimate graphical_lasso(const SymmetricMatrix& c, double lambda, const GlassoOptions& options = {});

double glasso_objective(const Matrix& theta, const Matrix& c, double lambda);

/// Largest off-diagonal violation of 0 in -W + C + lambda s for the best
/// subgradient s of |Theta|, and of -W_ii + C_ii on the diagonal. C is the
/// (shifted) matrix the solver saw.
double kkt_residual(const Matrix& theta, const Matrix& w, const Matrix& c, double lambda);

/// Edge (i, j) iff |theta_ij| > edge_tol.
FeatureGraph graph_from_precision(const Matrix& theta, double edge_tol = 1e-8);

struct DensityFit {
  double lambda = 0.0;
  FeatureGraph graph;
  double ridge_shift = 0.0;
  int target_edges = 0;
  int evaluations = 0;
};

/// Searches lambda so that the glasso graph has round(density * p(p-1)/2)
/// edges, or the closest count reached within the evaluation budget (ties go
/// to the larger lambda).
DensityFit tune_lambda_for_density(const SymmetricMatrix& c, double density, const GlassoOptions& options = {},
                                   int max_evaluations = 24);

}  // namespace covtraj::oracle
