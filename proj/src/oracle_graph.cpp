#include "covtraj/oracle_graph.hpp"

#include "covtraj/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace covtraj::oracle {

namespace {

Matrix entry_slopes(std::span<const SpdMatrix> covs, std::span<const double> times, const char* which) {
  if (covs.size() != times.size()) {
    throw DimensionError(std::string("slope_difference_matrix: ") + which + " has mismatched times");
  }
  if (covs.empty()) throw ValidationError(std::string("slope_difference_matrix: ") + which + " has no timepoints");
  const double t_mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  double sxx = 0.0;
  for (double t : times) sxx += (t - t_mean) * (t - t_mean);
  if (!(sxx > 0.0)) {
    throw ValidationError(std::string("slope_difference_matrix: ") + which + " needs at least two distinct times");
  }
  const auto p = covs.front().dim();
  Matrix slope = Matrix::Zero(p, p);
  for (std::size_t t = 0; t < covs.size(); ++t) {
    if (covs[t].dim() != p) throw DimensionError("slope_difference_matrix: mixed dimensions");
    slope += (times[t] - t_mean) * covs[t].matrix();
  }
  return slope / sxx;
}

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

bool column_lasso_optimal(const Vector& q_beta, const Vector& c, const Vector& beta, double lambda) {
  const double tol = 1e-12 * (c.cwiseAbs().maxCoeff() + lambda + 1.0);
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    const double g = c(k) + q_beta(k);
    if (beta(k) > 0.0 ? std::abs(g + lambda) > tol : beta(k) < 0.0 ? std::abs(g - lambda) > tol : std::abs(g) > lambda + tol) {
      return false;
    }
  }
  return true;
}

// min 0.5 b'Qb + c'b + lambda |b|_1 for PD Q, warm started at beta. Cyclic
// coordinate descent passes alternate with an exact solve on the current
// support and sign pattern; a sign-inconsistent solve is cut at the first
// zero crossing. Every step lowers the objective.
void solve_column_lasso(const Matrix& q, const Vector& c, double lambda, int max_rounds, Vector& beta) {
  const auto n = beta.size();
  Vector q_beta = q * beta;
  auto cd_pass = [&] {
    double max_change = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double qkk = q(k, k);
      const double partial = c(k) + q_beta(k) - qkk * beta(k);
      const double updated = soft_threshold(-partial, lambda) / qkk;
      const double delta = updated - beta(k);
      if (delta != 0.0) {
        q_beta += q.col(k) * delta;
        beta(k) = updated;
      }
      max_change = std::max(max_change, std::abs(delta));
    }
    return max_change;
  };
  for (int round = 0; round < max_rounds; ++round) {
    const double change = cd_pass();
    std::vector<int> active;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (beta(k) != 0.0) active.push_back(static_cast<int>(k));
    }
    if (!active.empty()) {
      Vector rhs(static_cast<Eigen::Index>(active.size()));
      for (std::size_t a = 0; a < active.size(); ++a) {
        const int k = active[a];
        rhs(static_cast<Eigen::Index>(a)) = -(c(k) + (beta(k) > 0.0 ? lambda : -lambda));
      }
      Eigen::LLT<Matrix> llt(q(active, active));
      if (llt.info() == Eigen::Success) {
        Vector target = llt.solve(rhs);
        double step = 1.0;
        Eigen::Index blocking = -1;
        for (std::size_t a = 0; a < active.size(); ++a) {
          const double from = beta(active[a]);
          const double to = target(static_cast<Eigen::Index>(a));
          if ((from > 0.0 && to < 0.0) || (from < 0.0 && to > 0.0)) {
            const double s = from / (from - to);
            if (s < step) {
              step = s;
              blocking = static_cast<Eigen::Index>(a);
            }
          }
        }
        for (std::size_t a = 0; a < active.size(); ++a) {
          const int k = active[a];
          beta(k) += step * (target(static_cast<Eigen::Index>(a)) - beta(k));
        }
        if (blocking >= 0) beta(active[static_cast<std::size_t>(blocking)]) = 0.0;
        q_beta = q * beta;
      }
    }
    if (column_lasso_optimal(q_beta, c, beta, lambda) || change <= 1e-14 * std::max(1.0, beta.cwiseAbs().maxCoeff())) break;
  }
}

double log_det_pd(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError("graphical_lasso: iterate lost positive definiteness");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

SymmetricMatrix slope_difference_matrix(std::span<const SpdMatrix> group1, std::span<const SpdMatrix> group2,
                                        std::span<const double> times1, std::span<const double> times2) {
  Matrix s1 = entry_slopes(group1, times1, "group 1");
  Matrix s2 = entry_slopes(group2, times2, "group 2");
  if (s1.rows() != s2.rows()) throw DimensionError("slope_difference_matrix: groups have different dimensions");
  return SymmetricMatrix(spd::symmetrized((s1 - s2).cwiseAbs()));
}

double glasso_objective(const Matrix& theta, const Matrix& c, double lambda) {
  const double off = theta.cwiseAbs().sum() - theta.diagonal().cwiseAbs().sum();
  return -log_det_pd(theta) + (c.cwiseProduct(theta)).sum() + lambda * off;
}

double kkt_residual(const Matrix& theta, const Matrix& w, const Matrix& c, double lambda) {
  const auto p = theta.rows();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < p; ++i) {
    worst = std::max(worst, std::abs(c(i, i) - w(i, i)));
    for (Eigen::Index j = 0; j < p; ++j) {
      if (i == j) continue;
      const double g = c(i, j) - w(i, j);
      double r;
      if (theta(i, j) > 0.0) {
        r = std::abs(g + lambda);
      } else if (theta(i, j) < 0.0) {
        r = std::abs(g - lambda);
      } else {
        r = std::max(0.0, std::abs(g) - lambda);
      }
      worst = std::max(worst, r);
    }
  }
  return worst;
}

PrecisionEstimate graphical_lasso(const SymmetricMatrix& c_in, double lambda, const GlassoOptions& options) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("graphical_lasso: lambda must be >= 0");
  if (!c_in.matrix().allFinite()) throw ValidationError("graphical_lasso: input has non-finite entries");
  const auto p = c_in.dim();
  if (p == 0) throw ValidationError("graphical_lasso: empty input");

  Matrix c = c_in.matrix();
  double shift = 0.0;
  {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues()(0);
    if (lo <= 0.0) {
      shift = std::abs(lo) + 1e-6;
      c.diagonal().array() += shift;
    }
  }

  double tol = options.tol;
  if (tol <= 0.0) {
    const double off_sum = c.cwiseAbs().sum() - c.diagonal().cwiseAbs().sum();
    const double count = static_cast<double>(p * (p - 1));
    tol = count > 0.0 && off_sum > 0.0 ? 1e-4 * off_sum / count : 1e-12;
  }

  Matrix theta = c.diagonal().cwiseInverse().asDiagonal();
  Matrix w = c.diagonal().asDiagonal();

  PrecisionEstimate out{SpdMatrix::identity(p), Matrix(), lambda, {}, false, 0, shift};
  out.objective_trace.push_back(glasso_objective(theta, c, lambda));

  std::vector<int> others(static_cast<std::size_t>(p > 0 ? p - 1 : 0));
  for (int it = 0; it < options.max_iter && p > 1; ++it) {
    Matrix previous = theta;
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index k = 0, m = 0; k < p; ++k) {
        if (k != j) others[static_cast<std::size_t>(m++)] = static_cast<int>(k);
      }
      const double c22 = c(j, j);
      Vector w12 = w(others, j);
      Matrix theta11_inv = w(others, others) - w12 * w12.transpose() / w(j, j);
      Matrix q = c22 * theta11_inv;
      Vector c12 = c(others, j);
      Vector beta = theta(others, j);
      solve_column_lasso(q, c12, lambda, options.inner_max_iter, beta);
      Vector u = theta11_inv * beta;
      theta(others, j) = beta;
      theta(j, others) = beta.transpose();
      theta(j, j) = 1.0 / c22 + beta.dot(u);
      w(others, others) = theta11_inv + c22 * u * u.transpose();
      w(others, j) = -c22 * u;
      w(j, others) = -c22 * u.transpose();
      w(j, j) = c22;
    }
    theta = spd::symmetrized(theta);
    w = spd::symmetrized(theta.llt().solve(Matrix::Identity(p, p)));
    out.iterations = it + 1;
    out.objective_trace.push_back(glasso_objective(theta, c, lambda));
    const double change = (theta - previous).cwiseAbs().mean();
    if (change < tol) {
      out.converged = true;
      break;
    }
  }
  if (p == 1) {
    out.converged = true;
    w = c;
  }
  out.theta = SpdMatrix::from_computed(theta);
  out.covariance = w;
  return out;
}

FeatureGraph graph_from_precision(const Matrix& theta, double edge_tol) {
  if (theta.rows() != theta.cols()) throw DimensionError("graph_from_precision: matrix is not square");
  const auto p = theta.rows();
  FeatureGraph g(static_cast<int>(p));
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i + 1; j < p; ++j) {
      if (std::abs(theta(i, j)) > edge_tol) g.add_edge(static_cast<int>(i), static_cast<int>(j));
    }
  }
  return g;
}

DensityFit tune_lambda_for_density(const SymmetricMatrix& c, double density, const GlassoOptions& options,
                                   int max_evaluations) {
  if (!(density >= 0.0 && density <= 1.0)) throw ValidationError("target edge density must lie in [0, 1]");
  if (max_evaluations < 1) throw ValidationError("tune_lambda_for_density: need at least one evaluation");
  const auto p = c.dim();
  const double pairs = static_cast<double>(p * (p - 1) / 2);
  DensityFit best;
  best.target_edges = static_cast<int>(std::lround(density * pairs));

  std::vector<double> off;
  off.reserve(static_cast<std::size_t>(pairs));
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i + 1; j < p; ++j) off.push_back(std::abs(c.matrix()(i, j)));
  }
  std::sort(off.begin(), off.end());
  const double hi_start = off.empty() ? 0.0 : off.back();

  auto evaluate = [&](double lambda) {
    PrecisionEstimate est = graphical_lasso(c, lambda, options);
    FeatureGraph g = graph_from_precision(est.theta.matrix());
    const int edges = g.edge_count();
    const int gap = std::abs(edges - best.target_edges);
    const bool first = best.evaluations++ == 0;
    const int best_gap = first ? std::numeric_limits<int>::max() : std::abs(best.graph.edge_count() - best.target_edges);
    if (gap < best_gap || (gap == best_gap && lambda > best.lambda)) {
      best.lambda = lambda;
      best.graph = std::move(g);
      best.ridge_shift = est.ridge_shift;
    }
    return edges;
  };

  if (best.target_edges == 0 || hi_start == 0.0) {
    evaluate(hi_start);
    return best;
  }
  // Thresholding |C| at this quantile would give the target count.
  const auto k = off.size() - static_cast<std::size_t>(best.target_edges);
  double lambda = off[std::min(k, off.size() - 1)];
  double lo = 0.0, hi = hi_start;
  for (int e = 0; e < max_evaluations; ++e) {
    const int edges = evaluate(lambda);
    if (edges == best.target_edges) break;
    if (edges > best.target_edges) {
      lo = lambda;
    } else {
      hi = lambda;
    }
    lambda = 0.5 * (lo + hi);
  }
  return best;
}

}  // namespace covtraj::oracle
