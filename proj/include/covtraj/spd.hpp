#pragma once

// Riemannian geometry of the manifold of symmetric positive definite
// matrices under the affine-invariant metric
//
//   <u, v>_b = tr(b^{-1/2} u b^{-1} v b^{-1/2}).
//
// All matrix functions (exp, log, square roots) are evaluated through a
// symmetric eigendecomposition. Every composite formula is symmetrized before
// its result is wrapped in a value type.

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace covtraj::spd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative tolerance on max|A - A^T| used by every symmetric type.
inline constexpr double kSymmetryTolerance = 1e-12;
/// lambda_min > kDefinitenessTolerance * lambda_max is accepted as PD.
inline constexpr double kDefinitenessTolerance = 1e-12;

/// (X + X^T) / 2.
Matrix symmetrized(const Matrix& m);

/// True when m is square and max|m - m^T| <= kSymmetryTolerance * max|m|.
bool is_symmetric(const Matrix& m);

/// A real symmetric matrix with no definiteness requirement.
class SymmetricMatrix {
 public:
  /// Throws ValidationError if `m` is not square and symmetric.
  explicit SymmetricMatrix(const Matrix& m);

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }

 private:
  Matrix m_;
};

/// A point on SPD(p). Holds its eigendecomposition, so square roots and
/// inverses are cheap once the value exists. Copies share immutable storage.
class SpdMatrix {
 public:
  /// Validates symmetry and positive definiteness (ValidationError).
  explicit SpdMatrix(const Matrix& m);

  static SpdMatrix identity(Index p);

  /// Wraps the result of an internal computation: symmetrizes and raises
  /// NumericalError instead of ValidationError when the result is not PD.
  static SpdMatrix from_computed(const Matrix& m);

  Index dim() const;
  const Matrix& matrix() const;
  /// Ascending.
  const Vector& eigenvalues() const;
  const Matrix& eigenvectors() const;
  const Matrix& sqrt() const;
  const Matrix& inv_sqrt() const;
  Matrix inverse() const;

  /// Same point when the matrices agree to kSymmetryTolerance relative to
  /// their largest entry.
  bool same_point(const SpdMatrix& other) const;

 private:
  struct Impl;
  explicit SpdMatrix(std::shared_ptr<const Impl> impl);
  friend SpdMatrix make_from_decomposition(Matrix, Vector, Matrix);
  std::shared_ptr<const Impl> impl_;
};

/// A symmetric matrix in the tangent space T_base SPD(p).
class TangentVector {
 public:
  /// Throws DimensionError on size mismatch and ValidationError when `v`
  /// is not symmetric.
  TangentVector(SpdMatrix base, const Matrix& v);

  static TangentVector zero(const SpdMatrix& base);

  Index dim() const { return v_.rows(); }
  const SpdMatrix& base() const { return base_; }
  const Matrix& matrix() const { return v_; }

  TangentVector scaled(double s) const;
  /// Both operands must share a base point.
  TangentVector plus(const TangentVector& other) const;

 private:
  struct Unchecked {};
  TangentVector(SpdMatrix base, Matrix v, Unchecked);
  friend TangentVector make_tangent_unchecked(SpdMatrix, Matrix);

  SpdMatrix base_;
  Matrix v_;
};

/// U f(diag(lambda)) U^T for a symmetric matrix with eigenpairs (lambda, U).
template <class F>
Matrix spectral_apply(const Vector& eigenvalues, const Matrix& eigenvectors, F&& f) {
  Vector mapped = eigenvalues.unaryExpr(f);
  return eigenvectors * mapped.asDiagonal() * eigenvectors.transpose();
}

/// Matrix exponential of a symmetric matrix.
Matrix sym_exp(const Matrix& s);
/// Matrix logarithm of an SPD matrix.
Matrix sym_log(const SpdMatrix& s);

SpdMatrix exp_map(const SpdMatrix& base, const TangentVector& v);
TangentVector log_map(const SpdMatrix& base, const SpdMatrix& q);
double geodesic_distance(const SpdMatrix& p, const SpdMatrix& q);
double inner_product(const SpdMatrix& base, const TangentVector& u, const TangentVector& v);
/// sqrt(<v, v>_base).
double riemannian_norm(const TangentVector& v);

/// Transport of `w` (anchored at p) along the geodesic from p to q.
TangentVector parallel_transport(const SpdMatrix& p, const SpdMatrix& q, const TangentVector& w);

struct KarcherOptions {
  double step = 1.0;
  /// Defaults to 1e-9 * N.
  std::optional<double> tol;
  int max_iter = 200;
};

struct KarcherResult {
  SpdMatrix mean;
  int iterations = 0;
  /// Frobenius norm of sum_i Log(mean, y_i) at the returned iterate.
  double gradient_norm = 0.0;
  /// Frobenius norm of sum_i Log(mean, y_i) whitened by the mean, i.e. the
  /// Riemannian norm of the gradient.
  double riemannian_gradient_norm = 0.0;
  /// Machine epsilon times the summed condition numbers of the whitened
  /// points: the size of rounding error in the whitened gradient.
  double rounding_level = 0.0;
  bool converged = false;
  /// No step down to 1e-12 times the full length decreased the gradient.
  bool stalled = false;
};

/// Gradient iteration y <- Exp(y, (t/N) sum_i Log(y, y_i)) started at the
/// log-Euclidean mean exp(mean_i log y_i), with t = step * 2N / (N + sum_i h(s_i)), h(x) = x coth(x),
/// s_i half the spread of the log-eigenvalues of y^{-1/2} y_i y^{-1/2}. A step
/// that does not decrease the Riemannian gradient norm is retried at half
/// length. Returns the last iterate with `converged == false` when max_iter
/// is exhausted or the step length collapses.
KarcherResult karcher_mean(std::span<const SpdMatrix> points, const KarcherOptions& options = {});

inline constexpr double kDefaultSpdFloor = 1e-6;

/// Eigenvalue clipping at zero followed by +eps I, eps = 1e-8, 1e-7, ...
/// until the smallest eigenvalue reaches `floor`. Returns S itself when it
/// already satisfies the floor.
SpdMatrix project_to_spd(const SymmetricMatrix& s, double floor = kDefaultSpdFloor);

/// Half-vectorization of a symmetric p x p matrix into p(p+1)/2 coordinates:
/// diagonal entries as-is, off-diagonal entries (i < j) scaled by sqrt(2), so
/// the Euclidean inner product of coordinates is the Frobenius inner product.
/// Order: row-major upper triangle.
Vector hvec(const Matrix& s);
Matrix hvec_inverse(const Vector& coords, Index p);
inline Index hvec_size(Index p) { return p * (p + 1) / 2; }

}  // namespace covtraj::spd
