#include "covtraj/spd.hpp"

#include "covtraj/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>

namespace covtraj::spd {

namespace {

using Solver = Eigen::SelfAdjointEigenSolver<Matrix>;

Solver decompose(const Matrix& m) {
  Solver solver(m);
  if (solver.info() != Eigen::Success) {
    throw NumericalError("symmetric eigendecomposition did not converge");
  }
  return solver;
}

bool definite(const Vector& eigenvalues) {
  const double lo = eigenvalues(0);
  const double hi = eigenvalues(eigenvalues.size() - 1);
  return lo > 0.0 && lo > kDefinitenessTolerance * hi && std::isfinite(hi);
}

std::string dims(Index a, Index b) {
  std::ostringstream os;
  os << a << " vs " << b;
  return os.str();
}

void require_same_dim(Index a, Index b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": dimension mismatch (" + dims(a, b) + ")");
}

void require_anchor(const SpdMatrix& base, const TangentVector& v, const char* what) {
  require_same_dim(base.dim(), v.dim(), what);
  if (!v.base().same_point(base)) {
    throw DimensionError(std::string(what) + ": tangent vector is anchored at a different base point");
  }
}

}  // namespace

Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

bool is_symmetric(const Matrix& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.allFinite()) return false;
  const double scale = m.cwiseAbs().maxCoeff();
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= kSymmetryTolerance * scale;
}

SymmetricMatrix::SymmetricMatrix(const Matrix& m) {
  if (!is_symmetric(m)) throw ValidationError("matrix is not square and symmetric");
  m_ = symmetrized(m);
}

// ---------------------------------------------------------------------------
// SpdMatrix

struct SpdMatrix::Impl {
  Matrix matrix;
  Vector eigenvalues;
  Matrix eigenvectors;

  mutable std::once_flag roots_once;
  mutable Matrix sqrt;
  mutable Matrix inv_sqrt;

  void ensure_roots() const {
    std::call_once(roots_once, [this] {
      sqrt = spectral_apply(eigenvalues, eigenvectors, [](double x) { return std::sqrt(x); });
      inv_sqrt = spectral_apply(eigenvalues, eigenvectors, [](double x) { return 1.0 / std::sqrt(x); });
    });
  }
};

SpdMatrix make_from_decomposition(Matrix m, Vector eigenvalues, Matrix eigenvectors);

SpdMatrix make_from_decomposition(Matrix m, Vector eigenvalues, Matrix eigenvectors) {
  auto impl = std::make_shared<SpdMatrix::Impl>();
  impl->matrix = std::move(m);
  impl->eigenvalues = std::move(eigenvalues);
  impl->eigenvectors = std::move(eigenvectors);
  return SpdMatrix(std::shared_ptr<const SpdMatrix::Impl>(std::move(impl)));
}

SpdMatrix::SpdMatrix(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}

SpdMatrix::SpdMatrix(const Matrix& m) {
  if (!is_symmetric(m)) throw ValidationError("SPD matrix is not square and symmetric");
  Matrix sym = symmetrized(m);
  Solver solver = decompose(sym);
  if (!definite(solver.eigenvalues())) {
    std::ostringstream os;
    os << "matrix is not positive definite (smallest eigenvalue " << solver.eigenvalues()(0) << ")";
    throw ValidationError(os.str());
  }
  *this = make_from_decomposition(std::move(sym), solver.eigenvalues(), solver.eigenvectors());
}

SpdMatrix SpdMatrix::identity(Index p) {
  if (p <= 0) throw ValidationError("identity: dimension must be positive");
  return make_from_decomposition(Matrix::Identity(p, p), Vector::Ones(p), Matrix::Identity(p, p));
}

SpdMatrix SpdMatrix::from_computed(const Matrix& m) {
  if (!m.allFinite()) throw NumericalError("computed SPD matrix has non-finite entries");
  Matrix sym = symmetrized(m);
  Solver solver = decompose(sym);
  if (!definite(solver.eigenvalues())) {
    std::ostringstream os;
    os << "computed matrix lost positive definiteness (smallest eigenvalue " << solver.eigenvalues()(0)
       << ", largest " << solver.eigenvalues()(sym.rows() - 1) << ")";
    throw NumericalError(os.str());
  }
  return make_from_decomposition(std::move(sym), solver.eigenvalues(), solver.eigenvectors());
}

Index SpdMatrix::dim() const { return impl_->matrix.rows(); }
const Matrix& SpdMatrix::matrix() const { return impl_->matrix; }
const Vector& SpdMatrix::eigenvalues() const { return impl_->eigenvalues; }
const Matrix& SpdMatrix::eigenvectors() const { return impl_->eigenvectors; }

const Matrix& SpdMatrix::sqrt() const {
  impl_->ensure_roots();
  return impl_->sqrt;
}

const Matrix& SpdMatrix::inv_sqrt() const {
  impl_->ensure_roots();
  return impl_->inv_sqrt;
}

Matrix SpdMatrix::inverse() const {
  return spectral_apply(eigenvalues(), eigenvectors(), [](double x) { return 1.0 / x; });
}

bool SpdMatrix::same_point(const SpdMatrix& other) const {
  if (impl_ == other.impl_) return true;
  if (dim() != other.dim()) return false;
  const double scale = std::max(matrix().cwiseAbs().maxCoeff(), other.matrix().cwiseAbs().maxCoeff());
  return (matrix() - other.matrix()).cwiseAbs().maxCoeff() <= kSymmetryTolerance * scale;
}

// ---------------------------------------------------------------------------
// TangentVector

TangentVector::TangentVector(SpdMatrix base, Matrix v, Unchecked) : base_(std::move(base)), v_(std::move(v)) {}

TangentVector make_tangent_unchecked(SpdMatrix base, Matrix v);

TangentVector make_tangent_unchecked(SpdMatrix base, Matrix v) {
  return TangentVector(std::move(base), symmetrized(v), TangentVector::Unchecked{});
}

TangentVector::TangentVector(SpdMatrix base, const Matrix& v) : base_(std::move(base)) {
  if (v.rows() != v.cols()) throw DimensionError("tangent vector must be square");
  require_same_dim(base_.dim(), v.rows(), "tangent vector");
  if (!v.allFinite()) throw ValidationError("tangent vector has non-finite entries");
  const double scale = v.cwiseAbs().maxCoeff();
  if ((v - v.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale) {
    throw ValidationError("tangent vector is not symmetric");
  }
  v_ = symmetrized(v);
}

TangentVector TangentVector::zero(const SpdMatrix& base) {
  return make_tangent_unchecked(base, Matrix::Zero(base.dim(), base.dim()));
}

TangentVector TangentVector::scaled(double s) const { return make_tangent_unchecked(base_, s * v_); }

TangentVector TangentVector::plus(const TangentVector& other) const {
  require_anchor(base_, other, "tangent addition");
  return make_tangent_unchecked(base_, v_ + other.v_);
}

// ---------------------------------------------------------------------------
// Matrix functions

Matrix sym_exp(const Matrix& s) {
  Solver solver = decompose(symmetrized(s));
  return symmetrized(spectral_apply(solver.eigenvalues(), solver.eigenvectors(), [](double x) { return std::exp(x); }));
}

Matrix sym_log(const SpdMatrix& s) {
  return symmetrized(spectral_apply(s.eigenvalues(), s.eigenvectors(), [](double x) { return std::log(x); }));
}

namespace {

// log of an SPD-by-construction whitened matrix.
Matrix whitened_log(const Matrix& w) {
  Solver solver = decompose(symmetrized(w));
  if (solver.eigenvalues()(0) <= 0.0) {
    throw NumericalError("whitened matrix is not positive definite; points are too far apart or ill-conditioned");
  }
  return spectral_apply(solver.eigenvalues(), solver.eigenvectors(), [](double x) { return std::log(x); });
}

}  // namespace

SpdMatrix exp_map(const SpdMatrix& base, const TangentVector& v) {
  require_anchor(base, v, "exp_map");
  if (v.matrix().isZero(0.0)) return base;
  const Matrix& root = base.sqrt();
  const Matrix& inv_root = base.inv_sqrt();
  Matrix expo = sym_exp(inv_root * v.matrix() * inv_root);
  return SpdMatrix::from_computed(root * expo * root);
}

TangentVector log_map(const SpdMatrix& base, const SpdMatrix& q) {
  require_same_dim(base.dim(), q.dim(), "log_map");
  if (base.same_point(q)) return TangentVector::zero(base);
  const Matrix& root = base.sqrt();
  const Matrix& inv_root = base.inv_sqrt();
  Matrix lg = whitened_log(inv_root * q.matrix() * inv_root);
  return make_tangent_unchecked(base, root * lg * root);
}

double geodesic_distance(const SpdMatrix& p, const SpdMatrix& q) {
  require_same_dim(p.dim(), q.dim(), "geodesic_distance");
  if (p.same_point(q)) return 0.0;
  const Matrix& inv_root = p.inv_sqrt();
  Solver solver = decompose(symmetrized(inv_root * q.matrix() * inv_root));
  if (solver.eigenvalues()(0) <= 0.0) throw NumericalError("geodesic_distance: whitened matrix is not PD");
  return std::sqrt(solver.eigenvalues().array().log().square().sum());
}

double inner_product(const SpdMatrix& base, const TangentVector& u, const TangentVector& v) {
  require_anchor(base, u, "inner_product");
  require_anchor(base, v, "inner_product");
  const Matrix& inv_root = base.inv_sqrt();
  Matrix a = inv_root * u.matrix() * inv_root;
  Matrix b = inv_root * v.matrix() * inv_root;
  return a.cwiseProduct(b).sum();
}

double riemannian_norm(const TangentVector& v) {
  return std::sqrt(std::max(0.0, inner_product(v.base(), v, v)));
}

TangentVector parallel_transport(const SpdMatrix& p, const SpdMatrix& q, const TangentVector& w) {
  require_anchor(p, w, "parallel_transport");
  require_same_dim(p.dim(), q.dim(), "parallel_transport");
  if (p.same_point(q)) return make_tangent_unchecked(q, w.matrix());
  // r = exp(p^{-1/2} Log(p,q)/2 p^{-1/2}) is the square root of the whitened
  // target p^{-1/2} q p^{-1/2}; the transport is E w E^T with
  // E = p^{1/2} r p^{-1/2}.
  const Matrix& root = p.sqrt();
  const Matrix& inv_root = p.inv_sqrt();
  Solver solver = decompose(symmetrized(inv_root * q.matrix() * inv_root));
  if (solver.eigenvalues()(0) <= 0.0) throw NumericalError("parallel_transport: whitened matrix is not PD");
  Matrix r = spectral_apply(solver.eigenvalues(), solver.eigenvectors(), [](double x) { return std::sqrt(x); });
  Matrix e = root * r * inv_root;
  return make_tangent_unchecked(q, e * w.matrix() * e.transpose());
}

KarcherResult karcher_mean(std::span<const SpdMatrix> points, const KarcherOptions& options) {
  if (points.empty()) throw ValidationError("karcher_mean: empty point set");
  const Index p = points.front().dim();
  for (const auto& y : points) require_same_dim(p, y.dim(), "karcher_mean");
  if (!(options.step > 0.0)) throw ValidationError("karcher_mean: step must be positive");
  if (options.max_iter < 0) throw ValidationError("karcher_mean: max_iter must be non-negative");

  const double n = static_cast<double>(points.size());
  const double tol = options.tol.value_or(1e-9 * n);

  // Each point's term of the cost has whitened Hessian eigenvalues in
  // [1, h(s_i)], h(x) = (x/2) coth(x/2), s_i the spread of the log-eigenvalues
  // of the whitened point; the step 2N / (N + sum_i h(s_i)) balances the two
  // ends. Steps that do not shrink the whitened gradient are damped, which
  // only happens at rounding level.
  struct Iterate {
    SpdMatrix mean;
    Matrix whitened_sum;
    double whitened_norm = 0.0;
    double grad_norm = 0.0;
    double curvature = 0.0;
    double rounding = 0.0;
  };
  auto evaluate = [&](SpdMatrix m) {
    Iterate it{std::move(m), Matrix::Zero(p, p), 0.0, 0.0, 0.0, 0.0};
    const Matrix& inv_root = it.mean.inv_sqrt();
    for (const auto& y : points) {
      if (y.same_point(it.mean)) {
        it.curvature += 1.0;
        continue;
      }
      Solver solver = decompose(symmetrized(inv_root * y.matrix() * inv_root));
      const Vector& ev = solver.eigenvalues();
      if (ev(0) <= 0.0) throw NumericalError("karcher_mean: whitened point is not positive definite");
      it.whitened_sum += spectral_apply(ev, solver.eigenvectors(), [](double x) { return std::log(x); });
      const double half_spread = 0.5 * std::log(ev(p - 1) / ev(0));
      it.rounding += std::numeric_limits<double>::epsilon() * ev(p - 1) / ev(0);
      it.curvature += half_spread > 1e-8 ? half_spread / std::tanh(half_spread) : 1.0;
    }
    it.whitened_norm = it.whitened_sum.norm();
    it.grad_norm = (it.mean.sqrt() * it.whitened_sum * it.mean.sqrt()).norm();
    return it;
  };

  Matrix log_sum = Matrix::Zero(p, p);
  for (const auto& y : points) log_sum += sym_log(y);
  Iterate current = evaluate(SpdMatrix::from_computed(sym_exp(log_sum / n)));
  double damping = 1.0;
  for (int iter = 0;; ++iter) {
    auto result = [&](bool converged, bool stalled) {
      return KarcherResult{current.mean,          iter,      current.grad_norm, current.whitened_norm,
                           current.rounding, converged, stalled};
    };
    if (current.grad_norm <= tol) return result(true, false);
    if (iter >= options.max_iter) return result(false, false);
    const double step = options.step * 2.0 * n / (n + current.curvature);
    while (true) {
      const Matrix& root = current.mean.sqrt();
      Iterate next =
          evaluate(SpdMatrix::from_computed(root * sym_exp((damping * step / n) * current.whitened_sum) * root));
      if (next.whitened_norm < current.whitened_norm) {
        current = std::move(next);
        damping = std::min(1.0, 2.0 * damping);
        break;
      }
      damping *= 0.5;
      if (damping < 1e-12) return result(false, true);
    }
  }
}

SpdMatrix project_to_spd(const SymmetricMatrix& s, double floor) {
  if (!(floor > 0.0) || !std::isfinite(floor)) throw ValidationError("project_to_spd: floor must be positive");
  Solver solver = decompose(s.matrix());
  const Vector& lambda = solver.eigenvalues();
  if (lambda(0) >= floor && definite(lambda)) {
    return make_from_decomposition(s.matrix(), lambda, solver.eigenvectors());
  }
  // Clipping and the eps shift keep the eigenvectors, so the candidate's
  // spectrum is known exactly.
  const Vector clipped = lambda.cwiseMax(0.0);
  double eps = 1e-8;
  for (int attempt = 0; attempt < 64; ++attempt, eps *= 10.0) {
    Vector shifted = clipped.array() + eps;
    if (shifted(0) >= floor && definite(shifted)) {
      Matrix candidate = symmetrized(spectral_apply(shifted, solver.eigenvectors(), [](double x) { return x; }));
      return make_from_decomposition(std::move(candidate), shifted, solver.eigenvectors());
    }
  }
  throw NumericalError("project_to_spd: could not reach the eigenvalue floor");
}

Vector hvec(const Matrix& s) {
  const Index p = s.rows();
  Vector out(hvec_size(p));
  Index k = 0;
  for (Index i = 0; i < p; ++i) {
    out(k++) = s(i, i);
    for (Index j = i + 1; j < p; ++j) out(k++) = std::sqrt(2.0) * s(i, j);
  }
  return out;
}

Matrix hvec_inverse(const Vector& coords, Index p) {
  if (coords.size() != hvec_size(p)) throw DimensionError("hvec_inverse: coordinate count does not match dimension");
  Matrix out(p, p);
  Index k = 0;
  for (Index i = 0; i < p; ++i) {
    out(i, i) = coords(k++);
    for (Index j = i + 1; j < p; ++j) {
      out(i, j) = out(j, i) = coords(k++) / std::sqrt(2.0);
    }
  }
  return out;
}

}  // namespace covtraj::spd
