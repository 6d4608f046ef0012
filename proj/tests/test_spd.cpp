#include "covtraj/error.hpp"
#include "covtraj/spd.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>
#include <vector>

using namespace covtraj;
using namespace covtraj::spd;
using covtraj::testing::random_pd;
using covtraj::testing::random_symmetric;
using covtraj::testing::rel_error;

namespace {

// p^{1/2} expm(p^{-1/2} v p^{-1/2}) p^{1/2} with general-purpose matrix functions.
Matrix oracle_exp(const Matrix& p, const Matrix& v) {
  Matrix s = p.sqrt();
  Matrix si = s.inverse();
  Matrix inner = si * v * si;
  return s * inner.exp() * s;
}

Matrix oracle_log(const Matrix& p, const Matrix& q) {
  Matrix s = p.sqrt();
  Matrix si = s.inverse();
  Matrix inner = si * q * si;
  return s * inner.log() * s;
}

double oracle_distance(const Matrix& p, const Matrix& q) {
  Matrix si = p.sqrt().inverse();
  Matrix l = (si * q * si).log();
  return std::sqrt((l * l).trace());
}

}  // namespace

TEST(SpdMatrix, RejectsAsymmetricAndIndefinite) {
  Matrix a(2, 2);
  a << 1, 0.5, 0.4, 1;
  EXPECT_THROW(SpdMatrix{a}, ValidationError);
  Matrix b(2, 2);
  b << 1, 0, 0, -1;
  EXPECT_THROW(SpdMatrix{b}, ValidationError);
}

TEST(ExpMap, ZeroTangentReturnsBase) {
  auto i2 = SpdMatrix::identity(2);
  EXPECT_LT((exp_map(i2, TangentVector::zero(i2)).matrix() - Matrix::Identity(2, 2)).norm(), 1e-15);
}

TEST(ExpMap, IdentityBaseIsMatrixExponential) {
  auto i2 = SpdMatrix::identity(2);
  TangentVector v(i2, std::log(2.0) * Matrix::Identity(2, 2));
  EXPECT_LT((exp_map(i2, v).matrix() - 2.0 * Matrix::Identity(2, 2)).norm(), 1e-14);
}

TEST(ExpMap, MatchesGeneralMatrixFunctions) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    int p = 2 + trial % 5;
    Matrix b = random_pd(p, rng);
    Matrix v = random_symmetric(p, rng, 0.5);
    SpdMatrix base(b);
    EXPECT_LT(rel_error(exp_map(base, TangentVector(base, v)).matrix(), oracle_exp(b, v)), 1e-10);
    Matrix q = random_pd(p, rng);
    EXPECT_LT(rel_error(log_map(base, SpdMatrix(q)).matrix(), oracle_log(b, q)), 1e-10);
  }
}

TEST(ExpMap, RejectsTangentAtOtherBase) {
  auto i2 = SpdMatrix::identity(2);
  SpdMatrix two(2.0 * Matrix::Identity(2, 2));
  EXPECT_THROW(exp_map(two, TangentVector::zero(i2)), DimensionError);
  EXPECT_THROW(exp_map(SpdMatrix::identity(3), TangentVector::zero(i2)), DimensionError);
}

TEST(LogMap, SamePointGivesZero) {
  std::mt19937_64 rng(3);
  SpdMatrix p(random_pd(4, rng));
  EXPECT_LT(log_map(p, p).matrix().norm(), 1e-12);
}

TEST(LogMap, IdentityToScaledIdentity) {
  auto i2 = SpdMatrix::identity(2);
  SpdMatrix e(std::exp(1.0) * Matrix::Identity(2, 2));
  EXPECT_LT((log_map(i2, e).matrix() - Matrix::Identity(2, 2)).norm(), 1e-14);
}

TEST(LogMap, RoundTripsOnRandomInstances) {
  std::mt19937_64 rng(2024);
  double worst_exp_log = 0.0;
  double worst_log_exp = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    int p = 2 + trial % 7;
    SpdMatrix base(random_pd(p, rng));
    SpdMatrix q(random_pd(p, rng));
    worst_exp_log = std::max(worst_exp_log, rel_error(exp_map(base, log_map(base, q)).matrix(), q.matrix()));
    TangentVector v(base, random_symmetric(p, rng, 0.3));
    worst_log_exp = std::max(worst_log_exp, rel_error(log_map(base, exp_map(base, v)).matrix(), v.matrix()));
  }
  EXPECT_LE(worst_exp_log, 1e-10);
  EXPECT_LE(worst_log_exp, 1e-10);
}

TEST(GeodesicDistance, KnownValues) {
  auto i2 = SpdMatrix::identity(2);
  SpdMatrix e(std::exp(1.0) * Matrix::Identity(2, 2));
  EXPECT_NEAR(geodesic_distance(i2, e), std::sqrt(2.0), 1e-12);
  EXPECT_EQ(geodesic_distance(e, e), 0.0);
}

TEST(GeodesicDistance, AxiomsAndOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    int p = 2 + trial % 6;
    Matrix a = random_pd(p, rng);
    Matrix b = random_pd(p, rng);
    SpdMatrix pa(a), pb(b);
    double d = geodesic_distance(pa, pb);
    EXPECT_GT(d, 0.0);
    EXPECT_NEAR(d, geodesic_distance(pb, pa), 1e-10);
    EXPECT_NEAR(d, oracle_distance(a, b), 1e-9 * std::max(1.0, d));
    EXPECT_LT(geodesic_distance(pa, pa), 1e-12);
  }
}

TEST(GeodesicDistance, AffineInvariant) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    int p = 2 + trial % 5;
    Matrix a = random_pd(p, rng);
    Matrix b = random_pd(p, rng);
    Matrix g = covtraj::testing::gaussian_matrix(p, p, rng) + 2.0 * Matrix::Identity(p, p);
    if (std::abs(g.determinant()) < 1e-2) continue;
    Matrix ga = g.transpose() * a * g;
    Matrix gb = g.transpose() * b * g;
    double d0 = geodesic_distance(SpdMatrix(a), SpdMatrix(b));
    double d1 = geodesic_distance(SpdMatrix(symmetrized(ga)), SpdMatrix(symmetrized(gb)));
    EXPECT_NEAR(d0, d1, 1e-8);
  }
}

TEST(InnerProduct, EuclideanAtIdentity) {
  std::mt19937_64 rng(8);
  auto i3 = SpdMatrix::identity(3);
  Matrix u = random_symmetric(3, rng);
  Matrix v = random_symmetric(3, rng);
  EXPECT_NEAR(inner_product(i3, TangentVector(i3, u), TangentVector(i3, v)), (u * v).trace(), 1e-12);
}

TEST(InnerProduct, SymmetricAndPositive) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    int p = 2 + trial % 5;
    Matrix b = random_pd(p, rng);
    SpdMatrix base(b);
    TangentVector u(base, random_symmetric(p, rng));
    TangentVector v(base, random_symmetric(p, rng));
    EXPECT_NEAR(inner_product(base, u, v), inner_product(base, v, u), 1e-10);
    EXPECT_GT(inner_product(base, u, u), 0.0);
    Matrix bi = b.inverse();
    EXPECT_NEAR(inner_product(base, u, v), (bi * u.matrix() * bi * v.matrix()).trace(), 1e-9);
  }
}

TEST(ParallelTransport, SamePointIsIdentity) {
  std::mt19937_64 rng(12);
  SpdMatrix p(random_pd(4, rng));
  TangentVector w(p, random_symmetric(4, rng));
  EXPECT_LT((parallel_transport(p, p, w).matrix() - w.matrix()).norm(), 1e-12);
}

TEST(ParallelTransport, IsometryAndAngles) {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  for (int trial = 0; trial < 300; ++trial) {
    int p = 2 + trial % 6;
    SpdMatrix a(random_pd(p, rng));
    SpdMatrix b(random_pd(p, rng));
    TangentVector u(a, random_symmetric(p, rng));
    TangentVector v(a, random_symmetric(p, rng));
    auto tu = parallel_transport(a, b, u);
    auto tv = parallel_transport(a, b, v);
    ASSERT_TRUE(tu.base().same_point(b));
    worst = std::max(worst, std::abs(inner_product(b, tu, tu) - inner_product(a, u, u)));
    worst = std::max(worst, std::abs(inner_product(b, tu, tv) - inner_product(a, u, v)));
  }
  EXPECT_LE(worst, 1e-8);
}

TEST(ParallelTransport, FromIdentityToCommutingPointScales) {
  // Gamma_{I -> cI}(w) = c w.
  auto i2 = SpdMatrix::identity(2);
  SpdMatrix c(3.0 * Matrix::Identity(2, 2));
  Matrix w(2, 2);
  w << 1, 2, 2, -1;
  EXPECT_LT((parallel_transport(i2, c, TangentVector(i2, w)).matrix() - 3.0 * w).norm(), 1e-12);
}

TEST(KarcherMean, SinglePointAndRepeatedPoint) {
  std::mt19937_64 rng(21);
  SpdMatrix a(random_pd(3, rng));
  std::vector<SpdMatrix> one{a};
  auto r1 = karcher_mean(one);
  EXPECT_TRUE(r1.converged);
  EXPECT_LT(rel_error(r1.mean.matrix(), a.matrix()), 1e-12);
  std::vector<SpdMatrix> two{a, a};
  auto r2 = karcher_mean(two);
  EXPECT_TRUE(r2.converged);
  EXPECT_LT(rel_error(r2.mean.matrix(), a.matrix()), 1e-12);
}

TEST(KarcherMean, GeodesicMidpointOfCommutingPair) {
  std::vector<SpdMatrix> pts{SpdMatrix::identity(2), SpdMatrix(std::exp(2.0) * Matrix::Identity(2, 2))};
  auto r = karcher_mean(pts);
  ASSERT_TRUE(r.converged);
  // Golden-section search of the cost along the geodesic e^{2s} I.
  auto cost = [&](double s) {
    SpdMatrix y(std::exp(2.0 * s) * Matrix::Identity(2, 2));
    double c = 0.0;
    for (const auto& q : pts) c += std::pow(geodesic_distance(y, q), 2);
    return c;
  };
  double lo = -1.0, hi = 2.0;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 200; ++it) {
    double x1 = hi - g * (hi - lo), x2 = lo + g * (hi - lo);
    if (cost(x1) < cost(x2)) hi = x2; else lo = x1;
  }
  double s = 0.5 * (lo + hi);
  Matrix expected = std::exp(2.0 * s) * Matrix::Identity(2, 2);
  EXPECT_LT((r.mean.matrix() - expected).norm(), 1e-6);
  EXPECT_LT((r.mean.matrix() - std::exp(1.0) * Matrix::Identity(2, 2)).norm(), 1e-10);
}

TEST(KarcherMean, FirstOrderConditionOnRandomClouds) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    int p = 2 + trial % 6;
    int n = 3 + trial % 9;
    std::vector<SpdMatrix> pts;
    SpdMatrix center(random_pd(p, rng));
    for (int i = 0; i < n; ++i) pts.push_back(exp_map(center, TangentVector(center, random_symmetric(p, rng, 0.4))));
    auto r = karcher_mean(pts);
    ASSERT_TRUE(r.converged) << "trial " << trial;
    Matrix grad = Matrix::Zero(p, p);
    for (const auto& q : pts) grad += log_map(r.mean, q).matrix();
    EXPECT_LE(grad.norm(), 1e-9 * n);
    EXPECT_NEAR(grad.norm(), r.gradient_norm, 1e-9 * n);
  }
}

TEST(KarcherMean, ReportsNonConvergence) {
  std::mt19937_64 rng(41);
  std::vector<SpdMatrix> pts;
  for (int i = 0; i < 6; ++i) pts.push_back(SpdMatrix(random_pd(4, rng, 0.05)));
  KarcherOptions opts;
  opts.max_iter = 1;
  opts.tol = 1e-14;
  auto r = karcher_mean(pts, opts);
  EXPECT_FALSE(r.converged);
  EXPECT_GT(r.gradient_norm, 1e-14);
  EXPECT_THROW(karcher_mean(std::vector<SpdMatrix>{}), ValidationError);
  std::vector<SpdMatrix> mixed{SpdMatrix::identity(2), SpdMatrix::identity(3)};
  EXPECT_THROW(karcher_mean(mixed), DimensionError);
}

TEST(ProjectToSpd, LeavesFlooredMatrixUnchanged) {
  std::mt19937_64 rng(51);
  Matrix a = random_pd(4, rng);
  EXPECT_EQ(project_to_spd(SymmetricMatrix(a), 1e-6).matrix(), a);
}

TEST(ProjectToSpd, ClipsNegativeEigenvalue) {
  Matrix s(2, 2);
  s << 1, 0, 0, -1;
  auto out = project_to_spd(SymmetricMatrix(s), 1e-6);
  EXPECT_GE(out.eigenvalues().minCoeff(), 1e-6);
  Matrix expected(2, 2);
  expected << 1 + 1e-6, 0, 0, 1e-6;
  EXPECT_LT((out.matrix() - expected).norm(), 1e-15);
}

TEST(ProjectToSpd, RankDeficientSampleCovarianceNearClipOracle) {
  std::mt19937_64 rng(52);
  Matrix x = covtraj::testing::gaussian_matrix(3, 6, rng);
  Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix cov = centered.transpose() * centered / 2.0;
  cov = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  Matrix clip = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
  const double floor = 1e-6;
  auto out = project_to_spd(SymmetricMatrix(cov), floor);
  EXPECT_GE(out.eigenvalues().minCoeff(), floor);
  // Smallest epsilon in the 1e-8 * 10^k sequence that reaches the floor is 1e-6.
  EXPECT_LT((out.matrix() - clip - floor * Matrix::Identity(6, 6)).norm(), 1e-12);
  EXPECT_LE((out.matrix() - cov).norm(), (clip - cov).norm() + floor * std::sqrt(6.0) + 1e-12);
}

TEST(Hvec, PreservesFrobeniusInnerProduct) {
  std::mt19937_64 rng(61);
  Matrix a = random_symmetric(5, rng);
  Matrix b = random_symmetric(5, rng);
  EXPECT_NEAR(hvec(a).dot(hvec(b)), (a * b).trace(), 1e-12);
  EXPECT_LT((hvec_inverse(hvec(a), 5) - a).norm(), 1e-14);
}
