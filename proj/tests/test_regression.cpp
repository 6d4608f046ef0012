#include "covtraj/error.hpp"
#include "covtraj/regression.hpp"
#include "covtraj/stats.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

using namespace covtraj;
using namespace covtraj::spd;
using namespace covtraj::regression;
using covtraj::testing::random_pd;
using covtraj::testing::random_symmetric;
using covtraj::testing::rel_error;

namespace {

struct GeodesicData {
  SpdMatrix base;
  TangentVector velocity;
  std::vector<double> times;
  std::vector<SpdMatrix> points;
};

GeodesicData geodesic_data(int p, std::uint64_t seed, std::vector<double> times = {-1.5, -0.5, 0.5, 1.5}) {
  std::mt19937_64 rng(seed);
  SpdMatrix b(random_pd(p, rng));
  TangentVector v(b, random_symmetric(p, rng, 0.3));
  std::vector<SpdMatrix> pts;
  for (double t : times) pts.push_back(exp_map(b, v.scaled(t)));
  return {b, v, std::move(times), std::move(pts)};
}

}  // namespace

TEST(FitLcglm, ConstantResponsesGiveZeroSlope) {
  std::mt19937_64 rng(1);
  SpdMatrix a(random_pd(3, rng));
  std::vector<SpdMatrix> ys(5, a);
  std::vector<double> t{0, 1, 2, 3, 4};
  auto fit = fit_lcglm(ys, CovariateMatrix::from_times(t));
  EXPECT_LT(rel_error(fit.base.matrix(), a.matrix()), 1e-12);
  EXPECT_LE(fit.slopes[0].matrix().norm(), 1e-8);
  EXPECT_LE(fit.slopes_at_identity[0].matrix().norm(), 1e-8);
}

TEST(FitLcglm, RecoversExactGeodesic) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    int p = 2 + static_cast<int>(seed % 4);
    auto g = geodesic_data(p, seed);
    auto fit = fit_lcglm(g.points, CovariateMatrix::from_times(g.times));
    auto expected = parallel_transport(g.base, SpdMatrix::identity(p), g.velocity);
    EXPECT_LT((fit.slopes_at_identity[0].matrix() - expected.matrix()).norm(), 1e-8);
    double scale = 0.0;
    for (const auto& y : g.points) scale += y.matrix().squaredNorm();
    EXPECT_LE(fit.residual_sse, 1e-12 * scale);
    for (std::size_t i = 0; i < g.times.size(); ++i) {
      Vector x(1);
      x << g.times[i];
      EXPECT_LT(rel_error(predict(fit, x).matrix(), g.points[i].matrix()), 1e-8);
    }
  }
}

TEST(FitLcglm, ScalarCaseMatchesLogLinearRegression) {
  // On SPD(1) the model is log y = log b + beta (t - tbar).
  std::mt19937_64 rng(7);
  std::normal_distribution<double> z;
  std::vector<double> t{0.0, 0.5, 1.0, 2.0, 3.5, 4.0};
  std::vector<SpdMatrix> ys;
  std::vector<double> logs;
  for (double ti : t) {
    double l = 0.3 + 0.2 * ti + 0.1 * z(rng);
    logs.push_back(l);
    ys.push_back(SpdMatrix(Matrix::Constant(1, 1, std::exp(l))));
  }
  double tbar = std::accumulate(t.begin(), t.end(), 0.0) / t.size();
  double lbar = std::accumulate(logs.begin(), logs.end(), 0.0) / logs.size();
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    sxy += (t[i] - tbar) * (logs[i] - lbar);
    sxx += (t[i] - tbar) * (t[i] - tbar);
  }
  double beta = sxy / sxx;
  auto fit = fit_lcglm(ys, CovariateMatrix::from_times(t));
  EXPECT_NEAR(fit.base.matrix()(0, 0), std::exp(lbar), 1e-10);
  EXPECT_NEAR(fit.slopes_at_identity[0].matrix()(0, 0), beta, 1e-10);
  EXPECT_NEAR(fit.slopes[0].matrix()(0, 0), std::exp(lbar) * beta, 1e-10);
}

TEST(FitLcglm, IdentityBaseSlopesCoincide) {
  auto i3 = SpdMatrix::identity(3);
  std::mt19937_64 rng(3);
  TangentVector v(i3, random_symmetric(3, rng, 0.4));
  std::vector<double> t{-1, 1};
  std::vector<SpdMatrix> ys{exp_map(i3, v.scaled(-1)), exp_map(i3, v.scaled(1))};
  auto fit = fit_lcglm(ys, CovariateMatrix::from_times(t));
  EXPECT_LT((fit.base.matrix() - Matrix::Identity(3, 3)).norm(), 1e-10);
  EXPECT_LT((fit.slopes[0].matrix() - fit.slopes_at_identity[0].matrix()).norm(), 1e-10);
}

TEST(FitLcglm, InvariantToRelabeling) {
  std::mt19937_64 rng(4);
  std::vector<SpdMatrix> ys;
  std::vector<double> t;
  for (int i = 0; i < 8; ++i) {
    ys.push_back(SpdMatrix(random_pd(3, rng)));
    t.push_back(0.5 * i);
  }
  auto fit = fit_lcglm(ys, CovariateMatrix::from_times(t));
  std::vector<int> order{3, 0, 7, 5, 1, 6, 2, 4};
  std::vector<SpdMatrix> ys2;
  std::vector<double> t2;
  for (int i : order) {
    ys2.push_back(ys[i]);
    t2.push_back(t[i]);
  }
  auto fit2 = fit_lcglm(ys2, CovariateMatrix::from_times(t2));
  EXPECT_LT(rel_error(fit.base.matrix(), fit2.base.matrix()), 1e-9);
  EXPECT_LT(rel_error(fit.slopes[0].matrix(), fit2.slopes[0].matrix()), 1e-9);
  EXPECT_NEAR(fit.residual_sse, fit2.residual_sse, 1e-9 * std::max(1.0, fit.residual_sse));
}

TEST(FitLcglm, MultipleCovariates) {
  std::mt19937_64 rng(5);
  SpdMatrix b(random_pd(2, rng));
  TangentVector v1(b, random_symmetric(2, rng, 0.2));
  TangentVector v2(b, random_symmetric(2, rng, 0.2));
  Matrix x(6, 2);
  x << -1, 0.5, 1, -0.5, -0.5, -1, 0.5, 1, 0, 0.2, 0, -0.2;
  std::vector<SpdMatrix> ys;
  for (int i = 0; i < 6; ++i) ys.push_back(exp_map(b, v1.scaled(x(i, 0)).plus(v2.scaled(x(i, 1)))));
  auto fit = fit_lcglm(ys, CovariateMatrix(x));
  ASSERT_EQ(fit.slopes.size(), 2u);
  // Data are not on one geodesic, so the fit is approximate; it must stay close.
  EXPECT_LT((fit.slopes[0].matrix() - v1.matrix()).norm(), 0.05);
  EXPECT_LT((fit.slopes[1].matrix() - v2.matrix()).norm(), 0.05);
}

TEST(FitLcglm, Errors) {
  std::vector<SpdMatrix> ys{SpdMatrix::identity(2), SpdMatrix::identity(2)};
  std::vector<double> same{1.0, 1.0};
  EXPECT_THROW(fit_lcglm(ys, CovariateMatrix::from_times(same)), ValidationError);
  std::vector<double> three{0.0, 1.0, 2.0};
  EXPECT_THROW(fit_lcglm(ys, CovariateMatrix::from_times(three)), ValidationError);
  EXPECT_THROW(fit_lcglm(std::vector<SpdMatrix>{}, CovariateMatrix::from_times(three)), ValidationError);
}

TEST(FitLcglm, AcceptsMeanAtRoundingLevel) {
  // Sample covariances of 2 or 3 samples of 5 features, projected: the whitened
  // points have condition numbers near 1e9 and the gradient iteration stalls
  // above 1e-6 * N.
  const std::vector<std::vector<double>> entries{
      {0.98427430125037008, -0.7290631660366016, 0.98930626675154865, -0.15710903172385676, 0.60251025097110467, -0.7290631660366016, 0.54109293933854752, -0.72897965820415456, 0.15494397521078576, -0.44439076498855484, 0.98930626675154865, -0.72897965820415456, 1.0079937675783652, -0.020002028427283519, 0.61236975707523356, -0.15710903172385676, 0.15494397521078576, -0.020002028427283519, 1.4207014150332622, -0.027573906663367814, 0.60251025097110467, -0.44439076498855484, 0.61236975707523356, -0.027573906663367814, 0.37219168858003637},
      {0.63194971356990581, 0.46770371920562848, -0.072933658316476246, -0.27144154920664021, 0.2771579534546938, 0.46770371920562848, 4.4404958293464256, -3.5218900808370335, 4.5081407778384515, 1.7442347209188078, -0.072933658316476246, -3.5218900808370335, 2.9457389334189878, -3.9572233160596464, -1.3356134358506089, -0.27144154920664021, 4.5081407778384515, -3.9572233160596464, 5.5325960511283689, 1.6511299578350127, 0.2771579534546938, 1.7442347209188078, -1.3356134358506089, 1.6511299578350127, 0.70012474894214971},
      {0.042254961782386823, -2.3276931155919289, 2.6508892130760904, -1.9764189716641591, -1.8182944132973562, -2.3276931155919289, 128.22833774811943, -146.03261590600064, 108.87728960330584, 100.16649822681894, 2.6508892130760904, -146.03261590600064, 166.30898892861612, -123.99470988037393, -114.074440433079, -1.9764189716641591, 108.87728960330584, -123.99470988037393, 92.446526409181686, 85.050286953443845, -1.8182944132973562, 100.16649822681894, -114.074440433079, 85.050286953443845, 78.245789890890137},
      {0.13611235919433382, -28.893944722243553, 31.877053578938813, -24.238701911069015, -20.653270536047259, -28.893944722243553, 6133.654433324712, -6766.9137202782194, 5145.431779558061, 4384.3104700032527, 31.877053578938813, -6766.9137202782194, 7465.5528460327714, -5676.6636089490967, -4836.9615537959025, -24.238701911069015, 5145.431779558061, -5676.6636089490967, 4316.4264463111022, 3677.9330613925276, -20.653270536047259, 4384.3104700032527, -4836.9615537959025, 3677.9330613925276, 3133.8867416807529},
  };
  std::vector<SpdMatrix> ys;
  for (const auto& e : entries) ys.push_back(project_to_spd(SymmetricMatrix(Eigen::Map<const Matrix>(e.data(), 5, 5))));
  auto km = karcher_mean(ys);
  EXPECT_GT(km.riemannian_gradient_norm, 1e-6 * 4.0);
  EXPECT_LE(km.riemannian_gradient_norm, 100.0 * km.rounding_level);
  std::vector<double> times{0.0, 1.0, 2.0, 3.0};
  auto fit = fit_lcglm(ys, CovariateMatrix::from_times(times));
  EXPECT_LT((fit.base.matrix() - km.mean.matrix()).norm(), 1e-12 * km.mean.matrix().norm());
}

TEST(Predict, ZeroCenteredCovariateGivesBase) {
  auto g = geodesic_data(3, 9);
  auto fit = fit_lcglm(g.points, CovariateMatrix::from_times(g.times));
  EXPECT_LT(rel_error(predict(fit, fit.covariate_mean).matrix(), fit.base.matrix()), 1e-14);
  EXPECT_THROW(predict(fit, Vector::Zero(2)), DimensionError);
}

TEST(Predict, ContinuousInCovariate) {
  auto g = geodesic_data(3, 10);
  auto fit = fit_lcglm(g.points, CovariateMatrix::from_times(g.times));
  Vector x(1), y(1);
  x << 0.7;
  for (double h : {1e-2, 1e-4, 1e-6}) {
    y << 0.7 + h;
    double d = geodesic_distance(predict(fit, x), predict(fit, y));
    EXPECT_NEAR(d, h * riemannian_norm(fit.slopes[0]), 1e-3 * h + 1e-12);
  }
}

TEST(TrajectoryStat, ZeroForSameFitAndSymmetric) {
  auto g1 = geodesic_data(3, 11);
  auto g2 = geodesic_data(3, 12);
  auto f1 = fit_lcglm(g1.points, CovariateMatrix::from_times(g1.times));
  auto f2 = fit_lcglm(g2.points, CovariateMatrix::from_times(g2.times));
  EXPECT_EQ(trajectory_stat(f1, f1), 0.0);
  EXPECT_DOUBLE_EQ(trajectory_stat(f1, f2), trajectory_stat(f2, f1));
}

TEST(TrajectoryStat, FrobeniusNormOfDifferenceAtIdentity) {
  auto i3 = SpdMatrix::identity(3);
  std::mt19937_64 rng(13);
  Matrix v = random_symmetric(3, rng, 0.3);
  Matrix delta = random_symmetric(3, rng, 0.2);
  std::vector<double> t{-1, 1};
  auto make = [&](const Matrix& m) {
    TangentVector tv(i3, m);
    std::vector<SpdMatrix> ys{exp_map(i3, tv.scaled(-1)), exp_map(i3, tv.scaled(1))};
    return fit_lcglm(ys, CovariateMatrix::from_times(t));
  };
  auto f1 = make(v);
  auto f2 = make(v + delta);
  EXPECT_NEAR(trajectory_stat(f1, f2), delta.squaredNorm(), 1e-12);
}

TEST(TrajectoryTest, BoundaryAndZero) {
  auto g = geodesic_data(2, 14);
  auto f = fit_lcglm(g.points, CovariateMatrix::from_times(g.times));
  auto d = trajectory_test(f, f, 0.05, 3);
  EXPECT_EQ(d.statistic, 0.0);
  EXPECT_EQ(d.p_value, 1.0);
  EXPECT_FALSE(d.reject);
  EXPECT_THROW(trajectory_test(f, f, 0.0, 3), ValidationError);
  EXPECT_THROW(trajectory_test(f, f, 1.0, 3), ValidationError);
  EXPECT_EQ(default_trajectory_df(f), 3);

  // Two fits at the identity whose slopes differ by exactly the critical value.
  auto i1 = SpdMatrix::identity(1);
  double q = stats::chi2_quantile(0.95, 1);
  std::vector<double> t{-1, 1};
  auto make = [&](double slope) {
    TangentVector tv(i1, Matrix::Constant(1, 1, slope));
    std::vector<SpdMatrix> ys{exp_map(i1, tv.scaled(-1)), exp_map(i1, tv.scaled(1))};
    return fit_lcglm(ys, CovariateMatrix::from_times(t));
  };
  auto a = make(0.0);
  auto b = make(std::sqrt(q));
  auto at = trajectory_test(a, b, 0.05, 1);
  EXPECT_NEAR(at.statistic, q, 1e-12);
  auto just_over = trajectory_test(a, make(std::sqrt(q) * (1 + 1e-9)), 0.05, 1);
  EXPECT_TRUE(just_over.reject);
  auto just_under = trajectory_test(a, make(std::sqrt(q) * (1 - 1e-9)), 0.05, 1);
  EXPECT_FALSE(just_under.reject);
}

TEST(TrajectoryTest, NullRejectionRateNearAlpha) {
  // Responses Exp(I, E_i) with independent N(0, sigma^2) hvec coordinates:
  // each fitted slope coordinate has variance sigma^2 / sum t^2 = 1/2, so the
  // difference of two independent fits is approximately N(0, I).
  const int p = 2, per_time = 10;
  const double sigma = 0.05;
  const double a = 0.01;
  std::vector<double> t;
  for (double base : {-1.5, -0.5, 0.5, 1.5})
    for (int k = 0; k < per_time; ++k) t.push_back(a * base);
  auto i2 = SpdMatrix::identity(p);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> z;
  auto draw_fit = [&] {
    std::vector<SpdMatrix> ys;
    for (std::size_t i = 0; i < t.size(); ++i) {
      Vector c(hvec_size(p));
      for (auto& x : c) x = sigma * z(rng);
      ys.push_back(exp_map(i2, TangentVector(i2, hvec_inverse(c, p))));
    }
    return fit_lcglm(ys, CovariateMatrix::from_times(t));
  };
  const int runs = 500;
  int rejections = 0;
  for (int r = 0; r < runs; ++r) {
    auto f1 = draw_fit();
    auto f2 = draw_fit();
    if (trajectory_test(f1, f2, 0.05, 3).reject) ++rejections;
  }
  double rate = static_cast<double>(rejections) / runs;
  EXPECT_LE(std::abs(rate - 0.05), 3.0 * std::sqrt(0.05 * 0.95 / runs));
}
