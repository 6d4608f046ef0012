#include "covtraj/dataset.hpp"
#include "covtraj/error.hpp"
#include "covtraj/parallel.hpp"
#include "covtraj/pipeline.hpp"
#include "covtraj/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

using namespace covtraj;
using namespace covtraj::data;
using spd::Matrix;

namespace {

std::string error_of(const std::string& csv) {
  std::istringstream in(csv);
  try {
    parse_csv(in);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return {};
}

bool contains(const std::string& s, const std::string& needle) { return s.find(needle) != std::string::npos; }

const char* kSmallCsv =
    "subject_id,group,time,a,b\n"
    "s1,0,0,1.0,2.0\n"
    "s1,0,1,1.5,2.5\n"
    "s2,1,0,0.5,0.1\n"
    "s3,1,0.5,0.7,0.2\n";

LongitudinalDataset simulated(int p, int p_t, int n, std::uint64_t seed, double signal = 3.5) {
  sim::SimConfig c;
  c.p = p;
  c.p_t = p_t;
  c.n = n;
  c.signal_scale = signal;
  return sim::gen_group_data(c, seed).dataset;
}

}  // namespace

TEST(IngestCsv, WellFormedFile) {
  std::istringstream in(kSmallCsv);
  auto d = parse_csv(in);
  EXPECT_EQ(d.subject_count(), 3);
  EXPECT_EQ(d.feature_count(), 2);
  EXPECT_EQ(d.feature_names(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.records().size(), 4u);
  EXPECT_EQ(d.subject_groups(), (std::vector<int>{0, 1, 1}));
  EXPECT_DOUBLE_EQ(d.records()[3].time, 0.5);
}

TEST(IngestCsv, Errors) {
  EXPECT_TRUE(contains(error_of("subject_id,group,time,a\ns1,0,0,1\ns2,0,1,2\n"), "group 1"));
  auto dup = error_of("subject_id,group,time,a\ns1,0,0,1\ns2,1,0,2\ns1,0,0,3\n");
  EXPECT_TRUE(contains(dup, "2") && contains(dup, "4")) << dup;
  EXPECT_TRUE(contains(error_of("id,group,time,a\ns1,0,0,1\n"), "header"));
  EXPECT_TRUE(contains(error_of("subject_id,group,time,a\ns1,0,0,x\ns2,1,0,1\n"), "line 2"));
  EXPECT_TRUE(contains(error_of("subject_id,group,time,a\ns1,2,0,1\ns2,1,0,1\n"), "group label"));
  EXPECT_TRUE(contains(error_of("subject_id,group,time,a\ns1,0,0,1,5\n"), "fields"));
  EXPECT_TRUE(contains(error_of(""), "empty"));
  EXPECT_THROW(ingest_csv("/nonexistent/file.csv"), ValidationError);
}

TEST(IngestCsv, MissingValuesDroppedWithWarning) {
  std::istringstream in("subject_id,group,time,a,b\ns1,0,0,1,NA\ns1,0,1,1,2\ns2,1,0,,3\ns2,1,1,4,5\n");
  std::vector<std::string> warnings;
  auto d = parse_csv(in, &warnings);
  EXPECT_EQ(d.records().size(), 2u);
  ASSERT_EQ(warnings.size(), 2u);
  EXPECT_TRUE(contains(warnings[0], "line 2"));
  EXPECT_TRUE(contains(warnings[1], "line 4"));
}

TEST(IngestCsv, WriteRoundTrip) {
  auto d = simulated(6, 2, 16, 3);
  std::ostringstream out;
  write_csv(out, d);
  std::istringstream in(out.str());
  auto back = parse_csv(in);
  ASSERT_EQ(back.records().size(), d.records().size());
  for (std::size_t i = 0; i < d.records().size(); ++i) {
    EXPECT_EQ(back.records()[i].features, d.records()[i].features);
    EXPECT_EQ(back.records()[i].time, d.records()[i].time);
  }
  EXPECT_EQ(back.subject_ids(), d.subject_ids());
}

TEST(TimepointCovariances, TextbookSampleCovariance) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Matrix x(9, 3);
  for (auto& v : x.reshaped()) v = z(rng);
  Matrix direct = Matrix::Zero(3, 3);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double ma = x.col(a).mean(), mb = x.col(b).mean();
      for (int i = 0; i < 9; ++i) direct(a, b) += (x(i, a) - ma) * (x(i, b) - mb);
      direct(a, b) /= 8.0;
    }
  }
  EXPECT_LT((dispersion_matrix(x, CovarianceKind::sample) - direct).cwiseAbs().maxCoeff(), 1e-12);
  Matrix pearson = dispersion_matrix(x, CovarianceKind::pearson);
  EXPECT_NEAR(pearson(0, 1), direct(0, 1) / std::sqrt(direct(0, 0) * direct(1, 1)), 1e-12);
  EXPECT_NEAR(pearson(2, 2), 1.0, 1e-15);
}

TEST(TimepointCovariances, SpearmanIsRankInvariant) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  Matrix x(12, 3);
  for (auto& v : x.reshaped()) v = z(rng);
  Matrix y = x;
  y.col(0) = x.col(0).array().exp();
  y.col(2) = x.col(2).array().cube() * 4.0 + 1.0;
  EXPECT_LT((dispersion_matrix(x, CovarianceKind::spearman) - dispersion_matrix(y, CovarianceKind::spearman)).norm(),
            1e-12);
  Matrix r = column_ranks((Matrix(4, 1) << 3.0, 1.0, 3.0, 2.0).finished());
  EXPECT_EQ(r(0, 0), 3.5);
  EXPECT_EQ(r(1, 0), 1.0);
  EXPECT_EQ(r(3, 0), 2.0);
}

TEST(TimepointCovariances, DegenerateAndDroppedTimepoints) {
  stats::GroupSamples samples;
  samples.push_back({0.0, (Matrix(2, 2) << 1, 2, 1, 2).finished()});
  samples.push_back({1.0, (Matrix(1, 2) << 3, 4).finished()});
  samples.push_back({2.0, (Matrix(3, 2) << 1, 0, 0, 1, 2, 2).finished()});
  std::vector<std::string> warnings;
  auto covs = timepoint_covariances(samples, CovarianceKind::sample, 1e-6, &warnings);
  ASSERT_EQ(covs.size(), 2u);
  EXPECT_EQ(covs[0].time, 0.0);
  EXPECT_GE(covs[0].cov.eigenvalues().minCoeff(), 1e-6);
  EXPECT_LT(covs[0].cov.matrix().norm(), 1e-5);
  ASSERT_EQ(warnings.size(), 1u);
  samples.pop_back();
  EXPECT_THROW(timepoint_covariances(samples, CovarianceKind::sample), ValidationError);
}

TEST(Pipeline, ConfigValidation) {
  pipeline::PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.n_perm = 0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_EQ(pipeline::parse_null_mode("asymptotic"), pipeline::NullMode::asymptotic);
  EXPECT_THROW(pipeline::parse_null_mode("bootstrap"), ValidationError);
}

TEST(Pipeline, ReportIsDeterministicAcrossWorkerCounts) {
  auto d = simulated(12, 4, 60, 5);
  pipeline::PipelineConfig c;
  c.n_perm = 19;
  c.seed = 77;
  c.max_radius = 1;
  auto a = pipeline::run_pipeline(d, c, 1);
  auto b = pipeline::run_pipeline(d, c, 3);
  auto r1 = pipeline::report_string(a, d, c);
  EXPECT_EQ(r1, pipeline::report_string(b, d, c));
  EXPECT_EQ(r1, pipeline::report_string(pipeline::run_pipeline(d, c, 2), d, c));
  c.seed = 78;
  EXPECT_NE(r1, pipeline::report_string(pipeline::run_pipeline(d, c, 1), d, c));
}

TEST(Pipeline, ReportCompleteness) {
  auto d = simulated(10, 3, 60, 6);
  pipeline::PipelineConfig c;
  c.n_perm = 9;
  c.max_radius = 1;
  auto res = pipeline::run_pipeline(d, c, 1);
  auto j = pipeline::report_json(res, d, c);
  for (const char* key : {"config", "graph", "regions", "critical_value", "identified", "null_quantiles", "seed"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["regions"].size(), res.scan.regions.size());
  for (const auto& r : j["regions"]) {
    EXPECT_TRUE(r.contains("raw") && r.contains("standardized") && r.contains("corrected"));
    for (const auto& f : r["features"]) EXPECT_EQ(f.get<std::string>().front(), 'f');
  }
  EXPECT_EQ(j["n_null"], 9);
  EXPECT_EQ(res.scan.null_samples.size(), 9u);
  for (const auto& s : res.scan.identified) EXPECT_GT(s.corrected, res.scan.critical_value);
  std::ostringstream csv;
  pipeline::write_regions_csv(csv, res, d);
  const std::string table = csv.str();
  EXPECT_EQ(static_cast<std::size_t>(std::count(table.begin(), table.end(), '\n')),
            res.scan.regions.size() + 1);
}

TEST(Pipeline, SuppliedGraphAndPlantedSignal) {
  sim::SimConfig sc;
  sc.p = 12;
  sc.p_t = 4;
  sc.n = 400;
  auto s = sim::gen_group_data(sc, 11);
  // Planted block as a clique plus a chain over the other features.
  auto path = std::filesystem::temp_directory_path() / "covtraj_test_graph.txt";
  {
    std::ofstream out(path);
    for (std::size_t a = 0; a < s.planted.size(); ++a)
      for (std::size_t b = a + 1; b < s.planted.size(); ++b) out << s.planted[a] << ' ' << s.planted[b] << '\n';
    std::vector<int> rest;
    for (int v = 0; v < sc.p; ++v)
      if (!std::count(s.planted.begin(), s.planted.end(), v)) rest.push_back(v);
    for (std::size_t i = 0; i + 1 < rest.size(); ++i) out << rest[i] << ' ' << rest[i + 1] << '\n';
  }
  pipeline::PipelineConfig c;
  c.graph_file = path;
  c.n_perm = 99;
  auto res = pipeline::run_pipeline(s.dataset, c, 1);
  std::filesystem::remove(path);
  ASSERT_FALSE(res.scan.identified.empty());
  std::set<int> found;
  for (const auto& r : res.scan.identified) found.insert(r.region.vertices.begin(), r.region.vertices.end());
  for (int v : s.planted) EXPECT_TRUE(found.count(v)) << "feature " << v;
  EXPECT_TRUE(std::isnan(res.observed.lambda));
}

TEST(Pipeline, StageNamedInErrors) {
  auto d = simulated(6, 2, 16, 7);
  auto path = std::filesystem::temp_directory_path() / "covtraj_bad_graph.txt";
  {
    std::ofstream out(path);
    out << "0 1\n0 17\n";
  }
  pipeline::PipelineConfig c;
  c.graph_file = path;
  try {
    pipeline::run_pipeline(d, c, 1);
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_TRUE(contains(e.what(), "graph_file")) << e.what();
    EXPECT_TRUE(contains(e.what(), "line 2")) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Pipeline, AsymptoticMode) {
  auto d = simulated(8, 3, 400, 8);
  pipeline::PipelineConfig c;
  c.null_mode = pipeline::NullMode::asymptotic;
  auto res = pipeline::run_pipeline(d, c, 1);
  EXPECT_TRUE(res.scan.null_samples.empty());
  EXPECT_TRUE(std::isfinite(res.scan.critical_value));
  auto mentions_asymptotic = [](const std::vector<std::string>& warnings) {
    return std::any_of(warnings.begin(), warnings.end(),
                       [](const std::string& w) { return w.find("asymptotic") != std::string::npos; });
  };
  EXPECT_FALSE(mentions_asymptotic(res.warnings));
  auto small = simulated(8, 3, 40, 8);
  auto few = pipeline::run_pipeline(small, c, 1);
  EXPECT_TRUE(mentions_asymptotic(few.warnings));
}

TEST(Pipeline, OtherStatisticModes) {
  auto d = simulated(8, 3, 80, 9);
  for (auto mode : {scan::StatMode::product, scan::StatMode::glm_slope}) {
    pipeline::PipelineConfig c;
    c.stat_mode = mode;
    c.n_perm = 9;
    c.covariance_kind = CovarianceKind::pearson;
    auto res = pipeline::run_pipeline(d, c, 1);
    EXPECT_FALSE(res.scan.regions.empty());
    for (const auto& r : res.scan.regions) EXPECT_TRUE(std::isfinite(r.corrected));
  }
}

TEST(Parallel, RethrowsSmallestFailingIndex) {
  std::vector<int> hits(100, 0);
  parallel_for(100, [&](std::size_t i) { hits[i] = 1; }, 4);
  EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 100);
  try {
    parallel_for(
        50,
        [](std::size_t i) {
          if (i == 7 || i == 30) throw ValidationError("index " + std::to_string(i));
        },
        3);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "index 7");
  }
}
