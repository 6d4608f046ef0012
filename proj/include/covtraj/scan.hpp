#pragma once

// Ball-subgraph scan over a feature graph: region enumeration, per-region
// two-group statistics, size correction, null calibration and identification
// of disjoint significant regions.

#include "covtraj/dataset.hpp"
#include "covtraj/feature_graph.hpp"
#include "covtraj/spd.hpp"
#include "covtraj/stats.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace covtraj::scan {

using graph::FeatureGraph;
using spd::Matrix;
using spd::SpdMatrix;
using spd::Vector;

/// B(center, radius) on a host graph.
struct BallRegion {
  int center = 0;
  int radius = 0;
  /// Sorted.
  std::vector<int> vertices;
  /// Induced edges of the host graph.
  int edge_count = 0;
  /// FeatureGraph::fingerprint() of the host.
  std::uint64_t host = 0;
};

/// Balls of radius 0..min(max_radius, eccentricity) around every vertex.
/// Regions with the same vertex set are kept once (smallest center, then
/// smallest radius) and regions without edges are dropped. Ordered by
/// (center, radius).
std::vector<BallRegion> enumerate_balls(const FeatureGraph& graph, std::optional<int> max_radius = std::nullopt);

/// 1 - |E(R1) n E(R2)| / sqrt(|E(R1)| |E(R2)|). Throws ValidationError when a
/// region does not belong to `host` or has no edges.
double subgraph_distance(const FeatureGraph& host, const BallRegion& r1, const BallRegion& r2);

struct AvocadoResult {
  bool pass = true;
  /// Smallest lhs - rhs over all checked triples and where it occurred.
  double worst_margin = 0.0;
  int vertex = -1;
  int radius = -1;
  int inner_radius = -1;
  int checked = 0;
};

/// Checks |E(B(v,r'))| / |E(B(v,r))| >= H (1 - |E(B(v,r-r'))| / |E(B(v,r))|)^S
/// for every vertex v, every r in [1, ecc(v)] with |E(B(v,r))| > 0 and every
/// integer r' in [ceil(r/2), r]. Comparisons allow 1e-12 of rounding.
AvocadoResult avocado_check(const FeatureGraph& graph, double h, double s);

enum class StatMode { trajectory, product, glm_slope };
/// Degrees of freedom used to standardize a region statistic: the region's
/// edge count, or the number of free parameters the statistic compares.
enum class DfMode { edges, parameters };

StatMode parse_stat_mode(std::string_view name);
std::string_view to_string(StatMode mode);
DfMode parse_df_mode(std::string_view name);
std::string_view to_string(DfMode mode);

/// Everything a region statistic needs from one group.
struct GroupData {
  /// Timepoints with at least two samples.
  std::vector<double> times;
  /// Full-dimension projected dispersion matrices at those times.
  std::vector<SpdMatrix> covs;
  std::vector<int> counts;
  /// Raw samples at every timepoint.
  stats::GroupSamples samples;
  /// Naive covariance GLM slopes and their plug-in variances (hvec order).
  Vector naive_slopes;
  Vector naive_variance;
};

GroupData prepare_group(stats::GroupSamples samples, data::CovarianceKind kind, double floor = spd::kDefaultSpdFloor,
                        std::vector<std::string>* warnings = nullptr);

/// Unstandardized two-group statistic on the region's features.
///  - trajectory: squared Frobenius distance of the identity-transported
///    slopes of the region-restricted geodesic fits, divided by the
///    sampling variance sum_t w_t^2 log_wishart_variance(r, n_t - 1) of a
///    whitened slope coordinate summed over both groups (w_t the OLS weights
///    of time, r the region size capped at n_t - 1).
///  - product: -2 log likelihood ratio of separate versus pooled Gaussian
///    mean/covariance paths on the region's features.
///  - glm_slope: sum over the region's half-vectorized coordinates of the
///    squared naive-GLM slope difference over its plug-in variance.
/// Fit failures are rethrown with the region identified.
double region_raw_statistic(const BallRegion& region, const GroupData& g1, const GroupData& g2, StatMode mode,
                            double floor = spd::kDefaultSpdFloor);

/// Number of free parameters compared by the statistic: r(r+1)/2 for
/// trajectory and glm_slope, 2 r + r(r+1) for product (r = region size).
int region_parameter_count(const BallRegion& region, StatMode mode);
int region_df(const BallRegion& region, StatMode mode, DfMode df_mode);

/// standardized - 2 sqrt(log(total_edges / region_edges)).
double size_correct(double standardized, int region_edges, int total_edges);

struct ScoredRegion {
  BallRegion region;
  double raw = 0.0;
  double standardized = 0.0;
  double corrected = 0.0;
  int df = 0;
};

struct ScanOptions {
  StatMode mode = StatMode::trajectory;
  DfMode df_mode = DfMode::parameters;
  /// Regions with fewer induced edges are not scored.
  int min_region_edges = 1;
  double floor = spd::kDefaultSpdFloor;
  /// In trajectory and product modes, skip regions with as many features as
  /// the smallest per-timepoint sample count of either group, where the
  /// region sample covariances are singular.
  bool full_rank_only = true;
};

/// Whether `region` is scored under `options` given the two groups.
bool region_scorable(const BallRegion& region, const GroupData& g1, const GroupData& g2, const ScanOptions& options);

std::vector<ScoredRegion> score_regions(std::span<const BallRegion> regions, const GroupData& g1, const GroupData& g2,
                                        int total_edges, const ScanOptions& options, int workers = 1);

/// Largest corrected statistic, -infinity when there are no regions.
double scan_statistic(std::span<const ScoredRegion> scored);

/// sorted[ceil((1 - alpha) N) - 1].
double empirical_quantile(std::span<const double> sorted, double alpha);

/// Labels shuffled with a generator seeded from (seed, index).
std::vector<int> permuted_labels(std::span<const int> labels, std::uint64_t seed, std::uint64_t index);

struct NullDistribution {
  /// Ascending.
  std::vector<double> samples;
  double critical_value = 0.0;
};

/// statistic(permuted_labels(labels, seed, i)) for i in [0, n_perm), sorted;
/// the critical value is their empirical 1 - alpha quantile. Requires two
/// subjects per group. Identical for any worker count.
NullDistribution permutation_null(std::span<const int> labels, int n_perm, std::uint64_t seed, double alpha,
                                  const std::function<double(std::span<const int>)>& statistic,
                                  int workers = 1);

/// q with sum_R P(chi2_{k_R} > d_R + sqrt(d_R) (q + c_R)) = alpha, where k_R is
/// the region's parameter count, d_R its standardization df and c_R its size
/// penalty: a union bound on the scan statistic under the chi-square
/// approximation.
double asymptotic_critical_value(std::span<const ScoredRegion> scored, int total_edges, const ScanOptions& options,
                                 double alpha);

/// Greedy: take the region with the largest corrected statistic above q,
/// discard every region sharing a vertex with it, repeat. Ties go to fewer
/// edges, then the smaller center, then the smaller radius.
std::vector<ScoredRegion> identify_regions(std::span<const ScoredRegion> scored, double critical_value);

struct ScanResult {
  std::vector<ScoredRegion> regions;
  double scan_statistic = 0.0;
  double critical_value = 0.0;
  std::vector<double> null_samples;
  std::vector<ScoredRegion> identified;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

}  // namespace covtraj::scan
