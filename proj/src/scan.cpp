#include "covtraj/scan.hpp"

#include "covtraj/error.hpp"
#include "covtraj/parallel.hpp"
#include "covtraj/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace covtraj::scan {

std::vector<BallRegion> enumerate_balls(const FeatureGraph& graph, std::optional<int> max_radius) {
  if (max_radius && *max_radius < 0) throw ValidationError("max_radius must be non-negative");
  const std::uint64_t host = graph.fingerprint();
  std::vector<BallRegion> out;
  std::set<std::vector<int>> seen;
  for (int v = 0; v < graph.vertex_count(); ++v) {
    const auto dist = graph.distances_from(v);
    const int ecc = *std::max_element(dist.begin(), dist.end());
    const int top = max_radius ? std::min(*max_radius, ecc) : ecc;
    for (int r = 0; r <= top; ++r) {
      std::vector<int> verts;
      for (int u = 0; u < graph.vertex_count(); ++u) {
        const int d = dist[static_cast<std::size_t>(u)];
        if (d >= 0 && d <= r) verts.push_back(u);
      }
      const int edges = graph.induced_edge_count(verts);
      if (edges == 0) continue;
      if (!seen.insert(verts).second) continue;
      out.push_back({v, r, std::move(verts), edges, host});
    }
  }
  return out;
}

double subgraph_distance(const FeatureGraph& host, const BallRegion& r1, const BallRegion& r2) {
  const auto fp = host.fingerprint();
  if (r1.host != fp || r2.host != fp) throw ValidationError("subgraph_distance: regions come from a different graph");
  if (r1.edge_count < 1 || r2.edge_count < 1) throw ValidationError("subgraph_distance: region without edges");
  std::vector<int> common;
  std::set_intersection(r1.vertices.begin(), r1.vertices.end(), r2.vertices.begin(), r2.vertices.end(),
                        std::back_inserter(common));
  const double shared = host.induced_edge_count(common);
  return 1.0 - shared / std::sqrt(static_cast<double>(r1.edge_count) * static_cast<double>(r2.edge_count));
}

AvocadoResult avocado_check(const FeatureGraph& graph, double h, double s) {
  if (!(h > 0.0) || !(s > 0.0)) throw ValidationError("avocado_check: H and S must be positive");
  AvocadoResult result;
  result.worst_margin = std::numeric_limits<double>::infinity();
  for (int v = 0; v < graph.vertex_count(); ++v) {
    const auto dist = graph.distances_from(v);
    const int ecc = *std::max_element(dist.begin(), dist.end());
    std::vector<double> ball_edges(static_cast<std::size_t>(ecc) + 1);
    for (int r = 0; r <= ecc; ++r) {
      std::vector<int> verts;
      for (int u = 0; u < graph.vertex_count(); ++u) {
        const int d = dist[static_cast<std::size_t>(u)];
        if (d >= 0 && d <= r) verts.push_back(u);
      }
      ball_edges[static_cast<std::size_t>(r)] = graph.induced_edge_count(verts);
    }
    for (int r = 1; r <= ecc; ++r) {
      const double er = ball_edges[static_cast<std::size_t>(r)];
      if (er == 0.0) continue;
      for (int rp = (r + 1) / 2; rp <= r; ++rp) {
        const double lhs = ball_edges[static_cast<std::size_t>(rp)] / er;
        const double rhs = h * std::pow(1.0 - ball_edges[static_cast<std::size_t>(r - rp)] / er, s);
        const double margin = lhs - rhs;
        ++result.checked;
        if (margin < result.worst_margin) {
          result.worst_margin = margin;
          result.vertex = v;
          result.radius = r;
          result.inner_radius = rp;
        }
      }
    }
  }
  if (result.checked == 0) result.worst_margin = 0.0;
  result.pass = result.worst_margin >= -1e-12;
  return result;
}

StatMode parse_stat_mode(std::string_view name) {
  if (name == "trajectory") return StatMode::trajectory;
  if (name == "product") return StatMode::product;
  if (name == "glm_slope" || name == "glm-slope") return StatMode::glm_slope;
  throw ValidationError("unknown statistic '" + std::string(name) + "' (expected trajectory, product or glm_slope)");
}

std::string_view to_string(StatMode mode) {
  switch (mode) {
    case StatMode::trajectory:
      return "trajectory";
    case StatMode::product:
      return "product";
    case StatMode::glm_slope:
      return "glm_slope";
  }
  return "trajectory";
}

DfMode parse_df_mode(std::string_view name) {
  if (name == "edges") return DfMode::edges;
  if (name == "parameters") return DfMode::parameters;
  throw ValidationError("unknown df mode '" + std::string(name) + "' (expected edges or parameters)");
}

std::string_view to_string(DfMode mode) { return mode == DfMode::edges ? "edges" : "parameters"; }

GroupData prepare_group(stats::GroupSamples samples, data::CovarianceKind kind, double floor,
                        std::vector<std::string>* warnings) {
  GroupData g;
  for (auto& tc : data::timepoint_covariances(samples, kind, floor, warnings)) {
    g.times.push_back(tc.time);
    g.covs.push_back(std::move(tc.cov));
    g.counts.push_back(tc.n);
  }
  g.samples = std::move(samples);
  stats::LinearFit fit = stats::naive_cov_glm(g.covs, g.times);
  g.naive_slopes = fit.slopes.col(0);
  g.naive_variance = stats::naive_slope_variance(g.covs, g.times, g.counts);
  return g;
}

namespace {

std::vector<SpdMatrix> restrict_covs(const GroupData& g, const std::vector<int>& verts, double floor) {
  std::vector<SpdMatrix> out;
  out.reserve(g.covs.size());
  for (const auto& c : g.covs) {
    out.push_back(spd::project_to_spd(spd::SymmetricMatrix(c.matrix()(verts, verts)), floor));
  }
  return out;
}

stats::GroupSamples restrict_samples(const GroupData& g, const std::vector<int>& verts) {
  stats::GroupSamples out;
  out.reserve(g.samples.size());
  for (const auto& tp : g.samples) out.push_back({tp.time, tp.samples(Eigen::all, verts)});
  return out;
}

double whitened_slope_variance(const GroupData& g, int r) {
  const double t_mean = std::accumulate(g.times.begin(), g.times.end(), 0.0) / static_cast<double>(g.times.size());
  double sxx = 0.0;
  for (double t : g.times) sxx += (t - t_mean) * (t - t_mean);
  double v = 0.0;
  for (std::size_t i = 0; i < g.times.size(); ++i) {
    const double w = (g.times[i] - t_mean) / sxx;
    const int m = g.counts[i] - 1;
    v += w * w * stats::log_wishart_variance(std::min(r, m), m);
  }
  return v;
}

double raw_statistic(const BallRegion& region, const GroupData& g1, const GroupData& g2, StatMode mode,
                     double floor) {
  const auto& verts = region.vertices;
  switch (mode) {
    case StatMode::trajectory: {
      regression::FitOptions opts;
      opts.compute_residuals = false;
      auto c1 = restrict_covs(g1, verts, floor);
      auto c2 = restrict_covs(g2, verts, floor);
      auto f1 = regression::fit_lcglm(c1, regression::CovariateMatrix::from_times(g1.times), opts);
      auto f2 = regression::fit_lcglm(c2, regression::CovariateMatrix::from_times(g2.times), opts);
      const int r = static_cast<int>(verts.size());
      return regression::trajectory_stat(f1, f2) / (whitened_slope_variance(g1, r) + whitened_slope_variance(g2, r));
    }
    case StatMode::product: {
      auto s1 = restrict_samples(g1, verts);
      auto s2 = restrict_samples(g2, verts);
      auto path1 = stats::fit_gaussian_path(s1, floor);
      auto path2 = stats::fit_gaussian_path(s2, floor);
      auto pooled = stats::fit_gaussian_path(stats::pool_samples(s1, s2), floor);
      return stats::product_space_stat(s1, s2, path1, path2, pooled);
    }
    case StatMode::glm_slope: {
      const auto p = static_cast<int>(g1.covs.front().dim());
      double total = 0.0;
      for (std::size_t a = 0; a < verts.size(); ++a) {
        for (std::size_t b = a; b < verts.size(); ++b) {
          const int i = verts[a], j = verts[b];
          // row-major upper-triangle index of (i, j), i <= j
          const auto k = static_cast<Eigen::Index>(i * p - i * (i - 1) / 2 + (j - i));
          const double d = g1.naive_slopes(k) - g2.naive_slopes(k);
          const double v = g1.naive_variance(k) + g2.naive_variance(k);
          if (v > 0.0) total += d * d / v;
        }
      }
      return total;
    }
  }
  return 0.0;
}

}  // namespace

double region_raw_statistic(const BallRegion& region, const GroupData& g1, const GroupData& g2, StatMode mode,
                            double floor) {
  if (region.vertices.empty()) throw ValidationError("region has no vertices");
  try {
    return raw_statistic(region, g1, g2, mode, floor);
  } catch (const Error& e) {
    std::ostringstream os;
    os << "region B(" << region.center << ", " << region.radius << "): " << e.what();
    if (dynamic_cast<const NumericalError*>(&e)) throw NumericalError(os.str());
    throw ValidationError(os.str());
  }
}

int region_parameter_count(const BallRegion& region, StatMode mode) {
  const int r = static_cast<int>(region.vertices.size());
  const int m = r * (r + 1) / 2;
  return mode == StatMode::product ? 2 * r + 2 * m : m;
}

int region_df(const BallRegion& region, StatMode mode, DfMode df_mode) {
  return df_mode == DfMode::edges ? region.edge_count : region_parameter_count(region, mode);
}

double size_correct(double standardized, int region_edges, int total_edges) {
  if (region_edges < 1) throw ValidationError("size_correct: region has no edges");
  if (region_edges > total_edges) throw ValidationError("size_correct: region has more edges than the graph");
  return standardized -
         2.0 * std::sqrt(std::log(static_cast<double>(total_edges) / static_cast<double>(region_edges)));
}

bool region_scorable(const BallRegion& region, const GroupData& g1, const GroupData& g2, const ScanOptions& options) {
  if (region.edge_count < std::max(1, options.min_region_edges)) return false;
  if (!options.full_rank_only || options.mode == StatMode::glm_slope) return true;
  const auto size = static_cast<int>(region.vertices.size());
  for (const GroupData* g : {&g1, &g2}) {
    for (int count : g->counts) {
      if (size >= count) return false;
    }
  }
  return true;
}

std::vector<ScoredRegion> score_regions(std::span<const BallRegion> regions, const GroupData& g1, const GroupData& g2,
                                        int total_edges, const ScanOptions& options, int workers) {
  std::vector<const BallRegion*> kept;
  for (const auto& r : regions) {
    if (region_scorable(r, g1, g2, options)) kept.push_back(&r);
  }
  std::vector<ScoredRegion> out(kept.size());
  parallel_for(
      kept.size(),
      [&](std::size_t i) {
        const BallRegion& r = *kept[i];
        ScoredRegion& s = out[i];
        s.region = r;
        s.raw = region_raw_statistic(r, g1, g2, options.mode, options.floor);
        s.df = region_df(r, options.mode, options.df_mode);
        s.standardized = stats::standardize_region_stat(s.raw, s.df);
        s.corrected = size_correct(s.standardized, r.edge_count, total_edges);
      },
      workers);
  return out;
}

double scan_statistic(std::span<const ScoredRegion> scored) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& s : scored) best = std::max(best, s.corrected);
  return best;
}

double empirical_quantile(std::span<const double> sorted, double alpha) {
  if (sorted.empty()) throw ValidationError("empirical_quantile: no samples");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("empirical_quantile: alpha must lie in (0, 1)");
  double pos = (1.0 - alpha) * static_cast<double>(sorted.size());
  if (std::abs(pos - std::round(pos)) < 1e-9) pos = std::round(pos);
  const auto k = static_cast<std::size_t>(std::max(1.0, std::ceil(pos)));
  return sorted[std::min(k, sorted.size()) - 1];
}

std::vector<int> permuted_labels(std::span<const int> labels, std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::vector<int> out(labels.begin(), labels.end());
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

NullDistribution permutation_null(std::span<const int> labels, int n_perm, std::uint64_t seed, double alpha,
                                  const std::function<double(std::span<const int>)>& statistic, int workers) {
  if (n_perm < 1) throw ValidationError("permutation_null: need at least one permutation");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("permutation_null: alpha must lie in (0, 1)");
  std::array<int, 2> sizes{0, 0};
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("permutation_null: labels must be 0 or 1");
    ++sizes[static_cast<std::size_t>(l)];
  }
  if (sizes[0] < 2 || sizes[1] < 2) throw ValidationError("permutation_null: need at least two subjects per group");
  NullDistribution out;
  out.samples.resize(static_cast<std::size_t>(n_perm));
  parallel_for(
      out.samples.size(),
      [&](std::size_t i) {
        auto perm = permuted_labels(labels, seed, i);
        out.samples[i] = statistic(perm);
      },
      workers);
  std::sort(out.samples.begin(), out.samples.end());
  out.critical_value = empirical_quantile(out.samples, alpha);
  return out;
}

double asymptotic_critical_value(std::span<const ScoredRegion> scored, int total_edges, const ScanOptions& options,
                                 double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("asymptotic_critical_value: alpha must lie in (0, 1)");
  if (scored.empty()) return std::numeric_limits<double>::infinity();
  auto exceed = [&](double q) {
    double total = 0.0;
    for (const auto& s : scored) {
      const double d = s.df;
      const double penalty =
          2.0 * std::sqrt(std::log(static_cast<double>(total_edges) / static_cast<double>(s.region.edge_count)));
      const double threshold = d + std::sqrt(d) * (q + penalty);
      total += stats::chi2_sf(std::max(0.0, threshold), region_parameter_count(s.region, options.mode));
    }
    return total;
  };
  double lo = -1.0, hi = 1.0;
  while (exceed(lo) < alpha && lo > -1e6) lo *= 2.0;
  while (exceed(hi) > alpha && hi < 1e12) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-10 * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (exceed(mid) > alpha ? lo : hi) = mid;
  }
  return hi;
}

std::vector<ScoredRegion> identify_regions(std::span<const ScoredRegion> scored, double critical_value) {
  std::vector<const ScoredRegion*> candidates;
  for (const auto& s : scored) {
    if (s.corrected > critical_value) candidates.push_back(&s);
  }
  std::sort(candidates.begin(), candidates.end(), [](const ScoredRegion* a, const ScoredRegion* b) {
    if (a->corrected != b->corrected) return a->corrected > b->corrected;
    if (a->region.edge_count != b->region.edge_count) return a->region.edge_count < b->region.edge_count;
    if (a->region.center != b->region.center) return a->region.center < b->region.center;
    return a->region.radius < b->region.radius;
  });
  std::vector<ScoredRegion> out;
  std::set<int> used;
  for (const ScoredRegion* c : candidates) {
    const bool overlaps =
        std::any_of(c->region.vertices.begin(), c->region.vertices.end(), [&](int v) { return used.count(v) > 0; });
    if (overlaps) continue;
    used.insert(c->region.vertices.begin(), c->region.vertices.end());
    out.push_back(*c);
  }
  return out;
}

}  // namespace covtraj::scan
