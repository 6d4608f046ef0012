#include "covtraj/pipeline.hpp"

#include "covtraj/error.hpp"
#include "covtraj/oracle_graph.hpp"
#include "covtraj/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace covtraj::pipeline {

namespace {

template <class F>
auto in_stage(const char* stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericalError& e) {
    throw NumericalError(std::string(stage) + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(stage) + ": " + e.what());
  }
}

}  // namespace

NullMode parse_null_mode(std::string_view name) {
  if (name == "permutation") return NullMode::permutation;
  if (name == "asymptotic") return NullMode::asymptotic;
  throw ValidationError("unknown null mode '" + std::string(name) + "' (expected permutation or asymptotic)");
}

std::string_view to_string(NullMode mode) { return mode == NullMode::permutation ? "permutation" : "asymptotic"; }

void PipelineConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (n_perm < 1) throw ValidationError("number of permutations must be at least 1");
  if (lambda && !(*lambda >= 0.0 && std::isfinite(*lambda))) throw ValidationError("lambda must be non-negative");
  if (!(target_density > 0.0 && target_density <= 1.0)) throw ValidationError("target density must lie in (0, 1]");
  if (max_radius && *max_radius < 0) throw ValidationError("max radius must be non-negative");
  if (min_region_edges < 1) throw ValidationError("minimum region edge count must be at least 1");
  if (!(spd_floor > 0.0)) throw ValidationError("SPD floor must be positive");
}

Analyzer::Analyzer(const LongitudinalDataset& dataset, const PipelineConfig& config,
                   std::optional<FeatureGraph> fixed_graph)
    : dataset_(dataset), config_(config), fixed_graph_(std::move(fixed_graph)) {
  config_.validate();
  if (fixed_graph_ && fixed_graph_->vertex_count() != dataset_.feature_count()) {
    throw DimensionError("graph has " + std::to_string(fixed_graph_->vertex_count()) + " vertices but the data have " +
                         std::to_string(dataset_.feature_count()) + " features");
  }
}

Analysis Analyzer::analyze(std::span<const int> subject_groups, std::vector<std::string>* warnings,
                           int workers) const {
  auto [g1, g2] = in_stage("covariances", [&] {
    auto split = data::split_by_group(dataset_, subject_groups);
    std::vector<std::string> local;
    auto a = scan::prepare_group(std::move(split[0]), config_.covariance_kind, config_.spd_floor, &local);
    for (auto& w : local) w = "group 0: " + w;
    const auto n0 = local.size();
    auto b = scan::prepare_group(std::move(split[1]), config_.covariance_kind, config_.spd_floor, &local);
    for (std::size_t i = n0; i < local.size(); ++i) local[i] = "group 1: " + local[i];
    if (warnings) warnings->insert(warnings->end(), local.begin(), local.end());
    return std::pair{std::move(a), std::move(b)};
  });

  Analysis out;
  in_stage("oracle_graph", [&] {
    if (fixed_graph_) {
      out.graph = *fixed_graph_;
      out.lambda = std::numeric_limits<double>::quiet_NaN();
      return;
    }
    auto diff = oracle::slope_difference_matrix(g1.covs, g2.covs, g1.times, g2.times);
    if (config_.lambda) {
      auto est = oracle::graphical_lasso(diff, *config_.lambda);
      out.graph = oracle::graph_from_precision(est.theta.matrix());
      out.lambda = *config_.lambda;
      out.ridge_shift = est.ridge_shift;
    } else {
      auto fit = oracle::tune_lambda_for_density(diff, config_.target_density);
      out.graph = std::move(fit.graph);
      out.lambda = fit.lambda;
      out.ridge_shift = fit.ridge_shift;
    }
    if (warnings && out.ridge_shift > 0.0) {
      std::ostringstream os;
      os.precision(6);
      os << "slope-difference matrix is not positive definite; added " << out.ridge_shift << " I before glasso";
      warnings->push_back(os.str());
    }
  });

  auto regions = in_stage("regions", [&] { return scan::enumerate_balls(out.graph, config_.max_radius); });

  in_stage("statistics", [&] {
    scan::ScanOptions opts{config_.stat_mode, config_.df_mode, config_.min_region_edges, config_.spd_floor,
                           config_.full_rank_only};
    out.scored = scan::score_regions(regions, g1, g2, out.graph.edge_count(), opts, workers);
    out.scan_statistic = scan::scan_statistic(out.scored);
    if (warnings) {
      int singular = 0;
      for (const auto& r : regions) {
        if (r.edge_count >= config_.min_region_edges && !scan::region_scorable(r, g1, g2, opts)) ++singular;
      }
      if (singular > 0) {
        warnings->push_back(std::to_string(singular) +
                            " regions skipped: at least as many features as samples at some timepoint");
      }
    }
  });
  return out;
}

PipelineResult run_pipeline(const LongitudinalDataset& dataset, const PipelineConfig& config, int workers) {
  in_stage("config", [&] { config.validate(); });
  std::optional<FeatureGraph> fixed;
  if (config.graph_file) {
    fixed = in_stage("graph_file", [&] { return graph::read_graph_file(*config.graph_file, dataset.feature_count()); });
  }
  Analyzer analyzer = in_stage("config", [&] { return Analyzer(dataset, config, fixed); });

  PipelineResult result;
  result.observed = analyzer.analyze(dataset.subject_groups(), &result.warnings, workers);

  auto& scan = result.scan;
  scan.alpha = config.alpha;
  scan.seed = config.seed;
  scan.regions = result.observed.scored;
  scan.scan_statistic = result.observed.scan_statistic;
  if (scan.regions.empty()) result.warnings.push_back("the graph has no region with an edge; nothing to scan");

  in_stage("null_calibration", [&] {
    if (config.null_mode == NullMode::permutation) {
      auto null = scan::permutation_null(
          dataset.subject_groups(), config.n_perm, config.seed, config.alpha,
          [&](std::span<const int> labels) { return analyzer.analyze(labels).scan_statistic; }, workers);
      scan.null_samples = std::move(null.samples);
      scan.critical_value = null.critical_value;
    } else {
      scan::ScanOptions opts{config.stat_mode, config.df_mode, config.min_region_edges, config.spd_floor,
                             config.full_rank_only};
      scan.critical_value =
          scan::asymptotic_critical_value(scan.regions, result.observed.graph.edge_count(), opts, config.alpha);
      std::size_t largest = 0;
      for (const auto& s : scan.regions) largest = std::max(largest, s.region.vertices.size());
      Eigen::Index fewest = std::numeric_limits<Eigen::Index>::max();
      for (const auto& group : data::split_by_group(dataset, dataset.subject_groups())) {
        for (const auto& tp : group) fewest = std::min(fewest, tp.samples.rows());
      }
      if (largest > 0 && fewest < 10 * static_cast<Eigen::Index>(largest)) {
        result.warnings.push_back("asymptotic calibration expects at least 10 samples per region feature at every "
                                  "timepoint; the smallest timepoint has " + std::to_string(fewest) +
                                  " samples and the largest scored region " + std::to_string(largest) + " features");
      }
    }
  });
  scan.identified = scan::identify_regions(scan.regions, scan.critical_value);
  return result;
}

namespace {

nlohmann::json number_or_null(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(); }

nlohmann::json region_json(const scan::ScoredRegion& s, const LongitudinalDataset& dataset) {
  nlohmann::json names = nlohmann::json::array();
  for (int v : s.region.vertices) names.push_back(dataset.feature_names()[static_cast<std::size_t>(v)]);
  return {{"center", s.region.center},
          {"radius", s.region.radius},
          {"vertices", s.region.vertices},
          {"features", std::move(names)},
          {"edge_count", s.region.edge_count},
          {"df", s.df},
          {"raw", number_or_null(s.raw)},
          {"standardized", number_or_null(s.standardized)},
          {"corrected", number_or_null(s.corrected)}};
}

}  // namespace

nlohmann::json config_json(const PipelineConfig& config) {
  nlohmann::json j;
  j["alpha"] = config.alpha;
  j["lambda"] = config.lambda ? nlohmann::json(*config.lambda) : nlohmann::json();
  j["target_density"] = config.target_density;
  j["n_perm"] = config.n_perm;
  j["seed"] = config.seed;
  j["max_radius"] = config.max_radius ? nlohmann::json(*config.max_radius) : nlohmann::json();
  j["stat_mode"] = std::string(scan::to_string(config.stat_mode));
  j["df_mode"] = std::string(scan::to_string(config.df_mode));
  j["graph_file"] = config.graph_file ? nlohmann::json(config.graph_file->string()) : nlohmann::json();
  j["min_region_edges"] = config.min_region_edges;
  j["covariance_kind"] = std::string(data::to_string(config.covariance_kind));
  j["null_mode"] = std::string(to_string(config.null_mode));
  j["spd_floor"] = config.spd_floor;
  j["full_rank_only"] = config.full_rank_only;
  return j;
}

nlohmann::json report_json(const PipelineResult& result, const LongitudinalDataset& dataset,
                           const PipelineConfig& config) {
  const auto& scan = result.scan;
  nlohmann::json j;
  j["config"] = config_json(config);
  j["seed"] = config.seed;
  j["features"] = dataset.feature_names();
  j["n_subjects"] = dataset.subject_count();
  j["n_records"] = dataset.records().size();

  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [u, v] : result.observed.graph.edges()) edges.push_back({u, v});
  j["graph"] = {{"source", config.graph_file ? "file" : "glasso"},
                {"vertices", result.observed.graph.vertex_count()},
                {"edges", std::move(edges)},
                {"lambda", number_or_null(result.observed.lambda)},
                {"ridge_shift", result.observed.ridge_shift}};

  nlohmann::json regions = nlohmann::json::array();
  for (const auto& s : scan.regions) regions.push_back(region_json(s, dataset));
  j["regions"] = std::move(regions);

  nlohmann::json identified = nlohmann::json::array();
  std::set<int> union_vertices;
  for (const auto& s : scan.identified) {
    identified.push_back(region_json(s, dataset));
    union_vertices.insert(s.region.vertices.begin(), s.region.vertices.end());
  }
  j["identified"] = std::move(identified);
  nlohmann::json union_names = nlohmann::json::array();
  for (int v : union_vertices) union_names.push_back(dataset.feature_names()[static_cast<std::size_t>(v)]);
  j["identified_features"] = std::move(union_names);

  j["scan_statistic"] = number_or_null(scan.scan_statistic);
  j["critical_value"] = number_or_null(scan.critical_value);
  j["reject"] = !scan.identified.empty();
  j["alpha"] = scan.alpha;

  nlohmann::json quantiles = nlohmann::json::object();
  if (!scan.null_samples.empty()) {
    for (double level : {0.5, 0.9, 0.95, 0.99}) {
      std::ostringstream key;
      key << level;
      quantiles[key.str()] = number_or_null(scan::empirical_quantile(scan.null_samples, 1.0 - level));
    }
  }
  j["null_quantiles"] = std::move(quantiles);
  j["n_null"] = scan.null_samples.size();
  j["warnings"] = result.warnings;
  return j;
}

std::string report_string(const PipelineResult& result, const LongitudinalDataset& dataset,
                          const PipelineConfig& config) {
  return report_json(result, dataset, config).dump(2) + "\n";
}

void write_regions_csv(std::ostream& out, const PipelineResult& result, const LongitudinalDataset& dataset) {
  std::set<std::pair<int, int>> identified;
  for (const auto& s : result.scan.identified) identified.emplace(s.region.center, s.region.radius);
  std::ostringstream row;
  row.precision(17);
  out << "center,radius,edge_count,df,raw,standardized,corrected,identified,features\n";
  for (const auto& s : result.scan.regions) {
    row.str({});
    row << s.region.center << ',' << s.region.radius << ',' << s.region.edge_count << ',' << s.df << ',' << s.raw
        << ',' << s.standardized << ',' << s.corrected << ','
        << (identified.count({s.region.center, s.region.radius}) ? 1 : 0) << ',';
    for (std::size_t i = 0; i < s.region.vertices.size(); ++i) {
      if (i) row << ';';
      row << dataset.feature_names()[static_cast<std::size_t>(s.region.vertices[i])];
    }
    out << row.str() << '\n';
  }
}

}  // namespace covtraj::pipeline
