#pragma once

// End-to-end analysis: per-timepoint covariances, oracle graph, ball regions,
// region statistics, null calibration and identification, plus the JSON and
// CSV reports.

#include "covtraj/dataset.hpp"
#include "covtraj/feature_graph.hpp"
#include "covtraj/scan.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace covtraj::pipeline {

using data::LongitudinalDataset;
using graph::FeatureGraph;

enum class NullMode { permutation, asymptotic };

NullMode parse_null_mode(std::string_view name);
std::string_view to_string(NullMode mode);

struct PipelineConfig {
  double alpha = 0.05;
  /// Fixed glasso penalty; when unset lambda is tuned to `target_density`.
  std::optional<double> lambda;
  double target_density = 0.1;
  int n_perm = 999;
  std::uint64_t seed = 0;
  std::optional<int> max_radius;
  scan::StatMode stat_mode = scan::StatMode::trajectory;
  scan::DfMode df_mode = scan::DfMode::parameters;
  /// Edge list replacing the glasso graph.
  std::optional<std::filesystem::path> graph_file;
  int min_region_edges = 1;
  data::CovarianceKind covariance_kind = data::CovarianceKind::sample;
  NullMode null_mode = NullMode::permutation;
  double spd_floor = spd::kDefaultSpdFloor;
  /// See scan::ScanOptions::full_rank_only.
  bool full_rank_only = true;

  /// Throws ValidationError.
  void validate() const;
};

/// Result of the scan for one assignment of subjects to groups.
struct Analysis {
  FeatureGraph graph;
  /// NaN when the graph was supplied.
  double lambda = 0.0;
  double ridge_shift = 0.0;
  std::vector<scan::ScoredRegion> scored;
  double scan_statistic = 0.0;
};

/// Runs the per-labeling part of the pipeline. With a fixed graph the glasso
/// step is skipped; otherwise the graph is rebuilt from each labeling so that
/// permutation replicates repeat the whole selection.
class Analyzer {
 public:
  Analyzer(const LongitudinalDataset& dataset, const PipelineConfig& config,
           std::optional<FeatureGraph> fixed_graph = std::nullopt);

  Analysis analyze(std::span<const int> subject_groups, std::vector<std::string>* warnings = nullptr,
                   int workers = 1) const;

 private:
  const LongitudinalDataset& dataset_;
  PipelineConfig config_;
  std::optional<FeatureGraph> fixed_graph_;
};

struct PipelineResult {
  Analysis observed;
  scan::ScanResult scan;
  std::vector<std::string> warnings;
};

/// Errors are rethrown with the failing stage named in the message, keeping
/// their ValidationError / NumericalError type.
PipelineResult run_pipeline(const LongitudinalDataset& dataset, const PipelineConfig& config,
                            int workers = 1);

nlohmann::json config_json(const PipelineConfig& config);
nlohmann::json report_json(const PipelineResult& result, const LongitudinalDataset& dataset,
                           const PipelineConfig& config);
/// Pretty-printed JSON with sorted keys and a trailing newline.
std::string report_string(const PipelineResult& result, const LongitudinalDataset& dataset,
                          const PipelineConfig& config);
void write_regions_csv(std::ostream& out, const PipelineResult& result, const LongitudinalDataset& dataset);

}  // namespace covtraj::pipeline
