#pragma once

// Synthetic two-group longitudinal data with a planted covariance-trajectory
// difference, detection-rate grids and the baseline comparison.

#include "covtraj/dataset.hpp"
#include "covtraj/pipeline.hpp"
#include "covtraj/spd.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace covtraj::sim {

using spd::Matrix;
using spd::SpdMatrix;
using spd::TangentVector;

struct SimConfig {
  int p = 50;
  /// Number of features whose trajectory differs (0 for a null design).
  int p_t = 5;
  /// Samples per group, split evenly over the timepoints.
  int n = 50;
  int timepoints = 4;
  int runs = 100;
  std::uint64_t seed = 1;
  /// Whitened norm of the slope perturbation of group 2 (zero diagonal in
  /// feature coordinates).
  double signal_scale = 3.5;
  /// Frobenius norm of the whitened slope shared by both groups.
  double trend_scale = 0.5;

  /// Throws ValidationError.
  void validate() const;
};

/// 64-bit seed derived from (seed, a, b).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Q diag(l) Q^T with Q Haar-orthogonal and l uniform on [0.5, 2].
SpdMatrix random_spd(int p, std::mt19937_64& rng);
/// Symmetric matrix with Gaussian entries scaled to unit Frobenius norm.
Matrix random_unit_symmetric(int p, std::mt19937_64& rng);

struct SpdPath {
  SpdMatrix base;
  /// Whitened Frobenius norm equal to the requested scale.
  TangentVector velocity;
  std::vector<double> times;
  /// Exp(base, velocity * t).
  std::vector<SpdMatrix> points;
};

/// Geodesic through a random base point at times 0, 1, ..., timepoints - 1.
SpdPath gen_spd_path(int p, int timepoints, std::uint64_t seed, double scale);

struct SimulatedData {
  data::LongitudinalDataset dataset;
  /// Sorted feature indices of the planted block.
  std::vector<int> planted;
  std::vector<double> times;
  /// population[g][k]: covariance of group g at times[k].
  std::array<std::vector<SpdMatrix>, 2> population;
};

/// Both groups follow Exp(b, V t) with b and V block diagonal over the
/// planted block P (a contiguous index range at a random offset) and its
/// complement; group 2 adds to V on P a random symmetric matrix with zero
/// diagonal, scaled to whitened norm signal_scale at b_P. Zero-mean Gaussian samples, one
/// subject per sample, features named f0, f1, ...
SimulatedData gen_group_data(const SimConfig& config, std::uint64_t run_seed);

struct RunOutcome {
  std::uint64_t seed = 0;
  bool detected = false;
  /// Union of identified regions contains every planted feature.
  bool localized = false;
  /// Every pair of planted features is an edge of the oracle graph.
  bool graph_contains_planted = false;
  double scan_statistic = 0.0;
  int graph_edges = 0;
  std::vector<int> identified_features;
};

/// Pipeline settings used by the grids: the defaults with balls limited to
/// radius 1.
pipeline::PipelineConfig grid_pipeline_defaults();

struct GridOptions {
  pipeline::PipelineConfig pipeline = grid_pipeline_defaults();
  /// Null datasets per calibration; the critical value is the empirical
  /// 1 - alpha quantile of their scan statistics. Cells sharing (p, n,
  /// timepoints, trend_scale, seed) share one calibration.
  int null_runs = 200;
  /// Use per-run permutation calibration (pipeline.n_perm) instead.
  bool permutation = false;
  int workers = 1;
};

struct Calibration {
  double critical_value = 0.0;
  std::vector<double> samples;
};

struct GridCell {
  SimConfig config;
  double critical_value = 0.0;
  int null_runs = 0;
  std::vector<RunOutcome> runs;
  double detection_rate = 0.0;
  /// Among detecting runs; nullopt without detections.
  std::optional<double> localization_rate;
};

/// Monte Carlo critical value: scan statistics of `null_runs` datasets from
/// `config` with signal_scale 0.
Calibration calibrate_null(const SimConfig& config, const GridOptions& options);

RunOutcome evaluate_run(const SimulatedData& sim, const pipeline::PipelineConfig& config, double critical_value,
                        bool permutation);

std::vector<GridCell> run_detection_grid(std::span<const SimConfig> configs, const GridOptions& options);

struct BaselineCell {
  SimConfig config;
  double scan_rate = 0.0;
  double naive_rate = 0.0;
  /// nullopt when the interaction model is not identifiable in some run.
  std::optional<double> interaction_rate;
  int interaction_applicable = 0;
  double critical_value = 0.0;
};

/// Naive covariance GLM: Wald test of equal half-vectorized covariance slopes
/// with Wishart plug-in variances, p(p+1)/2 degrees of freedom.
bool naive_glm_rejects(const SimulatedData& sim, double alpha);
/// Interaction GLM with p_t random feature pairs; nullopt when not identifiable.
std::optional<bool> interaction_glm_rejects(const SimulatedData& sim, int terms, std::uint64_t seed, double alpha);

std::vector<BaselineCell> run_baseline_comparison(std::span<const SimConfig> configs, const GridOptions& options);

nlohmann::json grid_json(std::span<const GridCell> cells, const GridOptions& options);
void write_grid_csv(std::ostream& out, std::span<const GridCell> cells);
nlohmann::json baseline_json(std::span<const BaselineCell> cells, const GridOptions& options);
void write_baseline_csv(std::ostream& out, std::span<const BaselineCell> cells);

}  // namespace covtraj::sim
