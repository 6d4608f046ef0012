#include "covtraj/simulation.hpp"

#include "covtraj/error.hpp"
#include "covtraj/parallel.hpp"
#include "covtraj/scan.hpp"
#include "covtraj/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

namespace covtraj::sim {

void SimConfig::validate() const {
  if (p < 2) throw ValidationError("simulation: p must be at least 2");
  if (p_t < 0 || p_t > p) throw ValidationError("simulation: p_t must lie in [0, p]");
  if (p_t == 1) throw ValidationError("simulation: a planted block of one feature has no edges to scan");
  if (timepoints < 2) throw ValidationError("simulation: need at least two timepoints");
  if (n < 2 * timepoints) throw ValidationError("simulation: need at least two samples per group per timepoint");
  if (runs < 1) throw ValidationError("simulation: runs must be at least 1");
  if (!(signal_scale >= 0.0) || !(trend_scale >= 0.0)) throw ValidationError("simulation: scales must be >= 0");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace {

Matrix gaussian_matrix(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) m(i, j) = normal(rng);
  }
  return m;
}

// b^{1/2} u b^{1/2}
Matrix unwhiten(const SpdMatrix& b, const Matrix& u) { return spd::symmetrized(b.sqrt() * u * b.sqrt()); }

}  // namespace

SpdMatrix random_spd(int p, std::mt19937_64& rng) {
  Matrix a = gaussian_matrix(p, p, rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ();
  Matrix r = qr.matrixQR();
  for (int j = 0; j < p; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  std::uniform_real_distribution<double> unif(0.5, 2.0);
  spd::Vector l(p);
  for (int i = 0; i < p; ++i) l(i) = unif(rng);
  return SpdMatrix::from_computed(q * l.asDiagonal() * q.transpose());
}

Matrix random_unit_symmetric(int p, std::mt19937_64& rng) {
  Matrix s = spd::symmetrized(gaussian_matrix(p, p, rng));
  const double norm = s.norm();
  return norm > 0.0 ? Matrix(s / norm) : s;
}

SpdPath gen_spd_path(int p, int timepoints, std::uint64_t seed, double scale) {
  if (p < 1) throw ValidationError("gen_spd_path: p must be at least 1");
  if (timepoints < 2) throw ValidationError("gen_spd_path: need at least two timepoints");
  if (!(scale >= 0.0)) throw ValidationError("gen_spd_path: scale must be >= 0");
  std::mt19937_64 rng(seed);
  SpdMatrix base = random_spd(p, rng);
  TangentVector v(base, unwhiten(base, scale * random_unit_symmetric(p, rng)));
  SpdPath path{base, v, {}, {}};
  for (int k = 0; k < timepoints; ++k) {
    path.times.push_back(k);
    path.points.push_back(k == 0 ? base : spd::exp_map(base, v.scaled(k)));
  }
  return path;
}

SimulatedData gen_group_data(const SimConfig& config, std::uint64_t run_seed) {
  config.validate();
  std::mt19937_64 rng(run_seed);
  const int p = config.p;
  const int pt = config.p_t;

  std::vector<int> planted, rest;
  int offset = 0;
  if (pt > 0) offset = std::uniform_int_distribution<int>(0, p - pt)(rng);
  for (int i = 0; i < p; ++i) (i >= offset && i < offset + pt ? planted : rest).push_back(i);

  struct Block {
    std::vector<int> index;
    SpdMatrix base;
    std::array<Matrix, 2> velocity;
  };
  std::vector<Block> blocks;
  for (const auto* idx : {&planted, &rest}) {
    if (idx->empty()) continue;
    const int q = static_cast<int>(idx->size());
    SpdMatrix b = random_spd(q, rng);
    Matrix v = unwhiten(b, config.trend_scale * random_unit_symmetric(q, rng));
    blocks.push_back({*idx, b, {v, v}});
  }
  if (pt > 0) {
    Block& bp = blocks.front();
    // Off-diagonal in ambient coordinates: the planted features change how they
    // covary while their variances stay fixed to first order.
    Matrix d = random_unit_symmetric(pt, rng);
    d.diagonal().setZero();
    const double whitened = (bp.base.inv_sqrt() * d * bp.base.inv_sqrt()).norm();
    bp.velocity[1] += (config.signal_scale / whitened) * d;
  }

  std::vector<double> times;
  std::array<std::vector<SpdMatrix>, 2> population;
  std::vector<std::string> names;
  for (int i = 0; i < p; ++i) names.push_back("f" + std::to_string(i));
  std::vector<std::string> subjects;
  std::vector<data::Record> records;

  for (int k = 0; k < config.timepoints; ++k) times.push_back(k);
  for (int g = 0; g < 2; ++g) {
    for (int k = 0; k < config.timepoints; ++k) {
      Matrix c = Matrix::Zero(p, p);
      for (const auto& blk : blocks) {
        TangentVector v(blk.base, blk.velocity[static_cast<std::size_t>(g)] * static_cast<double>(k));
        c(blk.index, blk.index) = spd::exp_map(blk.base, v).matrix();
      }
      SpdMatrix cov = SpdMatrix::from_computed(c);
      population[static_cast<std::size_t>(g)].push_back(cov);
      const int n_k = config.n / config.timepoints + (k < config.n % config.timepoints ? 1 : 0);
      Matrix z = gaussian_matrix(p, n_k, rng);
      Matrix x = cov.sqrt() * z;
      for (int i = 0; i < n_k; ++i) {
        data::Record r;
        r.subject = static_cast<int>(subjects.size());
        r.group = g;
        r.time = k;
        r.features = x.col(i);
        subjects.push_back("g" + std::to_string(g) + "_" + std::to_string(subjects.size()));
        records.push_back(std::move(r));
      }
    }
  }
  return {data::LongitudinalDataset(std::move(names), std::move(subjects), std::move(records)), std::move(planted),
          std::move(times), std::move(population)};
}

pipeline::PipelineConfig grid_pipeline_defaults() {
  pipeline::PipelineConfig c;
  c.max_radius = 1;
  return c;
}

namespace {

std::uint64_t run_seed(const SimConfig& c, int run) {
  const auto cell = derive_seed(c.seed, static_cast<std::uint64_t>(c.p), static_cast<std::uint64_t>(c.p_t));
  return derive_seed(cell, static_cast<std::uint64_t>(c.n) * 64 + static_cast<std::uint64_t>(c.timepoints),
                     static_cast<std::uint64_t>(run));
}

std::uint64_t null_seed(const SimConfig& c, int run) {
  const auto cell = derive_seed(c.seed, static_cast<std::uint64_t>(c.p), 0x6e756c6cULL);
  return derive_seed(cell, static_cast<std::uint64_t>(c.n) * 64 + static_cast<std::uint64_t>(c.timepoints),
                     static_cast<std::uint64_t>(run));
}

using CalibrationKey = std::tuple<int, int, int, double, std::uint64_t>;

CalibrationKey calibration_key(const SimConfig& c) { return {c.p, c.n, c.timepoints, c.trend_scale, c.seed}; }

bool planted_in_graph(const graph::FeatureGraph& g, const std::vector<int>& planted) {
  for (std::size_t a = 0; a < planted.size(); ++a) {
    for (std::size_t b = a + 1; b < planted.size(); ++b) {
      if (!g.has_edge(planted[a], planted[b])) return false;
    }
  }
  return true;
}

}  // namespace

Calibration calibrate_null(const SimConfig& config, const GridOptions& options) {
  if (options.null_runs < 1) throw ValidationError("calibrate_null: need at least one null run");
  SimConfig null_config = config;
  null_config.p_t = 0;
  null_config.signal_scale = 0.0;
  Calibration out;
  out.samples.resize(static_cast<std::size_t>(options.null_runs));
  parallel_for(
      out.samples.size(),
      [&](std::size_t i) {
        SimulatedData sim = gen_group_data(null_config, null_seed(config, static_cast<int>(i)));
        pipeline::Analyzer analyzer(sim.dataset, options.pipeline);
        out.samples[i] = analyzer.analyze(sim.dataset.subject_groups()).scan_statistic;
      },
      options.workers);
  std::sort(out.samples.begin(), out.samples.end());
  out.critical_value = scan::empirical_quantile(out.samples, options.pipeline.alpha);
  return out;
}

RunOutcome evaluate_run(const SimulatedData& sim, const pipeline::PipelineConfig& config, double critical_value,
                        bool permutation) {
  RunOutcome out;
  std::vector<scan::ScoredRegion> identified;
  if (permutation) {
    auto result = pipeline::run_pipeline(sim.dataset, config);
    out.scan_statistic = result.scan.scan_statistic;
    out.graph_edges = result.observed.graph.edge_count();
    out.graph_contains_planted = planted_in_graph(result.observed.graph, sim.planted);
    identified = std::move(result.scan.identified);
  } else {
    pipeline::Analyzer analyzer(sim.dataset, config);
    auto analysis = analyzer.analyze(sim.dataset.subject_groups());
    out.scan_statistic = analysis.scan_statistic;
    out.graph_edges = analysis.graph.edge_count();
    out.graph_contains_planted = planted_in_graph(analysis.graph, sim.planted);
    identified = scan::identify_regions(analysis.scored, critical_value);
  }
  std::set<int> found;
  for (const auto& s : identified) found.insert(s.region.vertices.begin(), s.region.vertices.end());
  out.identified_features.assign(found.begin(), found.end());
  out.detected = !identified.empty();
  out.localized = out.detected && std::includes(found.begin(), found.end(), sim.planted.begin(), sim.planted.end());
  return out;
}

namespace {

std::map<CalibrationKey, Calibration> calibrate_all(std::span<const SimConfig> configs, const GridOptions& options) {
  std::map<CalibrationKey, Calibration> out;
  if (options.permutation) return out;
  for (const auto& c : configs) {
    auto key = calibration_key(c);
    if (!out.count(key)) out.emplace(key, calibrate_null(c, options));
  }
  return out;
}

}  // namespace

std::vector<GridCell> run_detection_grid(std::span<const SimConfig> configs, const GridOptions& options) {
  for (const auto& c : configs) c.validate();
  options.pipeline.validate();
  auto calibrations = calibrate_all(configs, options);
  std::vector<GridCell> cells;
  for (const auto& c : configs) {
    GridCell cell;
    cell.config = c;
    if (!options.permutation) {
      const auto& cal = calibrations.at(calibration_key(c));
      cell.critical_value = cal.critical_value;
      cell.null_runs = static_cast<int>(cal.samples.size());
    }
    cell.runs.resize(static_cast<std::size_t>(c.runs));
    parallel_for(
        cell.runs.size(),
        [&](std::size_t i) {
          const auto seed = run_seed(c, static_cast<int>(i));
          SimulatedData sim = gen_group_data(c, seed);
          cell.runs[i] = evaluate_run(sim, options.pipeline, cell.critical_value, options.permutation);
          cell.runs[i].seed = seed;
        },
        options.workers);
    int detected = 0, localized = 0;
    for (const auto& r : cell.runs) {
      detected += r.detected;
      localized += r.localized;
    }
    cell.detection_rate = static_cast<double>(detected) / static_cast<double>(c.runs);
    if (detected > 0) cell.localization_rate = static_cast<double>(localized) / detected;
    cells.push_back(std::move(cell));
  }
  return cells;
}

bool naive_glm_rejects(const SimulatedData& sim, double alpha) {
  auto split = data::split_by_group(sim.dataset, sim.dataset.subject_groups());
  std::array<stats::LinearFit, 2> fits;
  std::array<spd::Vector, 2> variances;
  for (std::size_t g = 0; g < 2; ++g) {
    auto tcs = data::timepoint_covariances(split[g], data::CovarianceKind::sample);
    std::vector<SpdMatrix> covs;
    std::vector<double> times;
    std::vector<int> counts;
    for (auto& tc : tcs) {
      covs.push_back(tc.cov);
      times.push_back(tc.time);
      counts.push_back(tc.n);
    }
    fits[g] = stats::naive_cov_glm(covs, times);
    variances[g] = stats::naive_slope_variance(covs, times, counts);
  }
  spd::Vector precision = (variances[0] + variances[1]).cwiseInverse();
  return stats::euclidean_slope_test_diagonal(fits[0], fits[1], precision, alpha).reject;
}

std::optional<bool> interaction_glm_rejects(const SimulatedData& sim, int terms, std::uint64_t seed, double alpha) {
  const int p = sim.dataset.feature_count();
  const int pairs = p * (p - 1) / 2;
  if (terms < 1 || terms > pairs) throw ValidationError("interaction_glm: invalid number of terms");
  std::vector<std::pair<int, int>> all;
  for (int a = 0; a < p; ++a) {
    for (int b = a + 1; b < p; ++b) all.emplace_back(a, b);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(terms));
  std::sort(all.begin(), all.end());
  auto split = data::split_by_group(sim.dataset, sim.dataset.subject_groups());
  auto decision = stats::interaction_glm_test(split[0], split[1], all, alpha);
  if (!decision) return std::nullopt;
  return decision->reject;
}

std::vector<BaselineCell> run_baseline_comparison(std::span<const SimConfig> configs, const GridOptions& options) {
  for (const auto& c : configs) {
    c.validate();
    if (c.p_t < 2) throw ValidationError("baseline comparison needs p_t >= 2");
  }
  options.pipeline.validate();
  auto calibrations = calibrate_all(configs, options);
  std::vector<BaselineCell> cells;
  for (const auto& c : configs) {
    BaselineCell cell;
    cell.config = c;
    if (!options.permutation) cell.critical_value = calibrations.at(calibration_key(c)).critical_value;
    struct Outcome {
      bool scan = false, naive = false;
      std::optional<bool> interaction;
    };
    std::vector<Outcome> outcomes(static_cast<std::size_t>(c.runs));
    parallel_for(
        outcomes.size(),
        [&](std::size_t i) {
          const auto seed = run_seed(c, static_cast<int>(i));
          SimulatedData sim = gen_group_data(c, seed);
          outcomes[i].scan = evaluate_run(sim, options.pipeline, cell.critical_value, options.permutation).detected;
          outcomes[i].naive = naive_glm_rejects(sim, options.pipeline.alpha);
          outcomes[i].interaction = interaction_glm_rejects(sim, c.p_t, derive_seed(seed, 7), options.pipeline.alpha);
        },
        options.workers);
    int scan_hits = 0, naive_hits = 0, inter_hits = 0;
    for (const auto& o : outcomes) {
      scan_hits += o.scan;
      naive_hits += o.naive;
      if (o.interaction) {
        ++cell.interaction_applicable;
        inter_hits += *o.interaction;
      }
    }
    const double runs = c.runs;
    cell.scan_rate = scan_hits / runs;
    cell.naive_rate = naive_hits / runs;
    if (cell.interaction_applicable == c.runs) cell.interaction_rate = inter_hits / runs;
    cells.push_back(std::move(cell));
  }
  return cells;
}

namespace {

nlohmann::json sim_config_json(const SimConfig& c) {
  return {{"p", c.p},         {"p_t", c.p_t},   {"n", c.n},
          {"timepoints", c.timepoints},         {"runs", c.runs},
          {"seed", c.seed},   {"signal_scale", c.signal_scale}, {"trend_scale", c.trend_scale}};
}

nlohmann::json options_json(const GridOptions& o) {
  return {{"pipeline", pipeline::config_json(o.pipeline)},
          {"null_runs", o.permutation ? 0 : o.null_runs},
          {"calibration", o.permutation ? "permutation" : "monte_carlo"}};
}

template <class T>
nlohmann::json optional_json(const std::optional<T>& x) {
  return x ? nlohmann::json(*x) : nlohmann::json();
}

std::string optional_csv(const std::optional<double>& x) {
  if (!x) return "NA";
  std::ostringstream os;
  os.precision(10);
  os << *x;
  return os.str();
}

}  // namespace

nlohmann::json grid_json(std::span<const GridCell> cells, const GridOptions& options) {
  nlohmann::json out;
  out["options"] = options_json(options);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& cell : cells) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : cell.runs) {
      runs.push_back({{"seed", r.seed},
                      {"detected", r.detected},
                      {"localized", r.localized},
                      {"graph_contains_planted", r.graph_contains_planted},
                      {"scan_statistic", std::isfinite(r.scan_statistic) ? nlohmann::json(r.scan_statistic)
                                                                         : nlohmann::json()},
                      {"graph_edges", r.graph_edges},
                      {"identified_features", r.identified_features}});
    }
    arr.push_back({{"config", sim_config_json(cell.config)},
                   {"critical_value", cell.critical_value},
                   {"null_runs", cell.null_runs},
                   {"detection_rate", cell.detection_rate},
                   {"localization_rate", optional_json(cell.localization_rate)},
                   {"runs", std::move(runs)}});
  }
  out["cells"] = std::move(arr);
  return out;
}

void write_grid_csv(std::ostream& out, std::span<const GridCell> cells) {
  out << "p,p_t,n,timepoints,runs,signal_scale,trend_scale,seed,detection_rate,localization_rate,critical_value\n";
  for (const auto& c : cells) {
    const auto& k = c.config;
    out << k.p << ',' << k.p_t << ',' << k.n << ',' << k.timepoints << ',' << k.runs << ',' << k.signal_scale << ','
        << k.trend_scale << ',' << k.seed << ',' << c.detection_rate << ',' << optional_csv(c.localization_rate) << ','
        << c.critical_value << '\n';
  }
}

nlohmann::json baseline_json(std::span<const BaselineCell> cells, const GridOptions& options) {
  nlohmann::json out;
  out["options"] = options_json(options);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cells) {
    arr.push_back({{"config", sim_config_json(c.config)},
                   {"scan_rate", c.scan_rate},
                   {"naive_glm_rate", c.naive_rate},
                   {"interaction_glm_rate", optional_json(c.interaction_rate)},
                   {"interaction_glm_applicable_runs", c.interaction_applicable},
                   {"critical_value", c.critical_value}});
  }
  out["cells"] = std::move(arr);
  return out;
}

void write_baseline_csv(std::ostream& out, std::span<const BaselineCell> cells) {
  out << "p,p_t,n,runs,signal_scale,scan_rate,naive_glm_rate,interaction_glm_rate,interaction_applicable\n";
  for (const auto& c : cells) {
    const auto& k = c.config;
    out << k.p << ',' << k.p_t << ',' << k.n << ',' << k.runs << ',' << k.signal_scale << ',' << c.scan_rate << ','
        << c.naive_rate << ',' << optional_csv(c.interaction_rate) << ',' << c.interaction_applicable << '\n';
  }
}

}  // namespace covtraj::sim
