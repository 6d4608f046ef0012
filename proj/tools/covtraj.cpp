// Command-line driver: scan a longitudinal CSV, generate synthetic data, run
// detection grids and baseline comparisons, check the avocado condition.
//
// Exit codes: 0 success, 2 invalid input or usage, 3 numerical failure.

#include "covtraj/error.hpp"
#include "covtraj/feature_graph.hpp"
#include "covtraj/parallel.hpp"
#include "covtraj/pipeline.hpp"
#include "covtraj/scan.hpp"
#include "covtraj/simulation.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace covtraj;

struct PipelineFlags {
  double alpha = 0.05;
  std::optional<double> lambda;
  double density = 0.1;
  int perms = 999;
  std::uint64_t seed = 0;
  std::optional<int> max_radius;
  std::string stat = "trajectory";
  std::string df = "parameters";
  std::string graph_file;
  std::string covariance = "sample";
  std::string null_mode = "permutation";
  int min_region_edges = 1;
  bool singular_regions = false;

  void add_to(CLI::App& app) {
    app.add_option("--alpha", alpha, "Significance level")->capture_default_str();
    app.add_option("--lambda", lambda, "Fixed glasso penalty (default: tune to --density)");
    app.add_option("--density", density, "Target edge density of the oracle graph")->capture_default_str();
    app.add_option("--perms", perms, "Number of permutations")->capture_default_str();
    app.add_option("--seed", seed, "Random seed")->capture_default_str();
    app.add_option("--max-radius", max_radius, "Largest ball radius");
    app.add_option("--stat", stat, "trajectory, product or glm_slope")->capture_default_str();
    app.add_option("--df", df, "Standardization df: edges or parameters")->capture_default_str();
    app.add_option("--graph-file", graph_file, "Edge list replacing the glasso graph");
    app.add_option("--covariance", covariance, "sample, pearson or spearman")->capture_default_str();
    app.add_option("--null", null_mode, "permutation or asymptotic")->capture_default_str();
    app.add_option("--min-region-edges", min_region_edges, "Smallest region edge count scored")
        ->capture_default_str();
    app.add_flag("--singular-regions", singular_regions,
                 "Also score regions with more features than samples at some timepoint");
  }

  pipeline::PipelineConfig config() const {
    pipeline::PipelineConfig c;
    c.alpha = alpha;
    c.lambda = lambda;
    c.target_density = density;
    c.n_perm = perms;
    c.seed = seed;
    c.max_radius = max_radius;
    c.stat_mode = scan::parse_stat_mode(stat);
    c.df_mode = scan::parse_df_mode(df);
    if (!graph_file.empty()) c.graph_file = graph_file;
    c.covariance_kind = data::parse_covariance_kind(covariance);
    c.null_mode = pipeline::parse_null_mode(null_mode);
    c.min_region_edges = min_region_edges;
    c.full_rank_only = !singular_regions;
    c.validate();
    return c;
  }
};

// Writes to `path`, or stdout for "" / "-".
void write_output(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot open " + path + " for writing");
  out << content;
  if (!out) throw ValidationError("failed writing " + path);
}

std::vector<sim::SimConfig> expand(const sim::SimConfig& base, const std::vector<int>& pts, const std::vector<int>& ns) {
  std::vector<sim::SimConfig> out;
  for (int n : ns) {
    for (int pt : pts) {
      sim::SimConfig c = base;
      c.n = n;
      c.p_t = pt;
      out.push_back(c);
    }
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Scan statistics for group differences in covariance trajectories"};
  app.require_subcommand(1);

  // scan
  auto* scan_cmd = app.add_subcommand("scan", "Scan a longitudinal CSV for regions with differing trajectories");
  std::string input, output, regions_csv;
  PipelineFlags scan_flags;
  scan_cmd->add_option("input", input, "CSV: subject_id,group,time,<features>")->required();
  scan_cmd->add_option("--output,-o", output, "JSON report path (default stdout)");
  scan_cmd->add_option("--regions-csv", regions_csv, "Also write the region table as CSV");
  scan_flags.add_to(*scan_cmd);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "Write a synthetic two-group dataset as CSV");
  sim::SimConfig sim_config;
  sim_config.runs = 1;
  std::string sim_output, truth_output;
  sim_cmd->add_option("--p", sim_config.p, "Features")->capture_default_str();
  sim_cmd->add_option("--pt", sim_config.p_t, "Planted features")->capture_default_str();
  sim_cmd->add_option("--n", sim_config.n, "Samples per group")->capture_default_str();
  sim_cmd->add_option("--timepoints", sim_config.timepoints)->capture_default_str();
  sim_cmd->add_option("--seed", sim_config.seed)->capture_default_str();
  sim_cmd->add_option("--signal", sim_config.signal_scale, "Norm of the planted slope change")->capture_default_str();
  sim_cmd->add_option("--trend", sim_config.trend_scale, "Norm of the shared slope")->capture_default_str();
  sim_cmd->add_option("--output,-o", sim_output, "CSV path (default stdout)");
  sim_cmd->add_option("--truth", truth_output, "JSON with the planted features and population covariances");

  // grid / baselines share options
  sim::SimConfig grid_base;
  std::vector<int> grid_pts{5, 8, 10, 15}, grid_ns{10, 20, 50, 100, 200, 1000};
  int null_runs = 200;
  bool permutation = false;
  std::string grid_output, grid_csv;
  PipelineFlags grid_flags;
  auto* grid_cmd = app.add_subcommand("grid", "Detection rates over (p_t, n)");
  auto* base_cmd = app.add_subcommand("baselines", "Scan versus naive and interaction GLM rejection rates");
  for (auto* cmd : {grid_cmd, base_cmd}) {
    cmd->add_option("--p", grid_base.p)->capture_default_str();
    cmd->add_option("--pt", grid_pts, "Planted feature counts")->delimiter(',')->capture_default_str();
    cmd->add_option("--n", grid_ns, "Samples per group")->delimiter(',')->capture_default_str();
    cmd->add_option("--runs", grid_base.runs)->capture_default_str();
    cmd->add_option("--timepoints", grid_base.timepoints)->capture_default_str();
    cmd->add_option("--sim-seed", grid_base.seed, "Seed of the simulated datasets")->capture_default_str();
    cmd->add_option("--signal", grid_base.signal_scale)->capture_default_str();
    cmd->add_option("--trend", grid_base.trend_scale)->capture_default_str();
    cmd->add_option("--null-runs", null_runs, "Null datasets for the Monte Carlo critical value")
        ->capture_default_str();
    cmd->add_flag("--permutation", permutation, "Calibrate every run by permutation instead");
    cmd->add_option("--output,-o", grid_output, "JSON path (default stdout)");
    cmd->add_option("--csv", grid_csv, "Also write the cell table as CSV");
    grid_flags.add_to(*cmd);
  }

  // avocado
  auto* avo_cmd = app.add_subcommand("avocado", "Check the ball density condition on a graph file");
  std::string avo_graph;
  int avo_vertices = 0;
  double avo_h = 1.0, avo_s = 1.0;
  avo_cmd->add_option("graph", avo_graph, "Edge list")->required();
  avo_cmd->add_option("--vertices", avo_vertices, "Vertex count (default: largest index + 1)");
  avo_cmd->add_option("--H", avo_h)->capture_default_str();
  avo_cmd->add_option("--S", avo_s)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const int workers = default_worker_count();

  if (scan_cmd->parsed()) {
    auto config = scan_flags.config();
    std::vector<std::string> warnings;
    auto dataset = data::ingest_csv(input, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    auto result = pipeline::run_pipeline(dataset, config, workers);
    result.warnings.insert(result.warnings.begin(), warnings.begin(), warnings.end());
    for (std::size_t i = warnings.size(); i < result.warnings.size(); ++i) {
      std::cerr << "warning: " << result.warnings[i] << '\n';
    }
    const std::string report = pipeline::report_string(result, dataset, config);
    std::string regions;
    if (!regions_csv.empty()) {
      std::ostringstream os;
      pipeline::write_regions_csv(os, result, dataset);
      regions = os.str();
    }
    write_output(output, report);
    if (!regions_csv.empty()) write_output(regions_csv, regions);
    return 0;
  }

  if (sim_cmd->parsed()) {
    auto simulated = sim::gen_group_data(sim_config, sim_config.seed);
    std::ostringstream csv;
    data::write_csv(csv, simulated.dataset);
    if (!truth_output.empty()) {
      nlohmann::json truth;
      truth["planted"] = simulated.planted;
      nlohmann::json names = nlohmann::json::array();
      for (int v : simulated.planted) names.push_back(simulated.dataset.feature_names()[static_cast<std::size_t>(v)]);
      truth["planted_features"] = std::move(names);
      truth["times"] = simulated.times;
      nlohmann::json pop = nlohmann::json::array();
      for (const auto& group : simulated.population) {
        nlohmann::json g = nlohmann::json::array();
        for (const auto& c : group) {
          nlohmann::json rows = nlohmann::json::array();
          for (Eigen::Index i = 0; i < c.dim(); ++i) {
            nlohmann::json r = nlohmann::json::array();
            for (Eigen::Index j = 0; j < c.dim(); ++j) r.push_back(c.matrix()(i, j));
            rows.push_back(std::move(r));
          }
          g.push_back(std::move(rows));
        }
        pop.push_back(std::move(g));
      }
      truth["population"] = std::move(pop);
      write_output(truth_output, truth.dump(2) + "\n");
    }
    write_output(sim_output, csv.str());
    return 0;
  }

  if (grid_cmd->parsed() || base_cmd->parsed()) {
    sim::GridOptions options;
    options.pipeline = grid_flags.config();
    if (!grid_flags.max_radius) options.pipeline.max_radius = sim::grid_pipeline_defaults().max_radius;
    options.null_runs = null_runs;
    options.permutation = permutation;
    options.workers = workers;
    auto configs = expand(grid_base, grid_pts, grid_ns);
    std::ostringstream csv;
    nlohmann::json j;
    if (grid_cmd->parsed()) {
      auto cells = sim::run_detection_grid(configs, options);
      j = sim::grid_json(cells, options);
      sim::write_grid_csv(csv, cells);
    } else {
      auto cells = sim::run_baseline_comparison(configs, options);
      j = sim::baseline_json(cells, options);
      sim::write_baseline_csv(csv, cells);
    }
    write_output(grid_output, j.dump(2) + "\n");
    if (!grid_csv.empty()) write_output(grid_csv, csv.str());
    return 0;
  }

  if (avo_cmd->parsed()) {
    int vertices = avo_vertices;
    if (vertices <= 0) {
      std::ifstream in(avo_graph);
      if (!in) throw ValidationError("cannot open graph file " + avo_graph);
      std::string line;
      long long largest = -1, u = 0, v = 0;
      while (std::getline(in, line)) {
        std::istringstream ls(line);
        if (ls >> u >> v) largest = std::max({largest, u, v});
      }
      vertices = static_cast<int>(largest + 1);
    }
    auto g = graph::read_graph_file(avo_graph, vertices);
    auto res = scan::avocado_check(g, avo_h, avo_s);
    nlohmann::json j{{"pass", res.pass},
                     {"worst_margin", res.worst_margin},
                     {"vertex", res.vertex},
                     {"radius", res.radius},
                     {"inner_radius", res.inner_radius},
                     {"checked", res.checked},
                     {"H", avo_h},
                     {"S", avo_s}};
    std::cout << j.dump(2) << '\n';
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const covtraj::NumericalError& e) {
    std::cerr << "covtraj: numerical failure in " << e.what() << '\n';
    return 3;
  } catch (const covtraj::ValidationError& e) {
    std::cerr << "covtraj: invalid input: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "covtraj: " << e.what() << '\n';
    return 3;
  }
}
