#include "covtraj/feature_graph.hpp"

#include "covtraj/error.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <sstream>
#include <string>

namespace covtraj::graph {

FeatureGraph::FeatureGraph(int vertex_count) {
  if (vertex_count < 0) throw ValidationError("graph: negative vertex count");
  adjacency_.resize(static_cast<std::size_t>(vertex_count));
}

FeatureGraph::FeatureGraph(int vertex_count, std::span<const Edge> edges) : FeatureGraph(vertex_count) {
  for (const auto& [u, v] : edges) add_edge(u, v);
}

void FeatureGraph::check_vertex(int v) const {
  if (v < 0 || v >= vertex_count()) {
    throw ValidationError("graph: vertex " + std::to_string(v) + " out of range [0, " +
                          std::to_string(vertex_count()) + ")");
  }
}

void FeatureGraph::add_edge(int u, int v) {
  check_vertex(u);
  check_vertex(v);
  if (u == v) throw ValidationError("graph: self-loop at vertex " + std::to_string(u));
  Edge e = std::minmax(u, v);
  auto it = std::lower_bound(edges_.begin(), edges_.end(), e);
  if (it != edges_.end() && *it == e) {
    throw ValidationError("graph: duplicate edge " + std::to_string(e.first) + " " + std::to_string(e.second));
  }
  edges_.insert(it, e);
  auto& nu = adjacency_[static_cast<std::size_t>(u)];
  nu.insert(std::lower_bound(nu.begin(), nu.end(), v), v);
  auto& nv = adjacency_[static_cast<std::size_t>(v)];
  nv.insert(std::lower_bound(nv.begin(), nv.end(), u), u);
}

bool FeatureGraph::has_edge(int u, int v) const {
  check_vertex(u);
  check_vertex(v);
  const auto& nu = adjacency_[static_cast<std::size_t>(u)];
  return std::binary_search(nu.begin(), nu.end(), v);
}

const std::vector<int>& FeatureGraph::neighbors(int v) const {
  check_vertex(v);
  return adjacency_[static_cast<std::size_t>(v)];
}

std::vector<int> FeatureGraph::distances_from(int source) const {
  check_vertex(source);
  std::vector<int> dist(adjacency_.size(), -1);
  std::deque<int> queue{source};
  dist[static_cast<std::size_t>(source)] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    for (int w : adjacency_[static_cast<std::size_t>(u)]) {
      if (dist[static_cast<std::size_t>(w)] < 0) {
        dist[static_cast<std::size_t>(w)] = dist[static_cast<std::size_t>(u)] + 1;
        queue.push_back(w);
      }
    }
  }
  return dist;
}

int FeatureGraph::eccentricity(int v) const {
  auto dist = distances_from(v);
  return *std::max_element(dist.begin(), dist.end());
}

int FeatureGraph::diameter() const {
  int d = 0;
  for (int v = 0; v < vertex_count(); ++v) d = std::max(d, eccentricity(v));
  return d;
}

int FeatureGraph::induced_edge_count(std::span<const int> sorted_vertices) const {
  int count = 0;
  for (int u : sorted_vertices) {
    for (int w : neighbors(u)) {
      if (w > u && std::binary_search(sorted_vertices.begin(), sorted_vertices.end(), w)) ++count;
    }
  }
  return count;
}

std::vector<Edge> FeatureGraph::induced_edges(std::span<const int> sorted_vertices) const {
  std::vector<Edge> out;
  for (int u : sorted_vertices) {
    for (int w : neighbors(u)) {
      if (w > u && std::binary_search(sorted_vertices.begin(), sorted_vertices.end(), w)) out.emplace_back(u, w);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t FeatureGraph::fingerprint() const {
  // FNV-1a
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(adjacency_.size());
  for (const auto& [u, v] : edges_) {
    mix(static_cast<std::uint64_t>(u));
    mix(static_cast<std::uint64_t>(v));
  }
  return h;
}

FeatureGraph parse_graph(std::istream& in, int vertex_count) {
  FeatureGraph g(vertex_count);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    long long u = 0, v = 0;
    std::string rest;
    if (!(ls >> u >> v) || (ls >> rest)) {
      throw ValidationError("graph file line " + std::to_string(line_no) + ": expected two vertex indices");
    }
    if (u < 0 || v < 0 || u >= vertex_count || v >= vertex_count) {
      throw ValidationError("graph file line " + std::to_string(line_no) + ": vertex out of range");
    }
    try {
      g.add_edge(static_cast<int>(u), static_cast<int>(v));
    } catch (const ValidationError& e) {
      throw ValidationError("graph file line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return g;
}

FeatureGraph read_graph_file(const std::filesystem::path& path, int vertex_count) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open graph file " + path.string());
  return parse_graph(in, vertex_count);
}

void write_graph(std::ostream& out, const FeatureGraph& graph) {
  for (const auto& [u, v] : graph.edges()) out << u << ' ' << v << '\n';
}

}  // namespace covtraj::graph
