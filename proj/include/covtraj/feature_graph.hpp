#pragma once

// Undirected simple graph over feature indices 0..p-1.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

namespace covtraj::graph {

/// Unordered pair stored with first < second.
using Edge = std::pair<int, int>;

class FeatureGraph {
 public:
  explicit FeatureGraph(int vertex_count = 0);
  /// Throws ValidationError on self-loops, duplicates or out-of-range vertices.
  FeatureGraph(int vertex_count, std::span<const Edge> edges);

  int vertex_count() const { return static_cast<int>(adjacency_.size()); }
  int edge_count() const { return static_cast<int>(edges_.size()); }

  /// Throws ValidationError on a self-loop, a duplicate or an unknown vertex.
  void add_edge(int u, int v);
  bool has_edge(int u, int v) const;

  /// Sorted neighbor list.
  const std::vector<int>& neighbors(int v) const;
  /// Sorted edge list.
  const std::vector<Edge>& edges() const { return edges_; }

  /// BFS hop counts from `source`; -1 for unreachable vertices.
  std::vector<int> distances_from(int source) const;
  /// Largest finite distance from v.
  int eccentricity(int v) const;
  /// Largest eccentricity over all vertices (0 for an edgeless graph).
  int diameter() const;

  /// Number of edges with both endpoints in `sorted_vertices`.
  int induced_edge_count(std::span<const int> sorted_vertices) const;
  std::vector<Edge> induced_edges(std::span<const int> sorted_vertices) const;

  /// Hash of the vertex count and edge list; identifies the host of a region.
  std::uint64_t fingerprint() const;

  bool operator==(const FeatureGraph& other) const { return edges_ == other.edges_ && adjacency_.size() == other.adjacency_.size(); }

 private:
  void check_vertex(int v) const;

  std::vector<std::vector<int>> adjacency_;
  std::vector<Edge> edges_;
};

/// One `u v` pair per line, 0-based. Blank lines and lines starting with '#'
/// are skipped. Throws ValidationError with the offending line number.
FeatureGraph parse_graph(std::istream& in, int vertex_count);
FeatureGraph read_graph_file(const std::filesystem::path& path, int vertex_count);
void write_graph(std::ostream& out, const FeatureGraph& graph);

}  // namespace covtraj::graph
