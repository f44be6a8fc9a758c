#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "advmiss/linalg.hpp"

namespace advmiss {

struct Edge {
  int parent = 0;
  int child = 0;
  auto operator<=>(const Edge&) const = default;
};

/// Directed acyclic graph over nodes 0..d-1. Construction validates acyclicity,
/// self-loops, duplicates and endpoint ranges.
class Dag {
 public:
  Dag() = default;
  explicit Dag(int d);
  Dag(int d, std::vector<Edge> edges, std::vector<std::string> labels = {});

  /// Support of B (|B_ij| > tol) as a DAG; throws CyclicGraphError if cyclic.
  static Dag from_support(const Matrix& B, double tol, std::vector<std::string> labels = {});

  int size() const { return d_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::string label(int j) const;

  bool has_edge(int parent, int child) const;
  std::vector<int> parents(int j) const;
  std::vector<int> topological_order() const;

  Dag without_edge(Edge e) const;
  bool is_subgraph_of(const Dag& other) const;

  bool operator==(const Dag& other) const { return d_ == other.d_ && edges_ == other.edges_; }

 private:
  int d_ = 0;
  std::vector<Edge> edges_;  // sorted
  std::vector<std::uint8_t> adj_;
  std::vector<std::string> labels_;
};

/// Partially directed graph (CPDAG output of constraint-based search).
/// adj(i,j) && !adj(j,i): i -> j; both set: undirected i - j.
class Pdag {
 public:
  Pdag() = default;
  explicit Pdag(int d, std::vector<std::string> labels = {});

  int size() const { return d_; }
  const std::vector<std::string>& labels() const { return labels_; }

  bool adjacent(int i, int j) const { return at(i, j) || at(j, i); }
  bool directed(int i, int j) const { return at(i, j) && !at(j, i); }
  bool undirected(int i, int j) const { return at(i, j) && at(j, i); }

  void add_undirected(int i, int j);
  void orient(int from, int to);  // i - j becomes from -> to
  void remove(int i, int j);
  int edge_count() const;

  bool operator==(const Pdag& o) const { return d_ == o.d_ && adj_ == o.adj_; }

 private:
  bool at(int i, int j) const { return adj_[static_cast<std::size_t>(i * d_ + j)] != 0; }
  int d_ = 0;
  std::vector<std::uint8_t> adj_;
  std::vector<std::string> labels_;
};

/// True iff the support {|B_ij| > tol} admits a topological order.
bool is_dag(const Matrix& B, double tol = 0.0);

}  // namespace advmiss
