#include "advmiss/graph.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

#include "advmiss/errors.hpp"

namespace advmiss {

namespace {

std::vector<int> kahn_order(int d, const std::vector<std::uint8_t>& adj) {
  std::vector<int> indeg(static_cast<std::size_t>(d), 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (adj[static_cast<std::size_t>(i * d + j)]) ++indeg[static_cast<std::size_t>(j)];
  // min-heap keeps the order canonical
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (int j = 0; j < d; ++j)
    if (indeg[static_cast<std::size_t>(j)] == 0) ready.push(j);
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(d));
  while (!ready.empty()) {
    int i = ready.top();
    ready.pop();
    order.push_back(i);
    for (int j = 0; j < d; ++j)
      if (adj[static_cast<std::size_t>(i * d + j)] && --indeg[static_cast<std::size_t>(j)] == 0) ready.push(j);
  }
  return order;
}

void check_labels(int d, const std::vector<std::string>& labels) {
  if (!labels.empty() && static_cast<int>(labels.size()) != d)
    throw DimensionError("node label count " + std::to_string(labels.size()) + " != " + std::to_string(d));
}

}  // namespace

Dag::Dag(int d) : Dag(d, std::vector<Edge>{}) {}

Dag::Dag(int d, std::vector<Edge> edges, std::vector<std::string> labels)
    : d_(d), edges_(std::move(edges)), labels_(std::move(labels)) {
  if (d < 0) throw DimensionError("negative node count");
  check_labels(d, labels_);
  adj_.assign(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0);
  for (const Edge& e : edges_) {
    if (e.parent < 0 || e.parent >= d || e.child < 0 || e.child >= d)
      throw PreconditionError("edge endpoint out of range: " + std::to_string(e.parent) + "->" + std::to_string(e.child));
    if (e.parent == e.child) throw PreconditionError("self-loop on node " + std::to_string(e.parent));
    auto& cell = adj_[static_cast<std::size_t>(e.parent * d + e.child)];
    if (cell) throw PreconditionError("duplicate edge " + std::to_string(e.parent) + "->" + std::to_string(e.child));
    cell = 1;
  }
  std::sort(edges_.begin(), edges_.end());
  if (static_cast<int>(kahn_order(d, adj_).size()) != d) throw CyclicGraphError("edge set contains a directed cycle");
}

Dag Dag::from_support(const Matrix& B, double tol, std::vector<std::string> labels) {
  if (B.rows() != B.cols()) throw DimensionError("weight matrix must be square");
  std::vector<Edge> edges;
  for (Index i = 0; i < B.rows(); ++i)
    for (Index j = 0; j < B.cols(); ++j)
      if (i != j && std::abs(B(i, j)) > tol) edges.push_back({static_cast<int>(i), static_cast<int>(j)});
  for (Index i = 0; i < B.rows(); ++i)
    if (std::abs(B(i, i)) > tol) throw CyclicGraphError("nonzero diagonal entry (self-loop) at " + std::to_string(i));
  return Dag(static_cast<int>(B.rows()), std::move(edges), std::move(labels));
}

std::string Dag::label(int j) const {
  if (j < 0 || j >= d_) throw PreconditionError("node index out of range");
  return labels_.empty() ? std::to_string(j) : labels_[static_cast<std::size_t>(j)];
}

bool Dag::has_edge(int parent, int child) const {
  if (parent < 0 || child < 0 || parent >= d_ || child >= d_) return false;
  return adj_[static_cast<std::size_t>(parent * d_ + child)] != 0;
}

std::vector<int> Dag::parents(int j) const {
  std::vector<int> out;
  for (int i = 0; i < d_; ++i)
    if (has_edge(i, j)) out.push_back(i);
  return out;
}

std::vector<int> Dag::topological_order() const { return kahn_order(d_, adj_); }

Dag Dag::without_edge(Edge e) const {
  if (!has_edge(e.parent, e.child)) throw PreconditionError("edge to remove is not in the graph");
  std::vector<Edge> kept;
  for (const Edge& f : edges_)
    if (f != e) kept.push_back(f);
  return Dag(d_, std::move(kept), labels_);
}

bool Dag::is_subgraph_of(const Dag& other) const {
  if (other.d_ != d_) return false;
  return std::all_of(edges_.begin(), edges_.end(), [&](const Edge& e) { return other.has_edge(e.parent, e.child); });
}

Pdag::Pdag(int d, std::vector<std::string> labels) : d_(d), labels_(std::move(labels)) {
  if (d < 0) throw DimensionError("negative node count");
  check_labels(d, labels_);
  adj_.assign(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0);
}

void Pdag::add_undirected(int i, int j) {
  if (i == j) throw PreconditionError("self-loop");
  adj_[static_cast<std::size_t>(i * d_ + j)] = 1;
  adj_[static_cast<std::size_t>(j * d_ + i)] = 1;
}

void Pdag::orient(int from, int to) {
  if (!adjacent(from, to)) throw PreconditionError("cannot orient a non-adjacent pair");
  adj_[static_cast<std::size_t>(from * d_ + to)] = 1;
  adj_[static_cast<std::size_t>(to * d_ + from)] = 0;
}

void Pdag::remove(int i, int j) {
  adj_[static_cast<std::size_t>(i * d_ + j)] = 0;
  adj_[static_cast<std::size_t>(j * d_ + i)] = 0;
}

int Pdag::edge_count() const {
  int n = 0;
  for (int i = 0; i < d_; ++i)
    for (int j = i + 1; j < d_; ++j)
      if (adjacent(i, j)) ++n;
  return n;
}

bool is_dag(const Matrix& B, double tol) {
  if (B.rows() != B.cols()) throw DimensionError("weight matrix must be square");
  const int d = static_cast<int>(B.rows());
  std::vector<std::uint8_t> adj(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if (std::abs(B(i, j)) > tol) {
        if (i == j) return false;
        adj[static_cast<std::size_t>(i * d + j)] = 1;
      }
  return static_cast<int>(kahn_order(d, adj).size()) == d;
}

}  // namespace advmiss
