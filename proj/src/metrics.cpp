#include "advmiss/metrics.hpp"

#include <algorithm>

#include "advmiss/errors.hpp"

namespace advmiss {

namespace {

void check_sizes(int a, int b) {
  if (a != b) throw DimensionError("graphs have different node sets (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

void check_edge(int d, Edge e) {
  if (e.parent < 0 || e.parent >= d || e.child < 0 || e.child >= d || e.parent == e.child)
    throw PreconditionError("target edge does not name two distinct nodes of the graph");
}

}  // namespace

int hamming_distance(const Dag& g1, const Dag& g2) {
  check_sizes(g1.size(), g2.size());
  int hd = 0;
  for (int i = 0; i < g1.size(); ++i)
    for (int j = i + 1; j < g1.size(); ++j) {
      const bool a_ij = g1.has_edge(i, j), a_ji = g1.has_edge(j, i);
      const bool b_ij = g2.has_edge(i, j), b_ji = g2.has_edge(j, i);
      if (a_ij != b_ij || a_ji != b_ji) ++hd;
    }
  return hd;
}

int hamming_distance(const Pdag& est, const Dag& ref) {
  check_sizes(est.size(), ref.size());
  int hd = 0;
  for (int i = 0; i < ref.size(); ++i)
    for (int j = i + 1; j < ref.size(); ++j) {
      if (ref.has_edge(i, j)) {
        if (!(est.directed(i, j) || est.undirected(i, j))) ++hd;
      } else if (ref.has_edge(j, i)) {
        if (!(est.directed(j, i) || est.undirected(i, j))) ++hd;
      } else if (est.adjacent(i, j)) {
        ++hd;
      }
    }
  return hd;
}

int directed_symmetric_difference(const Dag& g1, const Dag& g2) {
  check_sizes(g1.size(), g2.size());
  int n = 0;
  for (int i = 0; i < g1.size(); ++i)
    for (int j = 0; j < g1.size(); ++j)
      if (i != j && g1.has_edge(i, j) != g2.has_edge(i, j)) ++n;
  return n;
}

int attack_success(const Dag& g_hat, Edge target) {
  check_edge(g_hat.size(), target);
  return g_hat.has_edge(target.parent, target.child) ? 0 : 1;
}

int attack_success(const Pdag& g_hat, Edge target) {
  check_edge(g_hat.size(), target);
  return g_hat.directed(target.parent, target.child) || g_hat.undirected(target.parent, target.child) ? 0 : 1;
}

Dag threshold_graph(const Matrix& B, double w_threshold, std::vector<std::string> labels) {
  if (!B.allFinite()) throw PreconditionError("weight matrix has non-finite entries");
  if (w_threshold < 0.0) throw PreconditionError("weight threshold must be nonnegative");
  return Dag::from_support(B, w_threshold, std::move(labels));
}

Edge resolve_edge(const std::vector<std::string>& labels, const std::string& parent, const std::string& child) {
  auto find = [&](const std::string& name) {
    const auto it = std::find(labels.begin(), labels.end(), name);
    if (it == labels.end()) throw ConfigError("unknown column '" + name + "'");
    return static_cast<int>(it - labels.begin());
  };
  return {find(parent), find(child)};
}

}  // namespace advmiss
