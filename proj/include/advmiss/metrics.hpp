#pragma once

#include <string>
#include <vector>

#include "advmiss/graph.hpp"
#include "advmiss/linalg.hpp"

namespace advmiss {

/// Per unordered node pair: +1 when adjacency or orientation differs, so a
/// reversed edge counts once.
int hamming_distance(const Dag& g1, const Dag& g2);

/// Estimated CPDAG against a reference DAG. A reference edge i -> j counts as
/// recovered if the CPDAG has i -> j or i - j; each extra adjacency counts once.
int hamming_distance(const Pdag& est, const Dag& ref);

/// |E1 Δ E2| over directed edges (a reversal counts twice).
int directed_symmetric_difference(const Dag& g1, const Dag& g2);

/// 1 iff the target edge is absent (for a CPDAG, neither directed nor undirected).
int attack_success(const Dag& g_hat, Edge target);
int attack_success(const Pdag& g_hat, Edge target);

/// Edges with |B_ij| > w_threshold; throws CyclicGraphError when the support is cyclic.
Dag threshold_graph(const Matrix& B, double w_threshold, std::vector<std::string> labels = {});

/// Edge from column names; throws ConfigError for unknown names.
Edge resolve_edge(const std::vector<std::string>& labels, const std::string& parent, const std::string& child);

}  // namespace advmiss
