#pragma once

#include <vector>

#include "advmiss/dataset.hpp"
#include "advmiss/graph.hpp"

namespace advmiss {

enum class Deletion { Complete, Testwise };

struct PcOptions {
  double alpha = 0.01;
  Deletion deletion = Deletion::Complete;
  int max_cond_size = -1;  // -1: unbounded
};

struct PcResult {
  Pdag cpdag;
  int tests_run = 0;
  int tests_skipped = 0;  // too few usable rows; edge kept
};

/// PC with Fisher-z tests: order-independent skeleton phase (adjacencies frozen
/// per level), v-structures with conflicting orientations left undirected,
/// then Meek rules R1-R4.
PcResult pc_fisherz(const MaskedDataset& mds, const PcOptions& opts = {});
PcResult pc_fisherz(const Dataset& ds, const PcOptions& opts = {});

/// Two-sided p-value of H0: partial correlation r = 0 given |S| = k, n rows.
double fisher_z_pvalue(double r, Index n, int k);

}  // namespace advmiss
