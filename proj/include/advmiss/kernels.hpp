#pragma once

#include <cstdint>
#include <vector>

#include "advmiss/dataset.hpp"
#include "advmiss/linalg.hpp"
#include "advmiss/scm.hpp"

namespace advmiss {

/// Rows are summed in fixed blocks of this many; blocks are combined in index
/// order, so results do not depend on the thread count.
inline constexpr Index kRowBlock = 1024;

/// Σ w x, Σ w x xᵀ over rows sharing one observation pattern (masked
/// coordinates are 0, so their rows/columns of s2 vanish).
struct PatternMoment {
  std::uint64_t bits = 0;
  double weight = 0.0;
  Vector s1;
  Matrix s2;
};

struct PatternMoments {
  int d = 0;
  double n = 0.0;
  std::vector<PatternMoment> items;  // sorted by bits
};

PatternMoments pattern_moments(const MaskedDataset& mds);
PatternMoments pattern_moments_serial(const MaskedDataset& mds);

/// Weighted moments of complete rows X for every pattern column of omega
/// (n x K, weight of row i under pattern k); `bits[k]` labels column k.
PatternMoments weighted_pattern_moments(const Matrix& X, const Matrix& omega, const std::vector<std::uint64_t>& bits);
PatternMoments weighted_pattern_moments_serial(const Matrix& X, const Matrix& omega,
                                               const std::vector<std::uint64_t>& bits);

struct SufficientStats {
  Matrix t_hat;  // Σ_i E[x xᵀ | x_o]
  double n = 0.0;
};

/// Zero-mean conditional second moments under sigma.
SufficientStats e_step_stats(const PatternMoments& pm, const CovMatrix& sigma);
SufficientStats e_step_stats(const MaskedDataset& mds, const CovMatrix& sigma);

/// Σ_i log N(x_o; 0, Σ_oo); all-masked rows contribute 0.
double observed_loglik(const PatternMoments& pm, const CovMatrix& sigma);
double observed_loglik(const MaskedDataset& mds, const CovMatrix& sigma);

}  // namespace advmiss
