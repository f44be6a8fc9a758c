#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "advmiss/dataset.hpp"
#include "advmiss/graph.hpp"
#include "advmiss/kernels.hpp"
#include "advmiss/notears.hpp"
#include "advmiss/scm.hpp"

namespace advmiss {

struct InitScheme {
  enum class Tag { EmpDiag, Identity, True, RandomSpd, InvWishart };
  Tag tag = Tag::EmpDiag;
  std::uint64_t seed = 0;

  static InitScheme parse(const std::string& name, std::uint64_t seed = 0);  // emp_diag|identity|true|random|iw
  std::string name() const;
};

/// Random SPD matrix: U (I + diag(u)) Vᵀ from the SVD of AᵀA, A uniform.
Matrix random_spd(int d, std::uint64_t seed);
/// Rescale an SPD matrix so that its diagonal equals `diag`.
Matrix rescale_to_diagonal(const Matrix& m, const Vector& diag);
/// Observed-entry sample variances (n−1 denominator) per column.
Vector observed_variances(const MaskedDataset& mds);

CovMatrix init_covariance(const InitScheme& scheme, const MaskedDataset& mds,
                          const std::optional<CovMatrix>& sigma_true = std::nullopt);

enum class VarianceMode { Equal, PerNode };

/// Residual variances from T̂ and B: tr((I−B)ᵀT̂(I−B))/(Nd) (equal, every entry
/// the same) or diag((I−B)ᵀT̂(I−B))/N; floored at 1e-8.
Vector variance_update(const SufficientStats& st, const Matrix& B, VarianceMode mode);

struct MissDagOptions {
  double eps = 1e-5;
  VarianceMode var_mode = VarianceMode::Equal;
  double l1 = 0.1;
  double w_threshold = 0.3;
  int max_iter = 100;
  /// Start each M-step's NOTEARS solve from the previous B instead of 0.
  bool warm_start = false;
  /// From the second iteration on, an M-step that lowers the observed
  /// log-likelihood ends the run at the previous iterate instead of being kept.
  bool gem_safeguard = false;
  NotearsOptions notears;
};

struct FitResult {
  Matrix b_hat;
  Vector noise;
  VarianceMode var_mode = VarianceMode::Equal;
  CovMatrix sigma_hat;
  Dag graph;
  std::vector<double> loglik_trace;  // observed log-likelihood of each EM iterate
  int iterations = 0;
  bool rejected_step = false;  // the run ended on a safeguard rejection
};

/// E_θᵗ[log p(X; θ)] summed over rows: −½[N d log 2π + N logdet Σ + tr(Σ⁻¹T̂)].
double expected_complete_loglik(const SufficientStats& st, const CovMatrix& sigma);

/// B̂ from a fit, thresholded into a DAG (throws CyclicGraphError).
Dag fitted_graph(const Matrix& b_hat, double w_threshold, const std::vector<std::string>& labels);

FitResult missdag(const MaskedDataset& mds, const InitScheme& init, const MissDagOptions& opts = {},
                  const std::optional<CovMatrix>& sigma_true = std::nullopt);
FitResult missdag(const PatternMoments& pm, const CovMatrix& sigma0, const std::vector<std::string>& labels,
                  const MissDagOptions& opts = {});

/// Mean imputation, centering, then one NOTEARS fit on the imputed Gram matrix.
FitResult mean_impute_notears(const MaskedDataset& mds, const MissDagOptions& opts = {});
/// NOTEARS on a complete dataset (centered inside).
FitResult notears_fit(const Dataset& ds, const MissDagOptions& opts = {});

}  // namespace advmiss
