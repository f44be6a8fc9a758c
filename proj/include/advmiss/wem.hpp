#pragma once

#include <vector>

#include "advmiss/kernels.hpp"
#include "advmiss/mlp.hpp"
#include "advmiss/scm.hpp"

namespace advmiss {

/// ω_{i,k}: policy probabilities renormalized over patterns that observe at
/// least one variable. When V is a strict subset every pattern qualifies and
/// ω equals the raw softmax; otherwise the all-masked column is zero.
Matrix missingness_weights(const Matrix& probs, const PatternCodec& codec);

/// Weighted pattern moments Σ_i ω_ik x_i, Σ_i ω_ik x_i x_iᵀ of complete rows.
PatternMoments wem_moments(const Matrix& X, const Matrix& omega, const PatternCodec& codec);

struct WemOptions {
  double eps = 1e-5;
  int max_iter = 1000;
  /// > 0: run exactly this many iterations, ignoring the stop rule.
  int fixed_iterations = 0;
};

struct WemState {
  Vector mu;
  CovMatrix sigma;
  int iterations = 0;
  std::vector<double> j_trace;  // J(θ⁰), J(θ¹), ...
  int jitter_count = 0;
  // Iterates θ⁰..θᵀ, kept for the reverse pass.
  std::vector<Vector> mu_path;
  std::vector<Matrix> sigma_path;
};

/// J(θ) = Σ_k Σ_i ω_ik log N(x_o; μ_o, Σ_oo).
double weighted_loglik(const PatternMoments& pm, const Vector& mu, const CovMatrix& sigma);

/// Weighted EM for an unconstrained Gaussian from (mu0, sigma0). Stops after
/// the first step whose J gain is below eps·|J| and returns that iterate.
WemState wem(const PatternMoments& pm, const Vector& mu0, const CovMatrix& sigma0, const WemOptions& opts = {});
WemState wem(const MlpPolicy& policy, const Matrix& X, const Vector& mu0, const CovMatrix& sigma0,
             const WemOptions& opts = {});

/// Reverse pass through the executed iterations. For upstream adjoints of the
/// final (μ, Σ), returns per-pattern coefficients with
/// dL/dω_ik = x_iᵀ H_k x_i + g_kᵀ x_i + c_k.
struct WemWeightAdjoint {
  std::vector<Matrix> H;
  std::vector<Vector> g;
  Vector c;

  /// Dense n x K matrix of dL/dω.
  Matrix weight_gradient(const Matrix& X) const;
  WemWeightAdjoint& operator+=(const WemWeightAdjoint& o);
};

WemWeightAdjoint wem_backward(const WemState& st, const PatternMoments& pm, const Matrix& sigma_bar,
                              const Vector& mu_bar);

/// dL/dp from dL/dω through the renormalization in missingness_weights.
Matrix weights_to_probs_gradient(const Matrix& probs, const Matrix& omega_bar, const PatternCodec& codec);

}  // namespace advmiss
