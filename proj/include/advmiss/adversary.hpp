#pragma once

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "advmiss/graph.hpp"
#include "advmiss/scm.hpp"

namespace advmiss {

/// KL-closest SCM Markov to g_alpha: each node regressed on its g_alpha
/// parents under sigma_p, noise = residual variance.
GaussianScm optimal_adversarial_scm(const CovMatrix& sigma_p, const Dag& g_alpha);

/// Copy of scm with the weight of edge e replaced (0 removes it).
GaussianScm edge_reweight(const GaussianScm& scm, Edge e, double weight);

/// Covariance with the listed symmetric entries set to zero; must stay PD.
CovMatrix covariance_zeroing(const CovMatrix& sigma, std::span<const std::pair<int, int>> entries);

/// N(x; 0, Σα_V) / N(x; 0, Σp_V) on a fixed coordinate subset, kept in log space.
class DensityRatio {
 public:
  DensityRatio() = default;
  DensityRatio(const CovMatrix& sigma_p_v, const CovMatrix& sigma_alpha_v);

  int dim() const { return static_cast<int>(M_.rows()); }
  double log_ratio(const Vector& x_v) const { return c_ - 0.5 * x_v.dot(M_ * x_v); }
  double ratio(const Vector& x_v) const;

  /// Σα⁻¹ − Σp⁻¹; the ratio is bounded iff this is PSD.
  const Matrix& exponent_form() const { return M_; }
  /// log of the ratio at the origin, ½(logdet Σp − logdet Σα).
  double log_ratio_at_zero() const { return c_; }

 private:
  Matrix M_;
  double c_ = 0.0;
};

struct LambdaBound {
  bool bounded = false;
  double value = std::numeric_limits<double>::infinity();
};

/// Analytic supremum of the ratio: finite iff the exponent form is PSD
/// (smallest eigenvalue >= -tol·scale).
LambdaBound lambda_max_analytic(const DensityRatio& r, double tol = 1e-12);

/// Largest ratio over calibration rows; `v` selects the columns of `rows`.
double lambda_max_empirical(const DensityRatio& r, const Matrix& rows, std::span<const int> v);

}  // namespace advmiss
