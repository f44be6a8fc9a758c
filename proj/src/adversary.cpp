#include "advmiss/adversary.hpp"

#include <cmath>

#include "advmiss/errors.hpp"

namespace advmiss {

GaussianScm optimal_adversarial_scm(const CovMatrix& sigma_p, const Dag& g_alpha) {
  const int d = sigma_p.dim();
  if (g_alpha.size() != d) throw DimensionError("DAG and covariance differ in dimension");
  Matrix B = Matrix::Zero(d, d);
  Vector noise(d);
  for (int j = 0; j < d; ++j) {
    const std::vector<int> pa = g_alpha.parents(j);
    const ConditionalGaussian c = conditional_gaussian(sigma_p, j, pa);
    for (std::size_t k = 0; k < pa.size(); ++k) B(pa[k], j) = c.weights(static_cast<Index>(k));
    noise(j) = c.variance;
  }
  return GaussianScm(B, noise);
}

GaussianScm edge_reweight(const GaussianScm& scm, Edge e, double weight) {
  const int d = scm.dim();
  if (e.parent < 0 || e.child < 0 || e.parent >= d || e.child >= d || e.parent == e.child)
    throw PreconditionError("edge endpoints out of range");
  Matrix B = scm.B();
  B(e.parent, e.child) = weight;
  return GaussianScm(B, scm.noise_vars());
}

CovMatrix covariance_zeroing(const CovMatrix& sigma, std::span<const std::pair<int, int>> entries) {
  Matrix m = sigma.matrix();
  for (auto [i, j] : entries) {
    if (i < 0 || j < 0 || i >= m.rows() || j >= m.rows() || i == j)
      throw PreconditionError("zeroed entry must be an off-diagonal index pair");
    m(i, j) = 0.0;
    m(j, i) = 0.0;
  }
  try {
    return CovMatrix(m);
  } catch (const FactorizationError&) {
    throw FactorizationError("covariance is no longer positive definite after zeroing");
  }
}

DensityRatio::DensityRatio(const CovMatrix& sigma_p_v, const CovMatrix& sigma_alpha_v) {
  if (sigma_p_v.dim() != sigma_alpha_v.dim()) throw DimensionError("marginals differ in dimension");
  M_ = sigma_alpha_v.inverse() - sigma_p_v.inverse();
  M_ = 0.5 * (M_ + M_.transpose());
  c_ = 0.5 * (sigma_p_v.logdet() - sigma_alpha_v.logdet());
}

double DensityRatio::ratio(const Vector& x_v) const { return std::exp(log_ratio(x_v)); }

LambdaBound lambda_max_analytic(const DensityRatio& r, double tol) {
  if (r.dim() == 0) return {true, 1.0};
  const Eigen::SelfAdjointEigenSolver<Matrix> es(r.exponent_form(), Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -tol * scale) return {false, std::numeric_limits<double>::infinity()};
  return {true, std::exp(r.log_ratio_at_zero())};
}

double lambda_max_empirical(const DensityRatio& r, const Matrix& rows, std::span<const int> v) {
  if (rows.rows() == 0) throw PreconditionError("empirical Lambda needs calibration rows");
  if (static_cast<int>(v.size()) != r.dim()) throw DimensionError("index set does not match ratio dimension");
  double best = -std::numeric_limits<double>::infinity();
  Vector xv(r.dim());
  for (Index i = 0; i < rows.rows(); ++i) {
    for (std::size_t k = 0; k < v.size(); ++k) xv(static_cast<Index>(k)) = rows(i, v[k]);
    best = std::max(best, r.log_ratio(xv));
  }
  return std::exp(best);
}

}  // namespace advmiss
