#include "advmiss/scm.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "advmiss/errors.hpp"

namespace advmiss {

CovMatrix::CovMatrix(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("covariance must be square");
  if (!m.allFinite()) throw FactorizationError("covariance has non-finite entries");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
    throw PreconditionError("covariance is not symmetric");
  m_ = 0.5 * (m + m.transpose());
  llt_.compute(m_);
  if (llt_.info() != Eigen::Success) throw FactorizationError("covariance is not positive definite");
  const Vector diag = llt_.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any()) throw FactorizationError("covariance is not positive definite");
  logdet_ = 2.0 * diag.array().log().sum();
}

Matrix CovMatrix::inverse() const { return llt_.solve(Matrix::Identity(m_.rows(), m_.cols())); }

GaussianScm::GaussianScm(Matrix B, Vector noise_vars) : B_(std::move(B)), noise_(std::move(noise_vars)) {
  if (B_.rows() != B_.cols()) throw DimensionError("B must be square");
  if (noise_.size() != B_.rows()) throw DimensionError("noise variance length must equal B dimension");
  if (!B_.allFinite()) throw PreconditionError("B has non-finite entries");
  if (!(noise_.array() > 0.0).all() || !noise_.allFinite())
    throw PreconditionError("noise variances must be positive and finite");
  if (!is_dag(B_, 0.0)) throw CyclicGraphError("support of B is not acyclic");
}

GaussianScm GaussianScm::equal_variance(Matrix B, double sigma2) {
  const Index d = B.rows();
  return GaussianScm(std::move(B), Vector::Constant(d, sigma2));
}

CovMatrix covariance_of(const GaussianScm& scm) { return implied_covariance(scm.B(), scm.noise_vars()); }

CovMatrix implied_covariance(const Matrix& B, const Vector& noise_vars) {
  const Index d = B.rows();
  if (B.cols() != d || noise_vars.size() != d) throw DimensionError("B and noise variances disagree in dimension");
  const Matrix IminusB = Matrix::Identity(d, d) - B;
  Eigen::PartialPivLU<Matrix> lu(IminusB);
  const Matrix inv = lu.inverse();
  if (!inv.allFinite()) throw FactorizationError("I - B is singular");
  Matrix sigma = inv.transpose() * noise_vars.asDiagonal() * inv;
  sigma = 0.5 * (sigma + sigma.transpose());
  return CovMatrix(sigma);
}

Matrix sample(const GaussianScm& scm, Index n, std::uint64_t seed) {
  if (n < 1) throw PreconditionError("sample size must be >= 1");
  const int d = scm.dim();
  const std::vector<int> order = scm.dag().topological_order();
  const Vector sd = scm.noise_vars().cwiseSqrt();
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix X(n, d);
  for (Index i = 0; i < n; ++i) {
    for (int j : order) {
      double v = sd(j) * z(gen);
      for (int k = 0; k < d; ++k)
        if (scm.B()(k, j) != 0.0) v += scm.B()(k, j) * X(i, k);
      X(i, j) = v;
    }
  }
  return X;
}

double gaussian_kl(const CovMatrix& s1, const CovMatrix& s2) {
  if (s1.dim() != s2.dim()) throw DimensionError("KL arguments differ in dimension");
  const double tr = s2.solve(s1.matrix()).trace();
  const double kl = 0.5 * (tr - s1.dim() + s2.logdet() - s1.logdet());
  return std::max(kl, 0.0);
}

double factorized_kl(const GaussianScm& p, const GaussianScm& q, const Dag& g) {
  const int d = g.size();
  if (p.dim() != d || q.dim() != d) throw DimensionError("SCMs and DAG differ in dimension");
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      if ((p.B()(i, j) != 0.0 || q.B()(i, j) != 0.0) && !g.has_edge(i, j))
        throw PreconditionError("SCM support is not contained in the given DAG");
  const CovMatrix sp = covariance_of(p);
  double total = 0.0;
  for (int j = 0; j < d; ++j) {
    const std::vector<int> pa = g.parents(j);
    const double vp = p.noise_vars()(j), vq = q.noise_vars()(j);
    double term = vp / vq - 1.0 + std::log(vq / vp);
    if (!pa.empty()) {
      Vector diff(static_cast<Index>(pa.size()));
      for (std::size_t k = 0; k < pa.size(); ++k) diff(static_cast<Index>(k)) = p.B()(pa[k], j) - q.B()(pa[k], j);
      const Matrix spp = submatrix(sp.matrix(), pa, pa);
      term += diff.dot(spp * diff) / vq;
    }
    total += 0.5 * term;
  }
  return total;
}

ConditionalGaussian conditional_gaussian(const CovMatrix& sigma, int j, std::span<const int> S) {
  const int d = sigma.dim();
  if (j < 0 || j >= d) throw PreconditionError("target index out of range");
  for (int s : S) {
    if (s < 0 || s >= d) throw PreconditionError("conditioning index out of range");
    if (s == j) throw PreconditionError("target must not be in the conditioning set");
  }
  ConditionalGaussian out;
  out.target = j;
  out.given.assign(S.begin(), S.end());
  if (S.empty()) {
    out.weights = Vector();
    out.variance = sigma(j, j);
    return out;
  }
  const Matrix sss = submatrix(sigma.matrix(), S, S);
  Vector ssj(static_cast<Index>(S.size()));
  for (std::size_t k = 0; k < S.size(); ++k) ssj(static_cast<Index>(k)) = sigma(S[k], j);
  Eigen::LLT<Matrix> llt(sss);
  if (llt.info() != Eigen::Success) throw FactorizationError("conditioning block is singular");
  out.weights = llt.solve(ssj);
  out.variance = sigma(j, j) - ssj.dot(out.weights);
  if (!(out.variance > 0.0)) throw FactorizationError("conditional variance is not positive");
  return out;
}

double gaussian_logpdf(const Vector& x, const CovMatrix& sigma) {
  if (x.size() != sigma.dim()) throw DimensionError("point and covariance differ in dimension");
  const Vector y = sigma.llt().matrixL().solve(x);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + sigma.logdet() + y.squaredNorm());
}

Matrix second_moment(const Matrix& X) {
  if (X.rows() == 0) throw PreconditionError("empty sample");
  return (X.transpose() * X) / static_cast<double>(X.rows());
}

}  // namespace advmiss
