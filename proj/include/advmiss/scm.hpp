#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Cholesky>

#include "advmiss/graph.hpp"
#include "advmiss/linalg.hpp"

namespace advmiss {

/// Symmetric positive-definite matrix. The input is symmetrized (A+Aᵀ)/2 and
/// must factor by Cholesky; asymmetry beyond 1e-10 (relative) is rejected.
class CovMatrix {
 public:
  CovMatrix() = default;
  explicit CovMatrix(const Matrix& m);

  static CovMatrix identity(int d) { return CovMatrix(Matrix::Identity(d, d)); }

  int dim() const { return static_cast<int>(m_.rows()); }
  const Matrix& matrix() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }

  double logdet() const { return logdet_; }
  Matrix inverse() const;
  Matrix solve(const Matrix& rhs) const { return llt_.solve(rhs); }
  const Eigen::LLT<Matrix>& llt() const { return llt_; }

  CovMatrix marginal(std::span<const int> idx) const { return CovMatrix(submatrix(m_, idx, idx)); }

 private:
  Matrix m_;
  Eigen::LLT<Matrix> llt_;
  double logdet_ = 0.0;
};

/// Linear Gaussian SCM X = BᵀX + n, n ~ N(0, diag(noise_vars)).
/// B(i,j) is the weight of edge i -> j.
class GaussianScm {
 public:
  GaussianScm() = default;
  GaussianScm(Matrix B, Vector noise_vars);
  static GaussianScm equal_variance(Matrix B, double sigma2 = 1.0);

  int dim() const { return static_cast<int>(B_.rows()); }
  const Matrix& B() const { return B_; }
  const Vector& noise_vars() const { return noise_; }
  Dag dag(std::vector<std::string> labels = {}) const { return Dag::from_support(B_, 0.0, std::move(labels)); }

 private:
  Matrix B_;
  Vector noise_;
};

struct ConditionalGaussian {
  int target = 0;
  std::vector<int> given;
  Vector weights;
  double variance = 0.0;
};

/// (I-B)^{-T} D (I-B)^{-1}.
CovMatrix covariance_of(const GaussianScm& scm);
/// Same formula for a weight matrix that is only approximately acyclic (the
/// dense iterates of a continuous DAG solver); needs I - B nonsingular.
CovMatrix implied_covariance(const Matrix& B, const Vector& noise_vars);

/// n x d matrix of i.i.d. rows, forward-simulated in topological order.
Matrix sample(const GaussianScm& scm, Index n, std::uint64_t seed);

/// KL(N(0,s1) || N(0,s2)).
double gaussian_kl(const CovMatrix& s1, const CovMatrix& s2);

/// Sum over nodes of the expected KL between the node conditionals given
/// their parents in g, both SCMs being Markov to g.
double factorized_kl(const GaussianScm& p, const GaussianScm& q, const Dag& g);

ConditionalGaussian conditional_gaussian(const CovMatrix& sigma, int j, std::span<const int> S);

/// log N(x; 0, sigma).
double gaussian_logpdf(const Vector& x, const CovMatrix& sigma);

/// Empirical covariance (divides by n) of zero-mean rows, no centering.
Matrix second_moment(const Matrix& X);

}  // namespace advmiss
