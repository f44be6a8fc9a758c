#pragma once

#include <random>

#include "advmiss/scm.hpp"

namespace testsupport {

using advmiss::Matrix;
using advmiss::Vector;

inline Matrix scm1_B() {
  Matrix B = Matrix::Zero(3, 3);
  B(0, 1) = -0.9;
  B(0, 2) = -0.8;
  return B;
}

inline Matrix scm2_B() {
  Matrix B = Matrix::Zero(6, 6);
  B(0, 1) = -0.54;
  B(0, 3) = 1.15;
  B(1, 2) = 0.4;
  B(2, 3) = -1.43;
  B(2, 4) = -0.9;
  B(2, 5) = 1.29;
  return B;
}

/// Random upper-triangular support (edge prob p) under a random node relabeling.
inline Matrix random_dag_support(int d, double p, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> perm(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), gen);
  Matrix S = Matrix::Zero(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      if (u(gen) < p) S(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]) = 1.0;
  return S;
}

inline advmiss::GaussianScm random_scm_on(const Matrix& support, std::mt19937_64& gen) {
  std::uniform_real_distribution<double> w(0.3, 1.5), v(0.5, 2.0);
  std::bernoulli_distribution sign(0.5);
  Matrix B = Matrix::Zero(support.rows(), support.cols());
  for (Eigen::Index i = 0; i < B.rows(); ++i)
    for (Eigen::Index j = 0; j < B.cols(); ++j)
      if (support(i, j) != 0.0) B(i, j) = (sign(gen) ? 1.0 : -1.0) * w(gen);
  Vector nv(B.rows());
  for (Eigen::Index j = 0; j < nv.size(); ++j) nv(j) = v(gen);
  return advmiss::GaussianScm(B, nv);
}

/// Independent structural-equation simulator (node order 0..d-1 must be topological).
inline Matrix simulate_in_index_order(const Matrix& B, const Vector& noise, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed ^ 0xabcdefULL);
  std::normal_distribution<double> z;
  const Eigen::Index d = B.rows();
  Matrix X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      double v = std::sqrt(noise(j)) * z(gen);
      for (Eigen::Index k = 0; k < j; ++k) v += B(k, j) * X(i, k);
      X(i, j) = v;
    }
  return X;
}

/// Standard error of each entry of the sample second moment of zero-mean rows.
inline Matrix second_moment_se(const Matrix& X) {
  const double n = static_cast<double>(X.rows());
  Matrix se(X.cols(), X.cols());
  for (Eigen::Index a = 0; a < X.cols(); ++a)
    for (Eigen::Index b = 0; b < X.cols(); ++b) {
      const Vector prod = X.col(a).cwiseProduct(X.col(b));
      const double m = prod.mean();
      se(a, b) = std::sqrt((prod.array() - m).square().sum() / (n - 1.0) / n);
    }
  return se;
}

}  // namespace testsupport

namespace testsupport {

/// Projected gradient descent on KL(N(0,Σp) || N(0,Σ(B,D))) over B supported on
/// `support` and D >= 1e-8, using the joint (non-factorized) KL and Armijo
/// backtracking. Returns the minimal KL found.
inline double brute_force_min_kl(const Matrix& sigma_p, const Matrix& support, int max_iter = 200000) {
  const Eigen::Index d = sigma_p.rows();
  const double logdet_p = std::log(sigma_p.determinant());
  auto kl = [&](const Matrix& B, const Vector& D) {
    const Matrix I_B = Matrix::Identity(d, d) - B;
    const Matrix Q = I_B.transpose() * sigma_p * I_B;
    double s = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) s += Q(j, j) / D(j) + std::log(D(j));
    return 0.5 * (s - static_cast<double>(d) - logdet_p);
  };
  Matrix B = Matrix::Zero(d, d);
  Vector D = Vector::Ones(d);
  double f = kl(B, D);
  double step = 1.0;
  for (int it = 0; it < max_iter; ++it) {
    const Matrix I_B = Matrix::Identity(d, d) - B;
    const Matrix Q = I_B.transpose() * sigma_p * I_B;
    Matrix gB = -(sigma_p * I_B) * D.cwiseInverse().asDiagonal();
    gB = gB.cwiseProduct(support);
    Vector gD(d);
    for (Eigen::Index j = 0; j < d; ++j) gD(j) = 0.5 * (-Q(j, j) / (D(j) * D(j)) + 1.0 / D(j));
    const double gnorm2 = gB.squaredNorm() + gD.squaredNorm();
    if (gnorm2 < 1e-24) break;
    step = std::min(1.0, step * 2.0);
    for (;;) {
      const Matrix Bn = B - step * gB;
      const Vector Dn = (D - step * gD).cwiseMax(1e-8);
      const double fn = kl(Bn, Dn);
      const double decrease = gB.cwiseProduct(B - Bn).sum() + gD.dot(D - Dn);
      if (fn <= f - 1e-4 * decrease || step < 1e-14) {
        B = Bn;
        D = Dn;
        f = fn;
        break;
      }
      step *= 0.5;
    }
  }
  return f;
}

/// Two-sample energy-distance permutation test; returns the p-value.
inline double energy_test_pvalue(const Matrix& X, const Matrix& Y, int permutations, std::uint64_t seed) {
  const Eigen::Index n = X.rows(), m = Y.rows(), t = n + m;
  Matrix Z(t, X.cols());
  Z << X, Y;
  Matrix dist(t, t);
  for (Eigen::Index a = 0; a < t; ++a)
    for (Eigen::Index b = 0; b < t; ++b) dist(a, b) = (Z.row(a) - Z.row(b)).norm();
  auto stat = [&](const std::vector<int>& idx) {
    double xy = 0.0, xx = 0.0, yy = 0.0;
    for (Eigen::Index a = 0; a < t; ++a)
      for (Eigen::Index b = 0; b < t; ++b) {
        const double v = dist(idx[static_cast<std::size_t>(a)], idx[static_cast<std::size_t>(b)]);
        const bool ax = a < n, bx = b < n;
        if (ax && bx) xx += v;
        else if (!ax && !bx) yy += v;
        else xy += v;
      }
    const double dn = static_cast<double>(n), dm = static_cast<double>(m);
    return xy / (dn * dm) - xx / (dn * dn) - yy / (dm * dm);
  };
  std::vector<int> idx(static_cast<std::size_t>(t));
  for (Eigen::Index a = 0; a < t; ++a) idx[static_cast<std::size_t>(a)] = static_cast<int>(a);
  const double observed = stat(idx);
  std::mt19937_64 gen(seed);
  int at_least = 1;
  for (int p = 0; p < permutations; ++p) {
    std::shuffle(idx.begin(), idx.end(), gen);
    if (stat(idx) >= observed) ++at_least;
  }
  return static_cast<double>(at_least) / (permutations + 1);
}

/// Cholesky sampler of N(0, sigma), independent of the SCM code path.
inline Matrix mvn_rows(const Matrix& sigma, Eigen::Index n, std::uint64_t seed) {
  const Matrix L = sigma.llt().matrixL();
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  Matrix X(n, sigma.rows());
  for (Eigen::Index i = 0; i < n; ++i) {
    Vector e(sigma.rows());
    for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = z(gen);
    X.row(i) = (L * e).transpose();
  }
  return X;
}

}  // namespace testsupport
