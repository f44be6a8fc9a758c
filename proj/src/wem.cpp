#include "advmiss/wem.hpp"

#include <cmath>
#include <numbers>

#include <spdlog/spdlog.h>

#include "advmiss/errors.hpp"

namespace advmiss {

Matrix missingness_weights(const Matrix& probs, const PatternCodec& codec) {
  if (probs.cols() != codec.size()) throw DimensionError("probability columns must match the codec size");
  if (!codec.covers_all()) return probs;
  Matrix omega = probs;
  for (Index i = 0; i < probs.rows(); ++i) {
    const double s = std::max(1.0 - probs(i, 0), 1e-300);
    omega(i, 0) = 0.0;
    omega.row(i).tail(probs.cols() - 1) /= s;
  }
  return omega;
}

Matrix weights_to_probs_gradient(const Matrix& probs, const Matrix& omega_bar, const PatternCodec& codec) {
  if (!codec.covers_all()) return omega_bar;
  Matrix pbar(probs.rows(), probs.cols());
  const Index K = probs.cols();
  for (Index i = 0; i < probs.rows(); ++i) {
    const double s = std::max(1.0 - probs(i, 0), 1e-300);
    pbar.row(i).tail(K - 1) = omega_bar.row(i).tail(K - 1) / s;
    pbar(i, 0) = omega_bar.row(i).tail(K - 1).dot(probs.row(i).tail(K - 1)) / (s * s);
  }
  return pbar;
}

PatternMoments wem_moments(const Matrix& X, const Matrix& omega, const PatternCodec& codec) {
  if (X.cols() != codec.dim()) throw DimensionError("data width does not match codec");
  if (!X.allFinite()) throw PreconditionError("weighted EM needs fully observed data");
  return weighted_pattern_moments(X, omega, codec.all_bits());
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

struct Blocks {
  std::vector<int> o, h;
};

Blocks split(std::uint64_t bits, int d) {
  const ObservationPattern r{bits, d};
  return {r.observed_indices(), r.missing_indices()};
}

void scatter(Matrix& M, const std::vector<int>& r, const std::vector<int>& c, const Matrix& B) {
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) M(r[i], c[j]) += B(static_cast<Index>(i), static_cast<Index>(j));
}

void scatter(Vector& v, const std::vector<int>& r, const Vector& b) {
  for (std::size_t i = 0; i < r.size(); ++i) v(r[i]) += b(static_cast<Index>(i));
}

// Conditional quantities of one pattern under θ: x̂_h = A x_o + q, Cov = C.
struct Conditional {
  Matrix A, C, soo_inv;
  Vector q;
};

Conditional conditional(const Blocks& bl, const Vector& mu, const Matrix& sigma) {
  Conditional c;
  const Matrix soo = submatrix(sigma, bl.o, bl.o);
  const Matrix sho = submatrix(sigma, bl.h, bl.o);
  Eigen::LLT<Matrix> llt(soo);
  if (llt.info() != Eigen::Success) throw FactorizationError("observed covariance block is not positive definite");
  c.soo_inv = llt.solve(Matrix::Identity(soo.rows(), soo.cols()));
  c.A = sho * c.soo_inv;
  c.q = subvector(mu, bl.h) - c.A * subvector(mu, bl.o);
  c.C = submatrix(sigma, bl.h, bl.h) - c.A * sho.transpose();
  return c;
}

struct Step {
  Vector mu;
  Matrix sigma;
};

Step wem_step(const PatternMoments& pm, const Vector& mu, const Matrix& sigma) {
  const int d = pm.d;
  Vector T1 = Vector::Zero(d);
  Matrix T2 = Matrix::Zero(d, d);
  for (const auto& it : pm.items) {
    if (it.weight == 0.0) continue;
    const Blocks bl = split(it.bits, d);
    const double W = it.weight;
    if (bl.h.empty()) {
      T1 += it.s1;
      T2 += it.s2;
      continue;
    }
    if (bl.o.empty()) {
      T1 += W * mu;
      T2 += W * (sigma + mu * mu.transpose());
      continue;
    }
    const Conditional c = conditional(bl, mu, sigma);
    const Vector a = subvector(it.s1, bl.o);
    const Matrix S = submatrix(it.s2, bl.o, bl.o);
    const Matrix AS = c.A * S;
    const Vector Aa = c.A * a;
    scatter(T1, bl.o, a);
    scatter(T1, bl.h, Aa + W * c.q);
    scatter(T2, bl.o, bl.o, S);
    const Matrix tho = AS + c.q * a.transpose();
    scatter(T2, bl.h, bl.o, tho);
    scatter(T2, bl.o, bl.h, tho.transpose());
    const Matrix cross = Aa * c.q.transpose();
    scatter(T2, bl.h, bl.h,
            AS * c.A.transpose() + cross + cross.transpose() + W * (c.q * c.q.transpose()) + W * c.C);
  }
  const double N = pm.n;
  Step s;
  s.mu = T1 / N;
  s.sigma = T2 / N - s.mu * s.mu.transpose();
  s.sigma = 0.5 * (s.sigma + s.sigma.transpose()).eval();
  return s;
}

}  // namespace

double weighted_loglik(const PatternMoments& pm, const Vector& mu, const CovMatrix& sigma) {
  const int d = pm.d;
  if (sigma.dim() != d || mu.size() != d) throw DimensionError("parameters do not match data dimension");
  double J = 0.0;
  for (const auto& it : pm.items) {
    if (it.weight == 0.0) continue;
    const ObservationPattern r{it.bits, d};
    const std::vector<int> o = r.observed_indices();
    if (o.empty()) continue;
    const Matrix soo = submatrix(sigma.matrix(), o, o);
    Eigen::LLT<Matrix> llt(soo);
    if (llt.info() != Eigen::Success) throw FactorizationError("observed covariance block is not positive definite");
    const Vector a = subvector(it.s1, o), m = subvector(mu, o);
    const Matrix S = submatrix(it.s2, o, o);
    const Matrix M = S - a * m.transpose() - m * a.transpose() + it.weight * (m * m.transpose());
    double logdet = 0.0;
    for (Index j = 0; j < soo.rows(); ++j) logdet += 2.0 * std::log(llt.matrixL()(j, j));
    const double quad = llt.solve(M).trace();
    J += -0.5 * (it.weight * (static_cast<double>(o.size()) * kLog2Pi + logdet) + quad);
  }
  return J;
}

WemState wem(const PatternMoments& pm, const Vector& mu0, const CovMatrix& sigma0, const WemOptions& opts) {
  if (sigma0.dim() != pm.d || mu0.size() != pm.d) throw DimensionError("initial parameters do not match data dimension");
  if (!(pm.n > 0.0)) throw PreconditionError("weighted EM needs positive total weight");
  WemState st;
  st.mu = mu0;
  st.sigma = sigma0;
  st.mu_path.push_back(mu0);
  st.sigma_path.push_back(sigma0.matrix());
  double j_prev = weighted_loglik(pm, mu0, sigma0);
  st.j_trace.push_back(j_prev);
  const int cap = opts.fixed_iterations > 0 ? opts.fixed_iterations : opts.max_iter;
  bool converged = false;
  for (int it = 0; it < cap; ++it) {
    Step s = wem_step(pm, st.mu, st.sigma.matrix());
    Eigen::LLT<Matrix> llt(s.sigma);
    if (llt.info() != Eigen::Success) {
      spdlog::warn("wem: covariance lost positive definiteness at iteration {}; adding 1e-8 I", it + 1);
      s.sigma += 1e-8 * Matrix::Identity(pm.d, pm.d);
      ++st.jitter_count;
    }
    st.mu = s.mu;
    st.sigma = CovMatrix(s.sigma);
    st.mu_path.push_back(st.mu);
    st.sigma_path.push_back(st.sigma.matrix());
    ++st.iterations;
    const double j = weighted_loglik(pm, st.mu, st.sigma);
    st.j_trace.push_back(j);
    if (opts.fixed_iterations <= 0 && j - j_prev < opts.eps * std::abs(j_prev)) {
      converged = true;
      break;
    }
    j_prev = j;
  }
  if (opts.fixed_iterations <= 0 && !converged)
    spdlog::warn("wem: stop rule not met after {} iterations", opts.max_iter);
  return st;
}

WemState wem(const MlpPolicy& policy, const Matrix& X, const Vector& mu0, const CovMatrix& sigma0,
             const WemOptions& opts) {
  const Matrix omega = missingness_weights(policy.probs(X), policy.codec());
  return wem(wem_moments(X, omega, policy.codec()), mu0, sigma0, opts);
}

Matrix WemWeightAdjoint::weight_gradient(const Matrix& X) const {
  Matrix G(X.rows(), static_cast<Index>(H.size()));
  for (std::size_t k = 0; k < H.size(); ++k) {
    const Index kk = static_cast<Index>(k);
    G.col(kk) = (X * H[k]).cwiseProduct(X).rowwise().sum() + X * g[k];
    G.col(kk).array() += c(kk);
  }
  return G;
}

WemWeightAdjoint& WemWeightAdjoint::operator+=(const WemWeightAdjoint& o) {
  if (H.empty()) return *this = o;
  for (std::size_t k = 0; k < H.size(); ++k) {
    H[k] += o.H[k];
    g[k] += o.g[k];
  }
  c += o.c;
  return *this;
}

WemWeightAdjoint wem_backward(const WemState& st, const PatternMoments& pm, const Matrix& sigma_bar,
                              const Vector& mu_bar) {
  const int d = pm.d;
  const std::size_t K = pm.items.size();
  WemWeightAdjoint adj;
  adj.H.assign(K, Matrix::Zero(d, d));
  adj.g.assign(K, Vector::Zero(d));
  adj.c = Vector::Zero(static_cast<Index>(K));
  if (static_cast<int>(st.mu_path.size()) != st.iterations + 1) throw PreconditionError("WEM state has no iterate path");

  Matrix Sbar = 0.5 * (sigma_bar + sigma_bar.transpose());
  Vector mbar = mu_bar;
  const double N = pm.n;
  for (int t = st.iterations; t >= 1; --t) {
    // M-step: μ = T1/N, Σ = T2/N − μμᵀ
    const Vector& mu_t = st.mu_path[static_cast<std::size_t>(t)];
    const Matrix G2 = Sbar / N;
    const Vector G1 = (mbar - 2.0 * Sbar * mu_t) / N;

    // E-step at θ^{t-1}
    const Vector& mu = st.mu_path[static_cast<std::size_t>(t - 1)];
    const Matrix& sigma = st.sigma_path[static_cast<std::size_t>(t - 1)];
    Matrix Sprev = Matrix::Zero(d, d);
    Vector mprev = Vector::Zero(d);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& it = pm.items[k];
      const Blocks bl = split(it.bits, d);
      const double W = it.weight;
      const Index kk = static_cast<Index>(k);
      if (bl.h.empty()) {
        adj.H[k] += G2;
        adj.g[k] += G1;
        continue;
      }
      if (bl.o.empty()) {
        adj.c(kk) += G1.dot(mu) + mu.dot(G2 * mu) + G2.cwiseProduct(sigma).sum();
        mprev += W * G1 + 2.0 * W * G2 * mu;
        Sprev += W * G2;
        continue;
      }
      const Conditional c = conditional(bl, mu, sigma);
      // x̂ = P x + q̂ with P_oo = I, P_ho = A; Ĉ carries C on the hh block
      Matrix P = Matrix::Zero(d, d);
      for (std::size_t i = 0; i < bl.o.size(); ++i) P(bl.o[i], bl.o[i]) = 1.0;
      scatter(P, bl.h, bl.o, c.A);
      Vector qh = Vector::Zero(d);
      scatter(qh, bl.h, c.q);
      const Matrix Ghh = submatrix(G2, bl.h, bl.h);
      const Matrix PtG2 = P.transpose() * G2;
      adj.H[k] += PtG2 * P;
      adj.g[k] += P.transpose() * G1 + 2.0 * PtG2 * qh;
      adj.c(kk) += G1.dot(qh) + qh.dot(G2 * qh) + Ghh.cwiseProduct(c.C).sum();

      if (W == 0.0) continue;
      const Vector a = subvector(it.s1, bl.o);
      const Matrix S = submatrix(it.s2, bl.o, bl.o);
      const Vector G1h = subvector(G1, bl.h);
      const Matrix Gho = submatrix(G2, bl.h, bl.o);
      const Vector Aa = c.A * a;
      Matrix Abar = G1h * a.transpose() + 2.0 * Gho * S + 2.0 * Ghh * c.A * S + 2.0 * Ghh * c.q * a.transpose();
      const Vector qbar = W * G1h + 2.0 * Gho * a + 2.0 * Ghh * Aa + 2.0 * W * Ghh * c.q;
      const Matrix Cbar = W * Ghh;
      // q = μ_h − A μ_o
      const Vector mu_o = subvector(mu, bl.o);
      scatter(mprev, bl.h, qbar);
      scatter(mprev, bl.o, -(c.A.transpose() * qbar));
      Abar -= qbar * mu_o.transpose();
      // C = Σ_hh − A Σ_oh
      const Matrix sho = submatrix(sigma, bl.h, bl.o);
      scatter(Sprev, bl.h, bl.h, Cbar);
      Abar -= Cbar * sho;
      scatter(Sprev, bl.o, bl.h, -(c.A.transpose() * Cbar));
      // A = Σ_ho Σ_oo⁻¹
      const Matrix AbarInv = Abar * c.soo_inv;
      scatter(Sprev, bl.h, bl.o, AbarInv);
      scatter(Sprev, bl.o, bl.o, -(c.A.transpose() * AbarInv));
    }
    Sbar = 0.5 * (Sprev + Sprev.transpose());
    mbar = mprev;
  }
  return adj;
}

}  // namespace advmiss
