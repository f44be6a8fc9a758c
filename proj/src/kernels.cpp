#include "advmiss/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "advmiss/errors.hpp"

namespace advmiss {

namespace {

std::vector<std::uint64_t> distinct_patterns(const std::vector<std::uint64_t>& p) {
  std::vector<std::uint64_t> u(p);
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

PatternMoments empty_moments(int d, const std::vector<std::uint64_t>& bits) {
  PatternMoments pm;
  pm.d = d;
  pm.items.reserve(bits.size());
  for (auto b : bits) pm.items.push_back({b, 0.0, Vector::Zero(d), Matrix::Zero(d, d)});
  return pm;
}

void add_into(PatternMoments& acc, const PatternMoments& part) {
  for (std::size_t k = 0; k < acc.items.size(); ++k) {
    acc.items[k].weight += part.items[k].weight;
    acc.items[k].s1 += part.items[k].s1;
    acc.items[k].s2 += part.items[k].s2;
  }
}

// rows [lo, hi) of an unweighted masked dataset
void accumulate_masked(const MaskedDataset& mds, const std::vector<std::uint64_t>& bits, Index lo, Index hi,
                       PatternMoments& out) {
  for (Index i = lo; i < hi; ++i) {
    const auto k = static_cast<std::size_t>(
        std::lower_bound(bits.begin(), bits.end(), mds.patterns[static_cast<std::size_t>(i)]) - bits.begin());
    auto& it = out.items[k];
    const auto x = mds.values.row(i).transpose();
    it.weight += 1.0;
    it.s1 += x;
    it.s2.selfadjointView<Eigen::Lower>().rankUpdate(x);
  }
}

void accumulate_weighted(const Matrix& X, const Matrix& omega, Index lo, Index hi, PatternMoments& out) {
  const Index len = hi - lo;
  const auto Xb = X.middleRows(lo, len);
  for (std::size_t k = 0; k < out.items.size(); ++k) {
    const auto w = omega.col(static_cast<Index>(k)).segment(lo, len);
    auto& it = out.items[k];
    it.weight += w.sum();
    it.s1.noalias() += Xb.transpose() * w;
    it.s2.noalias() += Xb.transpose() * w.asDiagonal() * Xb;
  }
}

void symmetrize_lower(PatternMoments& pm) {
  for (auto& it : pm.items) it.s2 = it.s2.selfadjointView<Eigen::Lower>();
}

void finish(PatternMoments& pm) {
  pm.n = 0.0;
  for (const auto& it : pm.items) pm.n += it.weight;
}

template <class Fill>
PatternMoments blocked_reduce(int d, const std::vector<std::uint64_t>& bits, Index n, Fill fill) {
  const Index nblocks = (n + kRowBlock - 1) / kRowBlock;
  std::vector<PatternMoments> parts(static_cast<std::size_t>(nblocks));
#pragma omp parallel for schedule(static)
  for (Index b = 0; b < nblocks; ++b) {
    PatternMoments local = empty_moments(d, bits);
    fill(b * kRowBlock, std::min(n, (b + 1) * kRowBlock), local);
    parts[static_cast<std::size_t>(b)] = std::move(local);
  }
  PatternMoments acc = empty_moments(d, bits);
  for (const auto& p : parts) add_into(acc, p);
  return acc;
}

void check_weighted(const Matrix& X, const Matrix& omega, const std::vector<std::uint64_t>& bits) {
  if (omega.rows() != X.rows()) throw DimensionError("weights need one row per sample");
  if (omega.cols() != static_cast<Index>(bits.size())) throw DimensionError("one pattern label per weight column");
}

}  // namespace

PatternMoments pattern_moments(const MaskedDataset& mds) {
  const auto bits = distinct_patterns(mds.patterns);
  PatternMoments pm = blocked_reduce(mds.dim(), bits, mds.rows(), [&](Index lo, Index hi, PatternMoments& out) {
    accumulate_masked(mds, bits, lo, hi, out);
  });
  symmetrize_lower(pm);
  finish(pm);
  return pm;
}

PatternMoments pattern_moments_serial(const MaskedDataset& mds) {
  const auto bits = distinct_patterns(mds.patterns);
  PatternMoments pm = empty_moments(mds.dim(), bits);
  accumulate_masked(mds, bits, 0, mds.rows(), pm);
  symmetrize_lower(pm);
  finish(pm);
  return pm;
}

PatternMoments weighted_pattern_moments(const Matrix& X, const Matrix& omega, const std::vector<std::uint64_t>& bits) {
  check_weighted(X, omega, bits);
  PatternMoments pm = blocked_reduce(static_cast<int>(X.cols()), bits, X.rows(),
                                     [&](Index lo, Index hi, PatternMoments& out) { accumulate_weighted(X, omega, lo, hi, out); });
  finish(pm);
  return pm;
}

PatternMoments weighted_pattern_moments_serial(const Matrix& X, const Matrix& omega,
                                               const std::vector<std::uint64_t>& bits) {
  check_weighted(X, omega, bits);
  PatternMoments pm = empty_moments(static_cast<int>(X.cols()), bits);
  for (std::size_t k = 0; k < bits.size(); ++k) {
    auto& it = pm.items[k];
    for (Index i = 0; i < X.rows(); ++i) {
      const double w = omega(i, static_cast<Index>(k));
      const auto x = X.row(i).transpose();
      it.weight += w;
      it.s1 += w * x;
      it.s2 += w * x * x.transpose();
    }
  }
  finish(pm);
  return pm;
}

SufficientStats e_step_stats(const PatternMoments& pm, const CovMatrix& sigma) {
  const int d = pm.d;
  if (sigma.dim() != d) throw DimensionError("covariance does not match data dimension");
  SufficientStats st;
  st.t_hat = Matrix::Zero(d, d);
  st.n = pm.n;
  for (const auto& it : pm.items) {
    const ObservationPattern r{it.bits, d};
    const std::vector<int> o = r.observed_indices(), m = r.missing_indices();
    if (m.empty()) {
      st.t_hat += it.s2;
      continue;
    }
    if (o.empty()) {
      st.t_hat += it.weight * sigma.matrix();
      continue;
    }
    const Matrix soo = submatrix(sigma.matrix(), o, o);
    const Matrix smo = submatrix(sigma.matrix(), m, o);
    Eigen::LLT<Matrix> llt(soo);
    if (llt.info() != Eigen::Success) throw FactorizationError("observed covariance block is singular");
    const Matrix A = llt.solve(smo.transpose()).transpose();  // Σ_mo Σ_oo⁻¹
    const Matrix C = submatrix(sigma.matrix(), m, m) - A * smo.transpose();
    const Matrix S = submatrix(it.s2, o, o);
    const Matrix AS = A * S;
    const Matrix mm = AS * A.transpose() + it.weight * C;
    for (std::size_t a = 0; a < o.size(); ++a)
      for (std::size_t b = 0; b < o.size(); ++b) st.t_hat(o[a], o[b]) += S(static_cast<Index>(a), static_cast<Index>(b));
    for (std::size_t a = 0; a < m.size(); ++a) {
      for (std::size_t b = 0; b < o.size(); ++b) {
        const double v = AS(static_cast<Index>(a), static_cast<Index>(b));
        st.t_hat(m[a], o[b]) += v;
        st.t_hat(o[b], m[a]) += v;
      }
      for (std::size_t b = 0; b < m.size(); ++b) st.t_hat(m[a], m[b]) += mm(static_cast<Index>(a), static_cast<Index>(b));
    }
  }
  st.t_hat = 0.5 * (st.t_hat + st.t_hat.transpose());
  return st;
}

SufficientStats e_step_stats(const MaskedDataset& mds, const CovMatrix& sigma) {
  return e_step_stats(pattern_moments(mds), sigma);
}

double observed_loglik(const PatternMoments& pm, const CovMatrix& sigma) {
  if (sigma.dim() != pm.d) throw DimensionError("covariance does not match data dimension");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  for (const auto& it : pm.items) {
    const std::vector<int> o = ObservationPattern{it.bits, pm.d}.observed_indices();
    if (o.empty() || it.weight == 0.0) continue;
    const CovMatrix soo = sigma.marginal(o);
    const double quad = soo.solve(submatrix(it.s2, o, o)).trace();
    total += -0.5 * (it.weight * (static_cast<double>(o.size()) * log2pi + soo.logdet()) + quad);
  }
  return total;
}

double observed_loglik(const MaskedDataset& mds, const CovMatrix& sigma) {
  return observed_loglik(pattern_moments(mds), sigma);
}

}  // namespace advmiss
