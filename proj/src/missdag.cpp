#include "advmiss/missdag.hpp"

#include <limits>

#include <cmath>
#include <numbers>
#include <random>

#include <spdlog/spdlog.h>

#include "advmiss/errors.hpp"

namespace advmiss {

InitScheme InitScheme::parse(const std::string& name, std::uint64_t seed) {
  if (name == "emp_diag") return {Tag::EmpDiag, seed};
  if (name == "identity") return {Tag::Identity, seed};
  if (name == "true") return {Tag::True, seed};
  if (name == "random") return {Tag::RandomSpd, seed};
  if (name == "iw") return {Tag::InvWishart, seed};
  throw ConfigError("unknown init scheme '" + name + "' (expected emp_diag, identity, true, random, iw)");
}

std::string InitScheme::name() const {
  switch (tag) {
    case Tag::EmpDiag: return "emp_diag";
    case Tag::Identity: return "identity";
    case Tag::True: return "true";
    case Tag::RandomSpd: return "random";
    case Tag::InvWishart: return "iw";
  }
  return "?";
}

Matrix random_spd(int d, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix A(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = u(gen);
  const Eigen::JacobiSVD<Matrix> svd(A.transpose() * A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vector diag(d);
  for (int j = 0; j < d; ++j) diag(j) = 1.0 + u(gen);
  const Matrix X = svd.matrixU() * diag.asDiagonal() * svd.matrixV().transpose();
  return 0.5 * (X + X.transpose());
}

Matrix rescale_to_diagonal(const Matrix& m, const Vector& diag) {
  const Vector s = (diag.array() / m.diagonal().array()).sqrt();
  Matrix out = s.asDiagonal() * m * s.asDiagonal();
  out.diagonal() = diag;
  return out;
}

Vector observed_variances(const MaskedDataset& mds) {
  Vector v(mds.dim());
  for (int j = 0; j < mds.dim(); ++j) {
    double s = 0.0, s2 = 0.0;
    Index c = 0;
    for (Index i = 0; i < mds.rows(); ++i)
      if (mds.observed(i, j)) {
        s += mds.values(i, j);
        ++c;
      }
    if (c < 2)
      throw PreconditionError("column '" + mds.columns[static_cast<std::size_t>(j)] +
                              "' has fewer than 2 observed values; cannot estimate its variance");
    const double mean = s / static_cast<double>(c);
    for (Index i = 0; i < mds.rows(); ++i)
      if (mds.observed(i, j)) s2 += (mds.values(i, j) - mean) * (mds.values(i, j) - mean);
    v(j) = s2 / static_cast<double>(c - 1);
  }
  return v;
}

namespace {

// Bartlett decomposition: W ~ Wishart(df, scale), returns W⁻¹.
Matrix inverse_wishart(const Matrix& scale_inv, int df, std::uint64_t seed) {
  const Index d = scale_inv.rows();
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> z;
  Matrix A = Matrix::Zero(d, d);
  for (Index i = 0; i < d; ++i) {
    std::chi_squared_distribution<double> chi(static_cast<double>(df - i));
    A(i, i) = std::sqrt(chi(gen));
    for (Index j = 0; j < i; ++j) A(i, j) = z(gen);
  }
  const Matrix L = scale_inv.llt().matrixL();
  const Matrix LA = L * A;
  const Matrix W = LA * LA.transpose();
  Matrix out = W.llt().solve(Matrix::Identity(d, d));
  return 0.5 * (out + out.transpose());
}

}  // namespace

CovMatrix init_covariance(const InitScheme& scheme, const MaskedDataset& mds, const std::optional<CovMatrix>& sigma_true) {
  const int d = mds.dim();
  switch (scheme.tag) {
    case InitScheme::Tag::Identity: return CovMatrix::identity(d);
    case InitScheme::Tag::True:
      if (!sigma_true) throw PreconditionError("the True init needs the true covariance");
      if (sigma_true->dim() != d) throw DimensionError("true covariance does not match data dimension");
      return *sigma_true;
    case InitScheme::Tag::EmpDiag: return CovMatrix(Matrix(observed_variances(mds).asDiagonal()));
    case InitScheme::Tag::RandomSpd:
      return CovMatrix(rescale_to_diagonal(random_spd(d, scheme.seed), observed_variances(mds)));
    case InitScheme::Tag::InvWishart: {
      const Matrix scale = random_spd(d, scheme.seed);
      const Matrix draw = inverse_wishart(scale.llt().solve(Matrix::Identity(d, d)), d + 2, scheme.seed ^ 0x5bd1e995ULL);
      return CovMatrix(rescale_to_diagonal(draw, observed_variances(mds)));
    }
  }
  throw ConfigError("unhandled init scheme");
}

Vector variance_update(const SufficientStats& st, const Matrix& B, VarianceMode mode) {
  const Index d = st.t_hat.rows();
  if (B.rows() != d || B.cols() != d) throw DimensionError("B does not match the sufficient statistics");
  if (!(st.n > 0.0)) throw PreconditionError("sufficient statistics have no samples");
  const Matrix R = Matrix::Identity(d, d) - B;
  const Vector q = (R.transpose() * st.t_hat * R).diagonal() / st.n;
  Vector out = mode == VarianceMode::Equal ? Vector::Constant(d, q.sum() / static_cast<double>(d)) : q;
  for (Index j = 0; j < d; ++j)
    if (!(out(j) >= 1e-8)) {
      spdlog::warn("variance estimate {} for node {} floored at 1e-8", out(j), j);
      out(j) = 1e-8;
    }
  return out;
}

Dag fitted_graph(const Matrix& b_hat, double w_threshold, const std::vector<std::string>& labels) {
  return Dag::from_support(b_hat, w_threshold, labels);
}

namespace {

FitResult assemble(const Matrix& B, const Vector& noise, VarianceMode mode, const std::vector<std::string>& labels,
                   double w_threshold) {
  FitResult r;
  r.b_hat = B;
  r.noise = noise;
  r.var_mode = mode;
  r.sigma_hat = implied_covariance(B, noise);
  r.graph = fitted_graph(B, w_threshold, labels);
  return r;
}

}  // namespace

double expected_complete_loglik(const SufficientStats& st, const CovMatrix& sigma) {
  const double d = sigma.dim();
  return -0.5 * (st.n * (d * std::log(2.0 * std::numbers::pi) + sigma.logdet()) + sigma.solve(st.t_hat).trace());
}

FitResult missdag(const PatternMoments& pm, const CovMatrix& sigma0, const std::vector<std::string>& labels,
                  const MissDagOptions& opts) {
  if (sigma0.dim() != pm.d) throw DimensionError("initial covariance does not match data dimension");
  CovMatrix sigma = sigma0;
  // The relative-change rule compares consecutive M-step outputs; the init is
  // not in the trace.
  double j_prev = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  Matrix B;
  Vector noise;
  bool rejected = false;
  int it = 0;
  auto solve = [&](const SufficientStats& st, const Matrix* start) {
    try {
      return notears_gram(st, opts.l1, 0.0, opts.notears, start);
    } catch (const NonConvergence& e) {
      throw NonConvergence("MissDAG iteration " + std::to_string(it + 1) + ": " + e.what(), e.best(), e.h());
    }
  };
  while (it < opts.max_iter) {
    const SufficientStats st = e_step_stats(pm, sigma);
    Matrix Bn = solve(st, (opts.warm_start && it > 0) ? &B : nullptr);
    const Vector nn = variance_update(st, Bn, opts.var_mode);
    const CovMatrix sn = implied_covariance(Bn, nn);
    const double j = observed_loglik(pm, sn);
    if (opts.gem_safeguard && it > 0 && j < j_prev) {
      rejected = true;
      break;
    }
    ++it;
    B = Bn;
    noise = nn;
    sigma = sn;
    trace.push_back(j);
    const bool keep_going = j - j_prev >= opts.eps * std::abs(j_prev);
    j_prev = j;
    if (!keep_going) break;
  }
  FitResult r = assemble(B, noise, opts.var_mode, labels, opts.w_threshold);
  r.loglik_trace = std::move(trace);
  r.iterations = it;
  r.rejected_step = rejected;
  return r;
}

FitResult missdag(const MaskedDataset& mds, const InitScheme& init, const MissDagOptions& opts,
                  const std::optional<CovMatrix>& sigma_true) {
  return missdag(pattern_moments(mds), init_covariance(init, mds, sigma_true), mds.columns, opts);
}

FitResult notears_fit(const Dataset& ds, const MissDagOptions& opts) {
  // Gram matrix through the same blocked kernel the E-step uses, so complete
  // data reach the solver bit-for-bit identically on either route.
  MaskedDataset full;
  full.columns = ds.columns;
  full.values = ds.centered ? ds.values : center(ds).values;
  full.patterns.assign(static_cast<std::size_t>(ds.rows()), ObservationPattern::all_observed(ds.dim()).bits);
  const PatternMoments pm = pattern_moments(full);
  if (pm.items.empty()) throw PreconditionError("dataset has no rows");
  SufficientStats st{pm.items.front().s2, pm.n};
  const Matrix B = notears_gram(st, opts.l1, 0.0, opts.notears);
  FitResult r = assemble(B, variance_update(st, B, opts.var_mode), opts.var_mode, ds.columns, opts.w_threshold);
  r.iterations = 1;
  return r;
}

FitResult mean_impute_notears(const MaskedDataset& mds, const MissDagOptions& opts) {
  return notears_fit(mean_impute(mds), opts);
}

}  // namespace advmiss
