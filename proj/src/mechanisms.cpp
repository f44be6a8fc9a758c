#include "advmiss/mechanisms.hpp"

#include <bit>
#include <cmath>

#include <spdlog/spdlog.h>

#include "advmiss/errors.hpp"

namespace advmiss {

namespace {

constexpr int kMaxV = 20;
constexpr int kMaxGeneralizedD = 12;

Vector gather(const Vector& x, std::span<const int> idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out(static_cast<Index>(k)) = x(idx[k]);
  return out;
}

void check_v(std::span<const int> v, int d, int cap) {
  if (v.empty()) throw PreconditionError("masked set V must be nonempty");
  if (static_cast<int>(v.size()) > cap)
    throw PreconditionError("|V| = " + std::to_string(v.size()) + " exceeds the support-size cap " + std::to_string(cap));
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (v[k] < 0 || v[k] >= d) throw PreconditionError("V index out of range");
    if (k > 0 && v[k] <= v[k - 1]) throw PreconditionError("V must be strictly increasing");
  }
}

}  // namespace

ObservationPattern ObservationPattern::all_observed(int d) {
  if (d < 0 || d > 64) throw DimensionError("pattern dimension must be in [0, 64]");
  return {d == 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << d) - 1), d};
}

int ObservationPattern::missing_count() const { return d - std::popcount(bits); }

std::vector<int> ObservationPattern::observed_indices() const {
  std::vector<int> out;
  for (int j = 0; j < d; ++j)
    if (observed(j)) out.push_back(j);
  return out;
}

std::vector<int> ObservationPattern::missing_indices() const {
  std::vector<int> out;
  for (int j = 0; j < d; ++j)
    if (!observed(j)) out.push_back(j);
  return out;
}

ObservationPattern pattern_from_code(std::uint64_t k, std::span<const int> v, int d) {
  ObservationPattern r = ObservationPattern::all_observed(d);
  for (std::size_t b = 0; b < v.size(); ++b)
    if (!((k >> b) & 1U)) r.bits &= ~(std::uint64_t{1} << v[b]);
  return r;
}

std::uint64_t code_from_pattern(const ObservationPattern& r, std::span<const int> v) {
  std::uint64_t k = 0;
  for (std::size_t b = 0; b < v.size(); ++b)
    if (r.observed(v[b])) k |= std::uint64_t{1} << b;
  return k;
}

Vector MissingnessMechanism::closed_form_marginals() const {
  throw CapabilityError("no closed-form pattern marginals for mechanism kind " + kind());
}

double MissingnessMechanism::closed_form_rate() const {
  throw CapabilityError("no closed-form missingness rate for mechanism kind " + kind());
}

double choose_lambda(const DensityRatio& r, LambdaMode mode, const Matrix* calibration, std::span<const int> v) {
  if (mode != LambdaMode::Empirical) {
    const LambdaBound b = lambda_max_analytic(r);
    if (b.bounded) return b.value;
    if (mode == LambdaMode::Analytic)
      throw ConfigError("analytic Lambda requested but the density ratio is unbounded");
  }
  if (calibration == nullptr) throw PreconditionError("empirical Lambda requires calibration samples");
  return lambda_max_empirical(r, *calibration, v);
}

// ---- localized ----

LocalizedRs::LocalizedRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, std::vector<int> v, double lambda)
    : LocalizedRs(sigma_p, sigma_alpha, std::move(v), lambda, false) {}

LocalizedRs::LocalizedRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, std::vector<int> v, double lambda,
                         bool two_point)
    : d_(sigma_p.dim()), v_(std::move(v)), lambda_(lambda) {
  if (sigma_alpha.dim() != d_) throw DimensionError("true and adversarial covariances differ in dimension");
  check_v(v_, d_, kMaxV);
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw PreconditionError("Lambda must be positive and finite");
  log_lambda_ = std::log(lambda);
  ratio_ = DensityRatio(sigma_p.marginal(v_), sigma_alpha.marginal(v_));
  const std::uint64_t m = v_.size();
  if (two_point) {
    support_ = {pattern_from_code(0, v_, d_), pattern_from_code((std::uint64_t{1} << m) - 1, v_, d_)};
  } else {
    support_.reserve(std::size_t{1} << m);
    for (std::uint64_t k = 0; k < (std::uint64_t{1} << m); ++k) support_.push_back(pattern_from_code(k, v_, d_));
  }
}

double LocalizedRs::acceptance(const Vector& x) const {
  if (x.size() != d_) throw DimensionError("sample dimension does not match mechanism");
  const double lr = ratio_.log_ratio(gather(x, v_)) - log_lambda_;
  if (lr > 0.0) {
    note_clip();
    return 1.0;
  }
  return std::exp(lr);
}

Vector LocalizedRs::pattern_probs(const Vector& x) const {
  const double a = acceptance(x);
  const double n_nonzero = static_cast<double>(support_.size() - 1);
  Vector p = Vector::Constant(static_cast<Index>(support_.size()), a / n_nonzero);
  p(0) = 1.0 - a;
  return p;
}

Vector LocalizedRs::closed_form_marginals() const {
  const double n_nonzero = static_cast<double>(support_.size() - 1);
  Vector p = Vector::Constant(static_cast<Index>(support_.size()), 1.0 / (n_nonzero * lambda_));
  p(0) = 1.0 - 1.0 / lambda_;
  return p;
}

double LocalizedRs::closed_form_rate() const {
  const int m = static_cast<int>(v_.size());
  const double n_nonzero = static_cast<double>(support_.size() - 1);
  // masked-count sum over nonzero codes: m·2^{m-1} in total minus m for code 0
  const double ell_sum = m * std::ldexp(1.0, m - 1) - m;
  return (1.0 - 1.0 / lambda_) * m / d_ + ell_sum / (lambda_ * d_ * n_nonzero);
}

AllOrNoneRs::AllOrNoneRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, std::vector<int> v, double lambda)
    : LocalizedRs(sigma_p, sigma_alpha, std::move(v), lambda, true) {}

Vector AllOrNoneRs::pattern_probs(const Vector& x) const {
  const double a = acceptance(x);
  return Vector{{1.0 - a, a}};
}

Vector AllOrNoneRs::closed_form_marginals() const { return Vector{{1.0 - 1.0 / lambda_, 1.0 / lambda_}}; }

double AllOrNoneRs::closed_form_rate() const {
  return (1.0 - 1.0 / lambda_) * static_cast<double>(v_.size()) / d_;
}

// ---- generalized ----

GeneralizedRs::GeneralizedRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, Vector pi, Vector lambda_star)
    : d_(sigma_p.dim()), pi_(std::move(pi)), lambda_star_(std::move(lambda_star)) {
  if (sigma_alpha.dim() != d_) throw DimensionError("true and adversarial covariances differ in dimension");
  if (d_ < 1 || d_ > kMaxGeneralizedD)
    throw PreconditionError("generalized sampler supports 1 <= d <= " + std::to_string(kMaxGeneralizedD));
  const Index n = Index{1} << d_;
  if (pi_.size() != n || lambda_star_.size() != n) throw DimensionError("pi and Lambda* must have 2^d entries");
  ratios_.resize(static_cast<std::size_t>(n));
  observed_.resize(static_cast<std::size_t>(n));
  support_.reserve(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) {
    const ObservationPattern r{static_cast<std::uint64_t>(k), d_};
    support_.push_back(r);
    if (k == 0) continue;
    if (pi_(k) < 0.0 || pi_(k) > 1.0) throw PreconditionError("pi_r must lie in [0, 1]");
    if (!(lambda_star_(k) > 0.0) || !std::isfinite(lambda_star_(k)))
      throw PreconditionError("Lambda*_r must be positive and finite");
    observed_[static_cast<std::size_t>(k)] = r.observed_indices();
    const auto& o = observed_[static_cast<std::size_t>(k)];
    ratios_[static_cast<std::size_t>(k)] = DensityRatio(sigma_p.marginal(o), sigma_alpha.marginal(o));
  }
}

std::shared_ptr<GeneralizedRs> GeneralizedRs::calibrated(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha,
                                                         LambdaMode mode, const Matrix* calibration,
                                                         const Vector* pi) {
  const int d = sigma_p.dim();
  if (d < 1 || d > kMaxGeneralizedD)
    throw PreconditionError("generalized sampler supports 1 <= d <= " + std::to_string(kMaxGeneralizedD));
  const Index n = Index{1} << d;
  Vector weights = pi ? *pi : Vector::Constant(n, 1.0 / static_cast<double>(n - 1));
  Vector lstar = Vector::Ones(n);
  for (Index k = 1; k < n; ++k) {
    const std::vector<int> o = ObservationPattern{static_cast<std::uint64_t>(k), d}.observed_indices();
    const DensityRatio r(sigma_p.marginal(o), sigma_alpha.marginal(o));
    lstar(k) = choose_lambda(r, mode, calibration, o);
  }
  return std::make_shared<GeneralizedRs>(sigma_p, sigma_alpha, std::move(weights), std::move(lstar));
}

Vector GeneralizedRs::pattern_probs(const Vector& x) const {
  if (x.size() != d_) throw DimensionError("sample dimension does not match mechanism");
  const Index n = pi_.size();
  Vector p(n);
  double total = 0.0;
  for (Index k = 1; k < n; ++k) {
    const auto& o = observed_[static_cast<std::size_t>(k)];
    double lr = ratios_[static_cast<std::size_t>(k)].log_ratio(gather(x, o)) - std::log(lambda_star_(k));
    if (lr > 0.0) {
      note_clip();
      lr = 0.0;
    }
    p(k) = pi_(k) * std::exp(lr);
    total += p(k);
  }
  if (total > 1.0) {
    if (clamps_.fetch_add(1, std::memory_order_relaxed) == 0)
      spdlog::warn("generalized sampler: pattern weights exceed 1 at some x; renormalizing (further cases counted)");
    p /= total;
    p(0) = 0.0;
  } else {
    p(0) = 1.0 - total;
  }
  return p;
}

Vector GeneralizedRs::closed_form_marginals() const {
  const Index n = pi_.size();
  Vector p(n);
  double total = 0.0;
  for (Index k = 1; k < n; ++k) {
    p(k) = pi_(k) / lambda_star_(k);
    total += p(k);
  }
  p(0) = 1.0 - total;
  return p;
}

double GeneralizedRs::closed_form_rate() const {
  double s = 0.0;
  for (Index k = 1; k < pi_.size(); ++k) {
    const double ell = support_[static_cast<std::size_t>(k)].missing_count();
    s += pi_(k) / lambda_star_(k) * (1.0 - ell / d_);
  }
  return 1.0 - s;
}

// ---- MCAR ----

Mcar::Mcar(int d, std::vector<ObservationPattern> support, Vector probs)
    : d_(d), support_(std::move(support)), probs_(std::move(probs)) {
  if (static_cast<Index>(support_.size()) != probs_.size()) throw DimensionError("support and probabilities differ in length");
  if (support_.empty()) throw PreconditionError("MCAR support must be nonempty");
  for (const auto& r : support_)
    if (r.d != d_) throw DimensionError("pattern dimension does not match mechanism");
  if ((probs_.array() < 0.0).any()) throw PreconditionError("MCAR probabilities must be nonnegative");
  if (std::abs(probs_.sum() - 1.0) > 1e-9) throw PreconditionError("MCAR probabilities must sum to 1");
}

std::shared_ptr<Mcar> Mcar::always_observed(int d) {
  return std::make_shared<Mcar>(d, std::vector<ObservationPattern>{ObservationPattern::all_observed(d)}, Vector::Ones(1));
}

double Mcar::closed_form_rate() const {
  double s = 0.0;
  for (std::size_t k = 0; k < support_.size(); ++k) s += probs_(static_cast<Index>(k)) * support_[k].missing_count();
  return s / d_;
}

std::shared_ptr<Mcar> mcar_from_mnar(const MissingnessMechanism& mech, const Matrix& rows) {
  if (rows.rows() == 0) throw PreconditionError("need at least one row to average over");
  if (rows.cols() != mech.dim()) throw DimensionError("rows do not match mechanism dimension");
  Vector acc = Vector::Zero(static_cast<Index>(mech.support().size()));
  for (Index i = 0; i < rows.rows(); ++i) acc += mech.pattern_probs(rows.row(i).transpose());
  acc /= static_cast<double>(rows.rows());
  acc /= acc.sum();  // remove rounding drift
  return std::make_shared<Mcar>(mech.dim(), mech.support(), acc);
}

std::shared_ptr<Mcar> mcar_from_mnar(const MissingnessMechanism& mech, const GaussianScm& scm_p, Index n_mc,
                                     std::uint64_t seed) {
  if (n_mc < 1) throw PreconditionError("n_mc must be >= 1");
  return mcar_from_mnar(mech, sample(scm_p, n_mc, seed));
}

std::shared_ptr<Mcar> mcar_from_closed_form(const MissingnessMechanism& mech) {
  Vector p = mech.closed_form_marginals();
  p = p.cwiseMax(0.0);
  p /= p.sum();
  return std::make_shared<Mcar>(mech.dim(), mech.support(), p);
}

RateEstimate expected_missingness_rate(const MissingnessMechanism& mech, RateMode mode, const Matrix* rows) {
  if (mode == RateMode::ClosedForm) return {mech.closed_form_rate(), 0.0};
  if (rows == nullptr || rows->rows() < 2) throw PreconditionError("Monte-Carlo rate needs at least two sample rows");
  const auto& sup = mech.support();
  Vector ell(static_cast<Index>(sup.size()));
  for (std::size_t k = 0; k < sup.size(); ++k)
    ell(static_cast<Index>(k)) = static_cast<double>(sup[k].missing_count()) / mech.dim();
  const Index n = rows->rows();
  Vector vals(n);
  for (Index i = 0; i < n; ++i) vals(i) = mech.pattern_probs(rows->row(i).transpose()).dot(ell);
  const double mean = vals.mean();
  const double var = (vals.array() - mean).square().sum() / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

double localized_rate_bound(double lambda, int m, int d) {
  return (1.0 - 1.0 / (2.0 * lambda)) * static_cast<double>(m) / d;
}

}  // namespace advmiss
