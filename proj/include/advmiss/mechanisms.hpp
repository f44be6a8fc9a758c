#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "advmiss/adversary.hpp"
#include "advmiss/scm.hpp"

namespace advmiss {

/// Bit j set <=> variable j observed (r_j = 1). d <= 64.
struct ObservationPattern {
  std::uint64_t bits = 0;
  int d = 0;

  static ObservationPattern all_observed(int d);
  bool observed(int j) const { return (bits >> j) & 1U; }
  int missing_count() const;
  std::vector<int> observed_indices() const;
  std::vector<int> missing_indices() const;
  bool operator==(const ObservationPattern&) const = default;
};

/// Full pattern for V-restricted code k: V̄ observed, bit b of k observes V[b].
ObservationPattern pattern_from_code(std::uint64_t k, std::span<const int> v, int d);
std::uint64_t code_from_pattern(const ObservationPattern& r, std::span<const int> v);

/// P(R | X) over a finite, fixed support.
class MissingnessMechanism {
 public:
  virtual ~MissingnessMechanism() = default;

  virtual std::string kind() const = 0;
  virtual int dim() const = 0;
  virtual const std::vector<ObservationPattern>& support() const = 0;
  /// Probability of each support entry given a full sample x.
  virtual Vector pattern_probs(const Vector& x) const = 0;

  /// Marginal P(R) under the true law, when a closed form is known.
  virtual Vector closed_form_marginals() const;
  /// Expected fraction of masked entries, when a closed form is known.
  virtual double closed_form_rate() const;

  /// Number of evaluations whose density ratio exceeded Λ and was clipped.
  std::uint64_t clip_count() const { return clips_.load(std::memory_order_relaxed); }
  void reset_clip_count() const { clips_.store(0, std::memory_order_relaxed); }

 protected:
  void note_clip() const { clips_.fetch_add(1, std::memory_order_relaxed); }

 private:
  mutable std::atomic<std::uint64_t> clips_{0};
};

using MechanismPtr = std::shared_ptr<const MissingnessMechanism>;

enum class LambdaMode { Auto, Analytic, Empirical };

/// Λ for a ratio: analytic when bounded (or requested), otherwise the
/// empirical maximum over `calibration` restricted to columns v.
double choose_lambda(const DensityRatio& r, LambdaMode mode, const Matrix* calibration, std::span<const int> v);

/// Masks only inside V. Nonzero V-codes each get Λ(x_V)/((2^m − 1)Λ); code 0
/// (all of V masked) gets the rest. Support index = V-restricted code.
class LocalizedRs : public MissingnessMechanism {
 public:
  LocalizedRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, std::vector<int> v, double lambda);

  std::string kind() const override { return "localized_rs"; }
  int dim() const override { return d_; }
  const std::vector<ObservationPattern>& support() const override { return support_; }
  Vector pattern_probs(const Vector& x) const override;
  Vector closed_form_marginals() const override;
  double closed_form_rate() const override;

  const std::vector<int>& v() const { return v_; }
  double lambda() const { return lambda_; }
  const DensityRatio& ratio() const { return ratio_; }
  /// min(1, Λ(x_V)/Λ), counting clips.
  double acceptance(const Vector& x) const;

 protected:
  LocalizedRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, std::vector<int> v, double lambda, bool two_point);

  int d_;
  std::vector<int> v_;
  DensityRatio ratio_;
  double lambda_;
  double log_lambda_;
  std::vector<ObservationPattern> support_;
};

/// All of V observed with probability Λ(x_V)/Λ, otherwise all of V masked.
/// Support: {V masked, V observed}.
class AllOrNoneRs : public LocalizedRs {
 public:
  AllOrNoneRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, std::vector<int> v, double lambda);

  std::string kind() const override { return "all_or_none_rs"; }
  Vector pattern_probs(const Vector& x) const override;
  Vector closed_form_marginals() const override;
  double closed_form_rate() const override;
};

/// Sampler over all 2^d patterns. Nonzero r gets π_r Λ_r(x_o)/Λ*_r; r = 0
/// takes the residual. Support index = full bitmask value.
class GeneralizedRs : public MissingnessMechanism {
 public:
  /// pi and lambda_star are indexed by bitmask; entry 0 is ignored.
  GeneralizedRs(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha, Vector pi, Vector lambda_star);

  /// Uniform π (unless given) and Λ*_r chosen per pattern by `mode`.
  static std::shared_ptr<GeneralizedRs> calibrated(const CovMatrix& sigma_p, const CovMatrix& sigma_alpha,
                                                   LambdaMode mode, const Matrix* calibration,
                                                   const Vector* pi = nullptr);

  std::string kind() const override { return "generalized_rs"; }
  int dim() const override { return d_; }
  const std::vector<ObservationPattern>& support() const override { return support_; }
  Vector pattern_probs(const Vector& x) const override;
  Vector closed_form_marginals() const override;
  double closed_form_rate() const override;

  const Vector& pi() const { return pi_; }
  const Vector& lambda_star() const { return lambda_star_; }
  std::uint64_t clamp_count() const { return clamps_.load(std::memory_order_relaxed); }

 private:
  int d_;
  Vector pi_, lambda_star_;
  std::vector<DensityRatio> ratios_;
  std::vector<std::vector<int>> observed_;
  std::vector<ObservationPattern> support_;
  mutable std::atomic<std::uint64_t> clamps_{0};
};

/// Value-independent pattern distribution.
class Mcar : public MissingnessMechanism {
 public:
  Mcar(int d, std::vector<ObservationPattern> support, Vector probs);
  static std::shared_ptr<Mcar> always_observed(int d);

  std::string kind() const override { return "mcar"; }
  int dim() const override { return d_; }
  const std::vector<ObservationPattern>& support() const override { return support_; }
  Vector pattern_probs(const Vector&) const override { return probs_; }
  Vector closed_form_marginals() const override { return probs_; }
  double closed_form_rate() const override;

 private:
  int d_;
  std::vector<ObservationPattern> support_;
  Vector probs_;
};

/// MCAR with P(r) = average of mech.pattern_probs over the given rows.
std::shared_ptr<Mcar> mcar_from_mnar(const MissingnessMechanism& mech, const Matrix& rows);
/// Same, averaging over n_mc fresh draws from scm_p.
std::shared_ptr<Mcar> mcar_from_mnar(const MissingnessMechanism& mech, const GaussianScm& scm_p, Index n_mc,
                                     std::uint64_t seed);
/// Closed-form marginals (requires the mechanism to provide them).
std::shared_ptr<Mcar> mcar_from_closed_form(const MissingnessMechanism& mech);

enum class RateMode { ClosedForm, MonteCarlo };

struct RateEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// ClosedForm: mechanism's own formula (CapabilityError if absent).
/// MonteCarlo: mean over `rows` of the expected masked fraction given x.
RateEstimate expected_missingness_rate(const MissingnessMechanism& mech, RateMode mode, const Matrix* rows = nullptr);

/// (1 − 1/(2Λ))·m/d.
double localized_rate_bound(double lambda, int m, int d);

}  // namespace advmiss
