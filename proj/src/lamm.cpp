#include "advmiss/lamm.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include <spdlog/spdlog.h>

#include "advmiss/errors.hpp"
#include "advmiss/missdag.hpp"
#include "advmiss/rng.hpp"

namespace advmiss {

namespace {

Vector masked_fractions(const PatternCodec& codec) {
  Vector ell(codec.size());
  for (int k = 0; k < codec.size(); ++k)
    ell(k) = static_cast<double>(codec.masked(static_cast<std::uint64_t>(k))) / codec.dim();
  return ell;
}

// dL/dz for softmax outputs p given dL/dp
Matrix softmax_backward(const Matrix& p, const Matrix& pbar) {
  const Vector inner = p.cwiseProduct(pbar).rowwise().sum();
  return p.cwiseProduct(pbar - inner.replicate(1, pbar.cols()));
}

void check_finite(const std::vector<DenseLayer>& grad, const MlpPolicy& policy) {
  for (std::size_t l = 0; l < grad.size(); ++l) {
    if (grad[l].W.allFinite() && grad[l].b.allFinite()) continue;
    std::ostringstream os;
    os << "non-finite gradient in layer " << l << " (" << grad[l].W.rows() << "x" << grad[l].W.cols() << ")";
    const auto& L = policy.layers()[l];
    spdlog::error("{}; weight range [{}, {}], bias range [{}, {}], non-finite gradient entries {}", os.str(),
                  L.W.minCoeff(), L.W.maxCoeff(), L.b.minCoeff(), L.b.maxCoeff(),
                  (grad[l].W.array().isFinite() == false).count() + (grad[l].b.array().isFinite() == false).count());
    throw GradientError(os.str());
  }
}

}  // namespace

double expected_masked_fraction(const Matrix& probs, const PatternCodec& codec) {
  if (probs.cols() != codec.size()) throw DimensionError("probability columns must match the codec size");
  if (probs.rows() == 0) return 0.0;
  return (probs * masked_fractions(codec)).mean();
}

double lamm_loss(const CovMatrix& sigma_tilde, const CovMatrix& sigma_alpha, const MlpPolicy& policy, double lambda,
                 const Matrix& X) {
  if (lambda < 0.0) throw PreconditionError("rate weight must be nonnegative");
  const double kl = gaussian_kl(sigma_alpha, sigma_tilde);
  if (lambda == 0.0) return kl;
  return kl + lambda * expected_masked_fraction(policy.probs(X), policy.codec());
}

std::vector<CovMatrix> lamm_inits(const Matrix& X, int K, std::uint64_t seed) {
  if (K < 1) throw PreconditionError("need at least one initialization");
  if (X.rows() < 2) throw PreconditionError("need at least 2 rows for sample variances");
  const int d = static_cast<int>(X.cols());
  const Matrix Xc = X.rowwise() - X.colwise().mean();
  const Vector var = Xc.colwise().squaredNorm().transpose() / static_cast<double>(X.rows() - 1);
  std::vector<CovMatrix> out;
  for (int k = 0; k < K; ++k)
    out.emplace_back(rescale_to_diagonal(random_spd(d, derive_seed(seed, {static_cast<std::uint64_t>(k)})), var));
  return out;
}

LammEvaluation lamm_evaluate(const MlpPolicy& policy, const Matrix& X, const CovMatrix& sigma_alpha,
                             const std::vector<CovMatrix>& inits, double lambda, const WemOptions& wem_opts,
                             bool with_gradient) {
  if (lambda < 0.0) throw PreconditionError("rate weight must be nonnegative");
  if (inits.empty()) throw PreconditionError("need at least one initialization");
  const int d = policy.codec().dim();
  if (sigma_alpha.dim() != d) throw DimensionError("target covariance does not match data dimension");
  MlpPolicy::Cache cache;
  const Matrix P = policy.probs(X, &cache);
  const Matrix omega = missingness_weights(P, policy.codec());
  const PatternMoments pm = wem_moments(X, omega, policy.codec());
  const Vector ell = masked_fractions(policy.codec());

  const int K = static_cast<int>(inits.size());
  LammEvaluation ev;
  ev.rate = X.rows() ? (P * ell).mean() : 0.0;
  ev.init_losses.assign(static_cast<std::size_t>(K), 0.0);
  ev.wem_iterations.assign(static_cast<std::size_t>(K), 0);
  ev.sigma_tilde.resize(static_cast<std::size_t>(K));
  std::vector<WemWeightAdjoint> adj(static_cast<std::size_t>(K));
  const Vector mu0 = Vector::Zero(d);

#pragma omp parallel for schedule(static)
  for (int k = 0; k < K; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const WemState st = wem(pm, mu0, inits[kk], wem_opts);
    ev.sigma_tilde[kk] = st.sigma;
    ev.wem_iterations[kk] = st.iterations;
    ev.init_losses[kk] = gaussian_kl(sigma_alpha, st.sigma) + lambda * ev.rate;
    if (with_gradient) {
      // d KL(Σα‖Σ̃)/dΣ̃ = ½(Σ̃⁻¹ − Σ̃⁻¹ Σα Σ̃⁻¹)
      const Matrix inv = st.sigma.inverse();
      const Matrix sbar = 0.5 * (inv - inv * sigma_alpha.matrix() * inv);
      adj[kk] = wem_backward(st, pm, sbar, Vector::Zero(d));
    }
  }
  for (double l : ev.init_losses) ev.loss += l;
  ev.loss /= K;
  if (!with_gradient) return ev;

  WemWeightAdjoint total;
  for (const auto& a : adj) total += a;
  Matrix omega_bar = total.weight_gradient(X) / static_cast<double>(K);
  Matrix pbar = weights_to_probs_gradient(P, omega_bar, policy.codec());
  if (lambda != 0.0 && X.rows() > 0) pbar.rowwise() += (lambda / static_cast<double>(X.rows())) * ell.transpose();
  ev.grad = policy.backward(cache, softmax_backward(P, pbar));
  check_finite(ev.grad, policy);
  return ev;
}

std::vector<DenseLayer> rate_gradient(const MlpPolicy& policy, const Matrix& X, double lambda) {
  MlpPolicy::Cache cache;
  const Matrix P = policy.probs(X, &cache);
  Matrix pbar = Matrix::Zero(P.rows(), P.cols());
  if (X.rows() > 0) pbar.rowwise() += (lambda / static_cast<double>(X.rows())) * masked_fractions(policy.codec()).transpose();
  auto g = policy.backward(cache, softmax_backward(P, pbar));
  check_finite(g, policy);
  return g;
}

LammResult lamm_train(const LammConfig& cfg, const Matrix& X, std::uint64_t seed) {
  if (cfg.lambda < 0.0) throw PreconditionError("rate weight must be nonnegative");
  if (cfg.K < 1) throw PreconditionError("need at least one initialization");
  if (cfg.epochs < 0) throw PreconditionError("epoch count must be nonnegative");
  if (!X.allFinite()) throw PreconditionError("training data must be fully observed");
  const int d = static_cast<int>(X.cols());
  PatternCodec codec(cfg.v, d);
  std::vector<int> dims{codec.m()};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(codec.size());

  LammResult res;
  res.policy = MlpPolicy(codec, dims, derive_seed(seed, {hash_name("policy")}));
  if (cfg.standardize_inputs) res.policy.fit_input_transform(X);
  const auto inits = lamm_inits(X, cfg.K, derive_seed(seed, {hash_name("inits")}));

  Vector theta = res.policy.flatten();
  Vector m1 = Vector::Zero(theta.size()), m2 = Vector::Zero(theta.size());
  constexpr double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8;
  double best = std::numeric_limits<double>::infinity();
  Vector best_theta = theta;
  int wait = 0, bad = 0;
  double initial = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const LammEvaluation ev = lamm_evaluate(res.policy, X, cfg.sigma_alpha, inits, cfg.lambda, cfg.wem, true);
    res.loss_trace.push_back(ev.loss);
    const double mon = ev.init_losses.back();
    res.monitor_trace.push_back(mon);
    res.rate_trace.push_back(ev.rate);
    res.epochs_run = epoch + 1;
    if (epoch == 0) initial = ev.loss;
    spdlog::debug("lamm epoch {}: loss {:.6g} rate {:.4f}", epoch, ev.loss, ev.rate);

    if (ev.loss > cfg.divergence_factor * initial) {
      if (++bad >= cfg.divergence_epochs)
        throw TrainingDivergence("training diverged: loss above " + std::to_string(cfg.divergence_factor) +
                                     "x the initial value for " + std::to_string(cfg.divergence_epochs) + " epochs",
                                 res.loss_trace);
    } else {
      bad = 0;
    }

    if (cfg.early_stopping) {
      if (mon < best - cfg.min_delta) {
        best = mon;
        best_theta = theta;
        res.best_epoch = epoch;
        wait = 0;
      } else if (++wait >= cfg.patience) {
        res.stopped_early = true;
        break;
      }
    }

    const Vector g = flatten_layers(ev.grad);
    const double t = epoch + 1;
    m1 = b1 * m1 + (1.0 - b1) * g;
    m2 = b2 * m2 + (1.0 - b2) * g.cwiseProduct(g);
    const Vector mhat = m1 / (1.0 - std::pow(b1, t));
    const Vector vhat = m2 / (1.0 - std::pow(b2, t));
    theta -= cfg.learning_rate * mhat.cwiseQuotient((vhat.array().sqrt() + adam_eps).matrix());
    res.policy.unflatten(theta);
  }
  if (cfg.early_stopping && res.best_epoch >= 0) res.policy.unflatten(best_theta);
  return res;
}

}  // namespace advmiss
