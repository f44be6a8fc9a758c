#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "advmiss/mlp.hpp"
#include "advmiss/scm.hpp"
#include "advmiss/wem.hpp"

namespace advmiss {

struct LammConfig {
  CovMatrix sigma_alpha;
  std::vector<int> v;
  double lambda = 0.0;
  int K = 5;
  int epochs = 300;
  double learning_rate = 1e-3;
  std::vector<int> hidden{100, 100};
  WemOptions wem;
  /// Standardize policy inputs by the training columns' mean and sd.
  bool standardize_inputs = true;
  // early stopping on the last initialization's loss
  bool early_stopping = false;
  double min_delta = 1e-4;
  int patience = 10;
  // divergence guard: loss above factor × initial for this many epochs in a row
  double divergence_factor = 10.0;
  int divergence_epochs = 10;
};

/// Thrown when training diverges; carries the loss trace up to the abort.
struct TrainingDivergence : std::runtime_error {
  TrainingDivergence(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), loss_trace(std::move(trace)) {}
  std::vector<double> loss_trace;
};

/// Non-finite gradient in some policy layer.
struct GradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mean over rows of Σ_k P(k | x_i) · (#V entries masked by k) / d.
double expected_masked_fraction(const Matrix& probs, const PatternCodec& codec);

/// KL(N(0,Σα) ‖ N(0,Σ̃)) + λ · expected_masked_fraction.
double lamm_loss(const CovMatrix& sigma_tilde, const CovMatrix& sigma_alpha, const MlpPolicy& policy, double lambda,
                 const Matrix& X);

/// K covariance starts: random SPD matrices rescaled to the columns' sample variances.
std::vector<CovMatrix> lamm_inits(const Matrix& X, int K, std::uint64_t seed);

struct LammEvaluation {
  double loss = 0.0;                // mean over inits
  std::vector<double> init_losses;  // per init
  double rate = 0.0;                // expected masked fraction
  std::vector<int> wem_iterations;
  std::vector<CovMatrix> sigma_tilde;
  std::vector<DenseLayer> grad;     // of the mean loss; empty unless requested
};

/// Runs WEM from every init and, if asked, differentiates the mean loss through
/// the executed iterations.
LammEvaluation lamm_evaluate(const MlpPolicy& policy, const Matrix& X, const CovMatrix& sigma_alpha,
                             const std::vector<CovMatrix>& inits, double lambda, const WemOptions& wem_opts,
                             bool with_gradient);

/// Gradient of λ · expected_masked_fraction alone.
std::vector<DenseLayer> rate_gradient(const MlpPolicy& policy, const Matrix& X, double lambda);

struct LammResult {
  MlpPolicy policy;
  std::vector<double> loss_trace;     // mean loss per epoch
  std::vector<double> monitor_trace;  // last init's loss per epoch
  std::vector<double> rate_trace;
  int epochs_run = 0;
  int best_epoch = -1;
  bool stopped_early = false;
};

/// Adam (0.9, 0.999, 1e-8) on the policy parameters over complete rows X.
LammResult lamm_train(const LammConfig& cfg, const Matrix& X, std::uint64_t seed);

}  // namespace advmiss
