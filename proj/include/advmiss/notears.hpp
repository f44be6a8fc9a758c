#pragma once

#include <functional>
#include <stdexcept>

#include "advmiss/kernels.hpp"
#include "advmiss/linalg.hpp"

namespace advmiss {

struct Acyclicity {
  double value = 0.0;
  Matrix gradient;
};

/// h(W) = tr(exp(W∘W)) − d and its gradient exp(W∘W)ᵀ∘2W.
Acyclicity acyclicity_h(const Matrix& W);

struct NotearsOptions {
  int max_outer = 100;
  double h_tol = 1e-8;
  double rho_max = 1e16;
  int inner_max_iter = 100;
  double inner_tol = 1e-6;
  int lbfgs_memory = 10;
  /// Return the last iterate (with a warning) when rho reaches rho_max above
  /// h_tol, as the reference package does, instead of throwing.
  bool accept_at_rho_max = false;
};

/// The augmented-Lagrangian loop hit rho_max (or its iteration cap) with
/// h above tolerance. `best` is the last accepted iterate.
class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(const std::string& what, Matrix best, double h)
      : std::runtime_error(what), best_(std::move(best)), h_(h) {}
  const Matrix& best() const { return best_; }
  double h() const { return h_; }

 private:
  Matrix best_;
  double h_;
};

/// ½tr((I−W)ᵀS(I−W)) + l1‖W‖₁ over off-diagonal entries.
double notears_objective(const Matrix& S, const Matrix& W, double l1);

/// min_W ½tr((I−W)ᵀS(I−W)) + l1‖W‖₁ s.t. h(W) = 0, with S the second-moment
/// matrix (T̂/N). Diagonal fixed at 0; entries with |w| <= w_threshold are
/// zeroed in the returned matrix.
Matrix notears_gram(const Matrix& S, double l1, double w_threshold = 0.0, const NotearsOptions& opts = {},
                    const Matrix* w_init = nullptr);
Matrix notears_gram(const SufficientStats& st, double l1, double w_threshold = 0.0, const NotearsOptions& opts = {},
                    const Matrix* w_init = nullptr);

/// Orthant-wise limited-memory quasi-Newton minimization of f(x) + c‖x‖₁.
/// `fg` returns f and writes the gradient. Returns the number of iterations.
struct OwlqnResult {
  int iterations = 0;
  double objective = 0.0;
  double pg_norm = 0.0;  // inf-norm of the pseudo-gradient at exit
};
OwlqnResult owlqn_minimize(const std::function<double(const Vector&, Vector&)>& fg, Vector& x, double c, int max_iter,
                           double tol, int memory);

}  // namespace advmiss
