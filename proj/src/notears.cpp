#include "advmiss/notears.hpp"

#include <cmath>
#include <deque>
#include <limits>

#include <spdlog/spdlog.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "advmiss/errors.hpp"

namespace advmiss {

Acyclicity acyclicity_h(const Matrix& W) {
  if (W.rows() != W.cols()) throw DimensionError("acyclicity needs a square matrix");
  const Matrix E = W.cwiseProduct(W).exp();
  return {E.trace() - static_cast<double>(W.rows()), E.transpose().cwiseProduct(2.0 * W)};
}

namespace {

Vector pseudo_gradient(const Vector& x, const Vector& g, double c) {
  if (c == 0.0) return g;
  Vector pg(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    if (x(i) > 0.0) pg(i) = g(i) + c;
    else if (x(i) < 0.0) pg(i) = g(i) - c;
    else if (g(i) + c < 0.0) pg(i) = g(i) + c;
    else if (g(i) - c > 0.0) pg(i) = g(i) - c;
    else pg(i) = 0.0;
  }
  return pg;
}

double sgn(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

OwlqnResult owlqn_minimize(const std::function<double(const Vector&, Vector&)>& fg, Vector& x, double c, int max_iter,
                           double tol, int memory) {
  const Index n = x.size();
  Vector g(n);
  double f = fg(x, g);
  double F = f + c * x.lpNorm<1>();
  std::deque<Vector> S, Y;
  std::deque<double> rho;
  OwlqnResult res;
  Vector pg = pseudo_gradient(x, g, c);
  for (int it = 0; it < max_iter; ++it) {
    res.pg_norm = pg.lpNorm<Eigen::Infinity>();
    if (res.pg_norm <= tol) break;
    // two-loop recursion on the pseudo-gradient
    Vector q = pg;
    std::vector<double> a(S.size());
    for (int k = static_cast<int>(S.size()) - 1; k >= 0; --k) {
      a[static_cast<std::size_t>(k)] = rho[static_cast<std::size_t>(k)] * S[static_cast<std::size_t>(k)].dot(q);
      q -= a[static_cast<std::size_t>(k)] * Y[static_cast<std::size_t>(k)];
    }
    if (!S.empty()) q *= S.back().dot(Y.back()) / Y.back().squaredNorm();
    for (std::size_t k = 0; k < S.size(); ++k) {
      const double b = rho[k] * Y[k].dot(q);
      q += (a[k] - b) * S[k];
    }
    Vector dir = -q;
    for (Index i = 0; i < n; ++i)
      if (sgn(dir(i)) != sgn(-pg(i))) dir(i) = 0.0;
    if (dir.dot(pg) >= 0.0) {  // lost descent; fall back to steepest
      dir = -pg;
      S.clear();
      Y.clear();
      rho.clear();
    }
    Vector orthant(n);
    for (Index i = 0; i < n; ++i) orthant(i) = x(i) != 0.0 ? sgn(x(i)) : sgn(-pg(i));

    double t = S.empty() ? std::min(1.0, 1.0 / std::max(pg.norm(), 1e-300)) : 1.0;
    Vector xn(n), gn(n);
    double fn = 0.0, Fn = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      xn = x + t * dir;
      if (c != 0.0)
        for (Index i = 0; i < n; ++i)
          if (sgn(xn(i)) != orthant(i)) xn(i) = 0.0;
      fn = fg(xn, gn);
      Fn = fn + c * xn.lpNorm<1>();
      if (std::isfinite(Fn) && Fn <= F + 1e-4 * pg.dot(xn - x)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    res.iterations = it + 1;
    if (!accepted) break;
    const Vector s = xn - x, y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      S.push_back(s);
      Y.push_back(y);
      rho.push_back(1.0 / sy);
      if (static_cast<int>(S.size()) > memory) {
        S.pop_front();
        Y.pop_front();
        rho.pop_front();
      }
    }
    const double drop = F - Fn;
    x = xn;
    g = gn;
    f = fn;
    F = Fn;
    pg = pseudo_gradient(x, g, c);
    if (drop <= 1e-15 * std::max(1.0, std::abs(F))) {
      res.pg_norm = pg.lpNorm<Eigen::Infinity>();
      break;
    }
  }
  res.objective = F;
  if (res.iterations == max_iter) res.pg_norm = pg.lpNorm<Eigen::Infinity>();
  return res;
}

namespace {

Matrix unpack(const Vector& x, Index d) {
  Matrix W = Matrix::Zero(d, d);
  Index k = 0;
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i)
      if (i != j) W(i, j) = x(k++);
  return W;
}

Vector pack(const Matrix& W) {
  const Index d = W.rows();
  Vector x(d * (d - 1));
  Index k = 0;
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i)
      if (i != j) x(k++) = W(i, j);
  return x;
}

}  // namespace

double notears_objective(const Matrix& S, const Matrix& W, double l1) {
  if (S.rows() != W.rows() || S.cols() != W.cols() || S.rows() != S.cols()) throw DimensionError("S and W must be square and match");
  const Matrix R = Matrix::Identity(W.rows(), W.cols()) - W;
  return 0.5 * R.cwiseProduct(S * R).sum() + l1 * (W.cwiseAbs().sum() - W.diagonal().cwiseAbs().sum());
}

Matrix notears_gram(const Matrix& S, double l1, double w_threshold, const NotearsOptions& opts, const Matrix* w_init) {
  if (S.rows() != S.cols()) throw DimensionError("second-moment matrix must be square");
  if (!S.allFinite()) throw PreconditionError("second-moment matrix has non-finite entries");
  if (l1 < 0.0) throw PreconditionError("l1 weight must be nonnegative");
  const Index d = S.rows();
  if (d < 2) return Matrix::Zero(d, d);
  const Matrix I = Matrix::Identity(d, d);

  double rho = 1.0, alpha = 0.0, h = std::numeric_limits<double>::infinity();
  Vector x = Vector::Zero(d * (d - 1));
  if (w_init != nullptr) {
    if (w_init->rows() != d || w_init->cols() != d) throw DimensionError("initial W does not match S");
    x = pack(*w_init);
  }
  for (int outer = 0; outer < opts.max_outer; ++outer) {
    Vector xnew = x;
    double hnew = std::isfinite(h) ? h : acyclicity_h(unpack(x, d)).value;
    while (rho < opts.rho_max) {
      xnew = x;
      auto fg = [&](const Vector& v, Vector& grad) {
        const Matrix W = unpack(v, d);
        const Matrix R = I - W;
        const Matrix SR = S * R;
        const double loss = 0.5 * R.cwiseProduct(SR).sum();
        const Acyclicity ac = acyclicity_h(W);
        const Matrix G = -SR + (rho * ac.value + alpha) * ac.gradient;
        grad = pack(G);
        return loss + 0.5 * rho * ac.value * ac.value + alpha * ac.value;
      };
      owlqn_minimize(fg, xnew, l1, opts.inner_max_iter, opts.inner_tol, opts.lbfgs_memory);
      hnew = acyclicity_h(unpack(xnew, d)).value;
      spdlog::trace("notears outer {} rho {:.3g} h {:.3g}", outer, rho, hnew);
      if (hnew > 0.25 * h) rho *= 10.0;
      else break;
    }
    x = xnew;
    h = hnew;
    alpha += rho * h;
    if (h <= opts.h_tol || rho >= opts.rho_max) break;
  }
  Matrix W = unpack(x, d);
  if (!(h <= opts.h_tol)) {
    const std::string msg = fmt::format("acyclicity constraint not met: h = {:.3g} at rho = {:.3g}", h, rho);
    if (!(opts.accept_at_rho_max && rho >= opts.rho_max)) throw NonConvergence(msg, W, h);
    spdlog::debug("{}; keeping the last iterate", msg);
  }
  if (w_threshold > 0.0) W = (W.array().abs() > w_threshold).select(W, 0.0);
  return W;
}

Matrix notears_gram(const SufficientStats& st, double l1, double w_threshold, const NotearsOptions& opts,
                    const Matrix* w_init) {
  if (!(st.n > 0.0)) throw PreconditionError("sufficient statistics have no samples");
  return notears_gram(st.t_hat / st.n, l1, w_threshold, opts, w_init);
}

}  // namespace advmiss
