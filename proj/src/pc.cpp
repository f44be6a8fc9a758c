#include "advmiss/pc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

#include <spdlog/spdlog.h>

#include "advmiss/errors.hpp"

namespace advmiss {

double fisher_z_pvalue(double r, Index n, int k) {
  r = std::clamp(r, -1.0 + 1e-15, 1.0 - 1e-15);
  const double z = 0.5 * std::log1p(2.0 * r / (1.0 - r)) * std::sqrt(static_cast<double>(n - k - 3));
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

namespace {

class CiTester {
 public:
  CiTester(const MaskedDataset& mds, Deletion deletion) : mds_(mds), deletion_(deletion) {
    if (deletion == Deletion::Complete) {
      const std::uint64_t full = ObservationPattern::all_observed(mds.dim()).bits;
      std::vector<Index> rows;
      for (Index i = 0; i < mds.rows(); ++i)
        if (mds.patterns[static_cast<std::size_t>(i)] == full) rows.push_back(i);
      complete_n_ = static_cast<Index>(rows.size());
      complete_cov_ = covariance(rows, all_columns());
    }
  }

  /// p-value, or nullopt when there are too few rows for the test.
  std::optional<double> pvalue(int i, int j, const std::vector<int>& S) {
    std::vector<int> vars{i, j};
    vars.insert(vars.end(), S.begin(), S.end());
    Matrix C;
    Index n = 0;
    if (deletion_ == Deletion::Complete) {
      C = submatrix(complete_cov_, vars, vars);
      n = complete_n_;
    } else {
      std::uint64_t need = 0;
      for (int v : vars) need |= std::uint64_t{1} << v;
      std::vector<Index> rows;
      for (Index r = 0; r < mds_.rows(); ++r)
        if ((mds_.patterns[static_cast<std::size_t>(r)] & need) == need) rows.push_back(r);
      n = static_cast<Index>(rows.size());
      if (n > static_cast<Index>(S.size()) + 3) C = covariance(rows, vars);
    }
    if (n <= static_cast<Index>(S.size()) + 3) return std::nullopt;
    const Eigen::LDLT<Matrix> ldlt(C);
    const Matrix P = ldlt.solve(Matrix::Identity(C.rows(), C.cols()));
    if (!P.allFinite() || P(0, 0) <= 0.0 || P(1, 1) <= 0.0) return std::nullopt;
    const double r = -P(0, 1) / std::sqrt(P(0, 0) * P(1, 1));
    return fisher_z_pvalue(r, n, static_cast<int>(S.size()));
  }

 private:
  std::vector<int> all_columns() const {
    std::vector<int> c(static_cast<std::size_t>(mds_.dim()));
    for (int j = 0; j < mds_.dim(); ++j) c[static_cast<std::size_t>(j)] = j;
    return c;
  }

  Matrix covariance(const std::vector<Index>& rows, const std::vector<int>& cols) const {
    const Index k = static_cast<Index>(cols.size());
    if (rows.size() < 2) return Matrix::Zero(k, k);
    Matrix X(static_cast<Index>(rows.size()), k);
    for (std::size_t a = 0; a < rows.size(); ++a)
      for (Index b = 0; b < k; ++b) X(static_cast<Index>(a), b) = mds_.values(rows[a], cols[static_cast<std::size_t>(b)]);
    X.rowwise() -= X.colwise().mean();
    return X.transpose() * X / static_cast<double>(X.rows() - 1);
  }

  const MaskedDataset& mds_;
  Deletion deletion_;
  Matrix complete_cov_;
  Index complete_n_ = 0;
};

// Lexicographic k-subsets of `pool`.
bool next_combination(std::vector<int>& idx, int n) {
  const int k = static_cast<int>(idx.size());
  for (int i = k - 1; i >= 0; --i) {
    if (idx[static_cast<std::size_t>(i)] < n - k + i) {
      ++idx[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < k; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
      return true;
    }
  }
  return false;
}

bool apply_meek(Pdag& g) {
  const int d = g.size();
  bool changed = false;
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      if (a == b || !g.undirected(a, b)) continue;
      bool orient = false;
      // R1: c -> a, c not adjacent to b
      for (int c = 0; c < d && !orient; ++c)
        if (c != b && g.directed(c, a) && !g.adjacent(c, b)) orient = true;
      // R2: a -> c -> b
      for (int c = 0; c < d && !orient; ++c)
        if (g.directed(a, c) && g.directed(c, b)) orient = true;
      // R3: a - c -> b, a - e -> b, c and e nonadjacent
      for (int c = 0; c < d && !orient; ++c)
        for (int e = c + 1; e < d && !orient; ++e)
          if (g.undirected(a, c) && g.undirected(a, e) && g.directed(c, b) && g.directed(e, b) && !g.adjacent(c, e))
            orient = true;
      // R4: a adj c, c -> e -> b, a - e, c not adjacent to b
      for (int c = 0; c < d && !orient; ++c)
        for (int e = 0; e < d && !orient; ++e)
          if (c != e && c != b && e != a && g.adjacent(a, c) && g.directed(c, e) && g.directed(e, b) &&
              g.undirected(a, e) && !g.adjacent(c, b))
            orient = true;
      if (orient) {
        g.orient(a, b);
        changed = true;
      }
    }
  return changed;
}

}  // namespace

PcResult pc_fisherz(const MaskedDataset& mds, const PcOptions& opts) {
  const int d = mds.dim();
  if (!(opts.alpha > 0.0 && opts.alpha < 1.0)) throw PreconditionError("alpha must be in (0, 1)");
  CiTester tester(mds, opts.deletion);
  PcResult res;
  std::vector<std::vector<char>> adj(static_cast<std::size_t>(d), std::vector<char>(static_cast<std::size_t>(d), 1));
  for (int i = 0; i < d; ++i) adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = 0;
  std::map<std::pair<int, int>, std::vector<int>> sepset;

  for (int level = 0;; ++level) {
    if (opts.max_cond_size >= 0 && level > opts.max_cond_size) break;
    const auto frozen = adj;
    bool any_testable = false;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        if (i == j || !adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
        std::vector<int> pool;
        for (int k = 0; k < d; ++k)
          if (k != j && frozen[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]) pool.push_back(k);
        if (static_cast<int>(pool.size()) < level) continue;
        any_testable = true;
        std::vector<int> idx(static_cast<std::size_t>(level));
        for (int t = 0; t < level; ++t) idx[static_cast<std::size_t>(t)] = t;
        do {
          std::vector<int> S;
          for (int t : idx) S.push_back(pool[static_cast<std::size_t>(t)]);
          const auto p = tester.pvalue(i, j, S);
          if (!p) {
            ++res.tests_skipped;
            spdlog::debug("PC: skipped test {} _|_ {} | {} vars (too few rows)", i, j, S.size());
            continue;
          }
          ++res.tests_run;
          if (*p > opts.alpha) {
            adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = 0;
            adj[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = 0;
            sepset[{std::min(i, j), std::max(i, j)}] = S;
            break;
          }
        } while (next_combination(idx, static_cast<int>(pool.size())));
      }
    if (!any_testable) break;
  }
  if (res.tests_skipped > 0) spdlog::info("PC: {} conditional-independence tests skipped for lack of rows", res.tests_skipped);

  Pdag g(d, mds.columns);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j)
      if (adj[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) g.add_undirected(i, j);

  // v-structures i -> k <- j; an edge claimed in both directions stays undirected
  std::vector<std::vector<char>> arrow(static_cast<std::size_t>(d), std::vector<char>(static_cast<std::size_t>(d), 0));
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      if (g.adjacent(i, j)) continue;
      const auto it = sepset.find({i, j});
      for (int k = 0; k < d; ++k) {
        if (k == i || k == j || !g.adjacent(i, k) || !g.adjacent(j, k)) continue;
        const bool in_sep = it != sepset.end() && std::find(it->second.begin(), it->second.end(), k) != it->second.end();
        if (it == sepset.end() || in_sep) continue;
        arrow[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = 1;
        arrow[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = 1;
      }
    }
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      if (arrow[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] && !arrow[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)])
        g.orient(a, b);

  while (apply_meek(g)) {
  }
  res.cpdag = g;
  return res;
}

PcResult pc_fisherz(const Dataset& ds, const PcOptions& opts) {
  MaskedDataset mds;
  mds.columns = ds.columns;
  mds.values = ds.values;
  mds.patterns.assign(static_cast<std::size_t>(ds.rows()), ObservationPattern::all_observed(ds.dim()).bits);
  return pc_fisherz(mds, opts);
}

}  // namespace advmiss
