#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

namespace advmiss {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Rows/cols of `m` selected by `idx`.
inline Matrix submatrix(const Matrix& m, std::span<const int> rows, std::span<const int> cols) {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(static_cast<Index>(r), static_cast<Index>(c)) = m(rows[r], cols[c]);
  return out;
}

inline Vector subvector(const Vector& v, std::span<const int> idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = v(idx[i]);
  return out;
}

inline std::vector<int> complement(std::span<const int> idx, int d) {
  std::vector<char> in(static_cast<std::size_t>(d), 0);
  for (int i : idx) in[static_cast<std::size_t>(i)] = 1;
  std::vector<int> out;
  for (int j = 0; j < d; ++j)
    if (!in[static_cast<std::size_t>(j)]) out.push_back(j);
  return out;
}

}  // namespace advmiss
