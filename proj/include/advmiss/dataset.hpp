#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advmiss/linalg.hpp"
#include "advmiss/mechanisms.hpp"

namespace advmiss {

struct Dataset {
  std::vector<std::string> columns;
  Matrix values;  // n x d, all finite
  bool centered = false;

  Index rows() const { return values.rows(); }
  int dim() const { return static_cast<int>(values.cols()); }
  int column_index(const std::string& name) const;  // throws ConfigError
  void validate() const;
};

/// Masked entries hold 0.0 in `values`; `patterns[i]` is the authoritative mask
/// (bit j set = observed). Rows with everything masked are kept.
struct MaskedDataset {
  std::vector<std::string> columns;
  Matrix values;
  std::vector<std::uint64_t> patterns;

  Index rows() const { return values.rows(); }
  int dim() const { return static_cast<int>(values.cols()); }
  bool observed(Index i, int j) const { return (patterns[static_cast<std::size_t>(i)] >> j) & 1U; }
  ObservationPattern pattern(Index i) const { return {patterns[static_cast<std::size_t>(i)], dim()}; }
  void validate() const;
};

struct MissingnessRates {
  double overall = 0.0;
  Vector per_column;
  /// Fraction of rows with every column of `cols` masked.
  double rows_all_masked(const MaskedDataset& mds, const std::vector<int>& cols) const;
};

MissingnessRates missingness_rates(const MaskedDataset& mds);
/// Masked fraction over the listed columns only.
double masked_fraction(const MaskedDataset& mds, const std::vector<int>& cols);

Dataset load_dataset(const std::filesystem::path& path, bool center);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset center(Dataset ds);

/// One pattern per row drawn from mech.pattern_probs(x_i) by inverse CDF with
/// a counter-based uniform keyed on (seed, row); parallel over rows.
MaskedDataset apply_mechanism(const Dataset& ds, const MissingnessMechanism& mech, std::uint64_t seed);
/// Unparallelized reference of apply_mechanism.
MaskedDataset apply_mechanism_serial(const Dataset& ds, const MissingnessMechanism& mech, std::uint64_t seed);

Dataset mean_impute(const MaskedDataset& mds);

void save_masked(const MaskedDataset& mds, const std::filesystem::path& path);
MaskedDataset load_masked(const std::filesystem::path& path);

}  // namespace advmiss
