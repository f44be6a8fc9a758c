#include "advmiss/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "advmiss/errors.hpp"
#include "advmiss/rng.hpp"

namespace advmiss {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool is_missing_token(const std::string& s) { return s.empty() || s == "NaN" || s == "nan" || s == "NA"; }

double parse_number(const std::string& cell, const std::filesystem::path& path, std::size_t line, std::size_t col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw ParseError(path.string() + ":" + std::to_string(line) + ": column " + std::to_string(col + 1) +
                     ": not a finite number: '" + cell + "'");
  return v;
}

struct RawTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;
};

RawTable read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  RawTable t;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file (header row required)");
  for (auto& h : split_csv_line(line)) t.header.push_back(trim(h));
  if (!t.header.empty() && t.header[0].rfind("\xEF\xBB\xBF", 0) == 0) t.header[0].erase(0, 3);
  for (const auto& h : t.header)
    if (h.empty()) throw ParseError(path.string() + ":1: empty column name");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                       " fields, found " + std::to_string(cells.size()));
    for (auto& c : cells) c = trim(c);
    t.cells.push_back(std::move(cells));
  }
  if (t.cells.empty()) throw ParseError(path.string() + ": dataset has no rows");
  return t;
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, ptr);
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::size_t draw_index(const Vector& probs, double u) {
  double acc = 0.0;
  const Index n = probs.size();
  for (Index k = 0; k < n; ++k) {
    acc += probs(k);
    if (u < acc) return static_cast<std::size_t>(k);
  }
  // rounding left u above the running total; take the last positive entry
  for (Index k = n - 1; k >= 0; --k)
    if (probs(k) > 0.0) return static_cast<std::size_t>(k);
  return static_cast<std::size_t>(n - 1);
}

void mask_row(const Dataset& ds, const MissingnessMechanism& mech, std::uint64_t seed, Index i, MaskedDataset& out) {
  const Vector x = ds.values.row(i).transpose();
  const Vector p = mech.pattern_probs(x);
  const std::size_t k = draw_index(p, counter_uniform(seed, static_cast<std::uint64_t>(i)));
  const std::uint64_t bits = mech.support()[k].bits;
  out.patterns[static_cast<std::size_t>(i)] = bits;
  for (int j = 0; j < ds.dim(); ++j) out.values(i, j) = ((bits >> j) & 1U) ? x(j) : 0.0;
}

MaskedDataset masked_shell(const Dataset& ds, const MissingnessMechanism& mech) {
  if (mech.dim() != ds.dim()) throw DimensionError("mechanism dimension does not match dataset");
  MaskedDataset out;
  out.columns = ds.columns;
  out.values.resize(ds.rows(), ds.dim());
  out.patterns.assign(static_cast<std::size_t>(ds.rows()), 0);
  return out;
}

}  // namespace

int Dataset::column_index(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ConfigError("unknown column name '" + name + "'");
  return static_cast<int>(it - columns.begin());
}

void Dataset::validate() const {
  if (static_cast<Index>(columns.size()) != values.cols()) throw DimensionError("column names do not match data width");
  if (!values.allFinite()) throw PreconditionError("dataset contains non-finite values");
}

void MaskedDataset::validate() const {
  if (static_cast<Index>(columns.size()) != values.cols()) throw DimensionError("column names do not match data width");
  if (static_cast<Index>(patterns.size()) != values.rows()) throw DimensionError("one pattern per row required");
  if (dim() > 64) throw DimensionError("at most 64 columns supported");
  for (Index i = 0; i < rows(); ++i)
    for (int j = 0; j < dim(); ++j) {
      if (observed(i, j) && !std::isfinite(values(i, j))) throw PreconditionError("observed entry is not finite");
      if (!observed(i, j) && values(i, j) != 0.0) throw PreconditionError("masked entry must hold the 0 placeholder");
    }
}

double MissingnessRates::rows_all_masked(const MaskedDataset& mds, const std::vector<int>& cols) const {
  Index count = 0;
  for (Index i = 0; i < mds.rows(); ++i)
    if (std::none_of(cols.begin(), cols.end(), [&](int j) { return mds.observed(i, j); })) ++count;
  return mds.rows() ? static_cast<double>(count) / static_cast<double>(mds.rows()) : 0.0;
}

MissingnessRates missingness_rates(const MaskedDataset& mds) {
  MissingnessRates r;
  r.per_column = Vector::Zero(mds.dim());
  if (mds.rows() == 0) return r;
  for (Index i = 0; i < mds.rows(); ++i)
    for (int j = 0; j < mds.dim(); ++j)
      if (!mds.observed(i, j)) r.per_column(j) += 1.0;
  r.per_column /= static_cast<double>(mds.rows());
  r.overall = r.per_column.mean();
  return r;
}

double masked_fraction(const MaskedDataset& mds, const std::vector<int>& cols) {
  if (cols.empty() || mds.rows() == 0) return 0.0;
  const MissingnessRates r = missingness_rates(mds);
  double s = 0.0;
  for (int j : cols) s += r.per_column(j);
  return s / static_cast<double>(cols.size());
}

Dataset center(Dataset ds) {
  const Eigen::RowVectorXd mean = ds.values.colwise().mean();
  ds.values.rowwise() -= mean;
  ds.centered = true;
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, bool do_center) {
  const RawTable t = read_table(path);
  Dataset ds;
  ds.columns = t.header;
  ds.values.resize(static_cast<Index>(t.cells.size()), static_cast<Index>(t.header.size()));
  for (std::size_t i = 0; i < t.cells.size(); ++i)
    for (std::size_t j = 0; j < t.header.size(); ++j) {
      if (is_missing_token(t.cells[i][j]))
        throw ParseError(path.string() + ":" + std::to_string(i + 2) + ": column " + std::to_string(j + 1) +
                         ": missing cell not allowed in a complete dataset");
      ds.values(static_cast<Index>(i), static_cast<Index>(j)) = parse_number(t.cells[i][j], path, i + 2, j);
    }
  return do_center ? center(std::move(ds)) : ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (std::size_t j = 0; j < ds.columns.size(); ++j) out << (j ? "," : "") << ds.columns[j];
  out << '\n';
  for (Index i = 0; i < ds.rows(); ++i) {
    for (int j = 0; j < ds.dim(); ++j) out << (j ? "," : "") << format_double(ds.values(i, j));
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MaskedDataset apply_mechanism(const Dataset& ds, const MissingnessMechanism& mech, std::uint64_t seed) {
  MaskedDataset out = masked_shell(ds, mech);
  const Index n = ds.rows();
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) mask_row(ds, mech, seed, i, out);
  return out;
}

MaskedDataset apply_mechanism_serial(const Dataset& ds, const MissingnessMechanism& mech, std::uint64_t seed) {
  MaskedDataset out = masked_shell(ds, mech);
  for (Index i = 0; i < ds.rows(); ++i) mask_row(ds, mech, seed, i, out);
  return out;
}

Dataset mean_impute(const MaskedDataset& mds) {
  Dataset ds;
  ds.columns = mds.columns;
  ds.values = mds.values;
  for (int j = 0; j < mds.dim(); ++j) {
    double s = 0.0;
    Index c = 0;
    for (Index i = 0; i < mds.rows(); ++i)
      if (mds.observed(i, j)) {
        s += mds.values(i, j);
        ++c;
      }
    if (c == 0) throw PreconditionError("cannot impute column '" + mds.columns[static_cast<std::size_t>(j)] + "': fully masked");
    const double mean = s / static_cast<double>(c);
    for (Index i = 0; i < mds.rows(); ++i)
      if (!mds.observed(i, j)) ds.values(i, j) = mean;
  }
  return ds;
}

void save_masked(const MaskedDataset& mds, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (std::size_t j = 0; j < mds.columns.size(); ++j) out << (j ? "," : "") << mds.columns[j];
  out << '\n';
  for (Index i = 0; i < mds.rows(); ++i) {
    for (int j = 0; j < mds.dim(); ++j) {
      if (j) out << ',';
      if (mds.observed(i, j)) out << format_double(mds.values(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MaskedDataset load_masked(const std::filesystem::path& path) {
  // blank lines are meaningful here only if the file has one column; reject that
  // ambiguous shape instead of guessing
  std::ifstream probe(path);
  if (!probe) throw ParseError("cannot open " + path.string());
  std::string header;
  std::getline(probe, header);
  if (split_csv_line(header).size() < 2) throw ParseError(path.string() + ": masked files need at least two columns");
  probe.close();

  const RawTable t = read_table(path);
  MaskedDataset mds;
  mds.columns = t.header;
  const std::size_t d = t.header.size();
  if (d > 64) throw DimensionError("at most 64 columns supported");
  mds.values = Matrix::Zero(static_cast<Index>(t.cells.size()), static_cast<Index>(d));
  mds.patterns.assign(t.cells.size(), 0);
  for (std::size_t i = 0; i < t.cells.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const std::string& c = t.cells[i][j];
      if (is_missing_token(c)) continue;
      mds.values(static_cast<Index>(i), static_cast<Index>(j)) = parse_number(c, path, i + 2, j);
      mds.patterns[i] |= std::uint64_t{1} << j;
    }
  return mds;
}

}  // namespace advmiss
