#include "advmiss/mlp.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "advmiss/errors.hpp"

namespace advmiss {

PatternCodec::PatternCodec(std::vector<int> v, int d) : v_(std::move(v)), d_(d) {
  if (d < 1 || d > 64) throw DimensionError("codec dimension must be in [1, 64]");
  if (v_.empty()) throw PreconditionError("masked set V must be nonempty");
  if (static_cast<int>(v_.size()) > kMaxPolicyV)
    throw PreconditionError("|V| = " + std::to_string(v_.size()) + " exceeds the policy cap of " +
                            std::to_string(kMaxPolicyV));
  for (std::size_t k = 0; k < v_.size(); ++k) {
    if (v_[k] < 0 || v_[k] >= d) throw PreconditionError("V index out of range");
    if (k > 0 && v_[k] <= v_[k - 1]) throw PreconditionError("V must be strictly increasing");
  }
}

std::uint64_t PatternCodec::encode(const ObservationPattern& r) const {
  if (r.d != d_) throw DimensionError("pattern dimension does not match codec");
  const std::vector<int> vbar = complement(v_, d_);
  for (int j : vbar)
    if (!r.observed(j)) throw PreconditionError("pattern masks a variable outside V");
  return code_from_pattern(r, v_);
}

int PatternCodec::masked(std::uint64_t k) const { return m() - std::popcount(k); }

std::vector<std::uint64_t> PatternCodec::all_bits() const {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(size()));
  for (int k = 0; k < size(); ++k) out[static_cast<std::size_t>(k)] = decode(static_cast<std::uint64_t>(k)).bits;
  return out;
}

MlpPolicy::MlpPolicy(PatternCodec codec, std::vector<int> dims, std::uint64_t seed)
    : codec_(std::move(codec)), dims_(std::move(dims)) {
  if (dims_.size() < 2) throw PreconditionError("policy needs at least an input and an output layer");
  if (dims_.front() != codec_.m()) throw DimensionError("policy input width must equal |V|");
  if (dims_.back() != codec_.size()) throw DimensionError("policy output width must equal 2^|V|");
  std::mt19937_64 gen(seed);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int in = dims_[l], out = dims_[l + 1];
    if (in < 1 || out < 1) throw PreconditionError("layer widths must be positive");
    const double a = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> u(-a, a);
    DenseLayer L{Matrix(out, in), Vector::Zero(out)};
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < in; ++j) L.W(i, j) = u(gen);
    layers_.push_back(std::move(L));
  }
  shift_ = Vector::Zero(codec_.m());
  scale_ = Vector::Ones(codec_.m());
}

void MlpPolicy::set_input_transform(Vector shift, Vector scale) {
  if (shift.size() != codec_.m() || scale.size() != codec_.m()) throw DimensionError("input transform must have |V| entries");
  if (!(scale.array() > 0.0).all()) throw PreconditionError("input scales must be positive");
  shift_ = std::move(shift);
  scale_ = std::move(scale);
}

void MlpPolicy::fit_input_transform(const Matrix& X) {
  if (X.cols() != codec_.dim()) throw DimensionError("data width does not match policy");
  if (X.rows() < 2) throw PreconditionError("need at least 2 rows to standardize inputs");
  const int m = codec_.m();
  Vector shift(m), scale(m);
  for (int b = 0; b < m; ++b) {
    const auto col = X.col(codec_.v()[static_cast<std::size_t>(b)]);
    shift(b) = col.mean();
    const double var = (col.array() - shift(b)).square().sum() / static_cast<double>(X.rows());
    scale(b) = std::max(std::sqrt(var), 1e-12);
  }
  set_input_transform(std::move(shift), std::move(scale));
}

namespace {

void softmax_rows(Matrix& Z) {
  for (Index i = 0; i < Z.rows(); ++i) {
    const double mx = Z.row(i).maxCoeff();
    Z.row(i) = (Z.row(i).array() - mx).exp();
    Z.row(i) /= Z.row(i).sum();
  }
}

}  // namespace

Matrix MlpPolicy::probs(const Matrix& X, Cache* cache) const {
  if (X.cols() != codec_.dim()) throw DimensionError("data width does not match policy");
  if (!X.allFinite()) throw PreconditionError("policy input has non-finite entries");
  const int m = codec_.m();
  Matrix A(X.rows(), m);
  for (int b = 0; b < m; ++b)
    A.col(b) = (X.col(codec_.v()[static_cast<std::size_t>(b)]).array() - shift_(b)) / scale_(b);
  if (cache) cache->acts.assign(1, A);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix Z = A * layers_[l].W.transpose();
    Z.rowwise() += layers_[l].b.transpose();
    if (l + 1 < layers_.size()) Z = Z.cwiseMax(0.0);
    if (cache) cache->acts.push_back(Z);
    A = std::move(Z);
  }
  softmax_rows(A);
  if (cache) cache->probs = A;
  return A;
}

Vector MlpPolicy::row_probs(const Vector& x) const {
  Matrix X = x.transpose();
  return probs(X).row(0).transpose();
}

std::vector<DenseLayer> MlpPolicy::backward(const Cache& cache, const Matrix& dlogits) const {
  const std::size_t L = layers_.size();
  if (cache.acts.size() != L + 1) throw PreconditionError("cache does not belong to this policy");
  std::vector<DenseLayer> grad(L);
  Matrix delta = dlogits;
  for (std::size_t l = L; l-- > 0;) {
    const Matrix& in = cache.acts[l];
    grad[l].W = delta.transpose() * in;
    grad[l].b = delta.colwise().sum().transpose();
    if (l == 0) break;
    Matrix up = delta * layers_[l].W;
    // ReLU: the cached activation is positive exactly where the unit was active
    delta = (in.array() > 0.0).select(up, 0.0);
  }
  return grad;
}

Index MlpPolicy::parameter_count() const {
  Index n = 0;
  for (const auto& L : layers_) n += L.W.size() + L.b.size();
  return n;
}

Vector flatten_layers(const std::vector<DenseLayer>& layers) {
  Index n = 0;
  for (const auto& L : layers) n += L.W.size() + L.b.size();
  Vector out(n);
  Index k = 0;
  for (const auto& L : layers) {
    for (Index i = 0; i < L.W.rows(); ++i)
      for (Index j = 0; j < L.W.cols(); ++j) out(k++) = L.W(i, j);
    for (Index i = 0; i < L.b.size(); ++i) out(k++) = L.b(i);
  }
  return out;
}

Vector MlpPolicy::flatten() const { return flatten_layers(layers_); }

void MlpPolicy::unflatten(const Vector& theta) {
  if (theta.size() != parameter_count()) throw DimensionError("parameter vector has the wrong length");
  Index k = 0;
  for (auto& L : layers_) {
    for (Index i = 0; i < L.W.rows(); ++i)
      for (Index j = 0; j < L.W.cols(); ++j) L.W(i, j) = theta(k++);
    for (Index i = 0; i < L.b.size(); ++i) L.b(i) = theta(k++);
  }
}

void MlpPolicy::save(const std::filesystem::path& path, const std::vector<std::string>& columns) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write policy file " + path.string());
  out << std::setprecision(17);
  out << "advmiss-policy 1\n";
  out << "codec bit-b-observes-v[b]\n";
  out << "d " << codec_.dim() << "\n";
  out << "v";
  for (int j : codec_.v()) out << ' ' << j;
  out << "\n";
  if (!columns.empty()) {
    if (static_cast<int>(columns.size()) != codec_.dim()) throw DimensionError("column names must cover all d variables");
    out << "columns";
    for (const auto& c : columns) {
      if (c.find_first_of(" \t\n") != std::string::npos) throw PreconditionError("column name '" + c + "' contains whitespace");
      out << ' ' << c;
    }
    out << "\n";
  }
  out << "dims";
  for (int w : dims_) out << ' ' << w;
  out << "\n";
  out << "shift";
  for (Index b = 0; b < shift_.size(); ++b) out << ' ' << shift_(b);
  out << "\nscale";
  for (Index b = 0; b < scale_.size(); ++b) out << ' ' << scale_(b);
  out << "\n";
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    out << "layer " << l << ' ' << L.W.rows() << ' ' << L.W.cols() << "\n";
    for (Index i = 0; i < L.W.rows(); ++i) {
      for (Index j = 0; j < L.W.cols(); ++j) out << (j ? " " : "") << L.W(i, j);
      out << "\n";
    }
    for (Index i = 0; i < L.b.size(); ++i) out << (i ? " " : "") << L.b(i);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed for policy file " + path.string());
}

namespace {

std::istringstream expect_line(std::istream& in, const std::string& key, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing '" + key + "' line");
  std::istringstream ss(line);
  std::string k;
  ss >> k;
  if (k != key) throw ParseError(path.string() + ": expected '" + key + "', found '" + k + "'");
  return ss;
}

template <class T>
std::vector<T> read_all(std::istringstream& ss) {
  std::vector<T> out;
  T v;
  while (ss >> v) out.push_back(v);
  return out;
}

}  // namespace

MlpPolicy MlpPolicy::load(const std::filesystem::path& path, std::vector<std::string>* columns) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open policy file " + path.string());
  {
    auto ss = expect_line(in, "advmiss-policy", path);
    int version = 0;
    ss >> version;
    if (version != 1) throw ParseError(path.string() + ": unsupported policy version");
  }
  {
    auto ss = expect_line(in, "codec", path);
    std::string conv;
    ss >> conv;
    if (conv != "bit-b-observes-v[b]") throw ParseError(path.string() + ": unknown codec convention '" + conv + "'");
  }
  int d = 0;
  expect_line(in, "d", path) >> d;
  auto vs = expect_line(in, "v", path);
  std::vector<int> v = read_all<int>(vs);
  std::string line;
  std::streampos mark = in.tellg();
  std::getline(in, line);
  if (line.rfind("columns", 0) == 0) {
    std::istringstream ss(line.substr(7));
    auto names = read_all<std::string>(ss);
    if (static_cast<int>(names.size()) != d) throw ParseError(path.string() + ": column count does not match d");
    if (columns) *columns = std::move(names);
  } else {
    in.seekg(mark);
  }
  auto ds = expect_line(in, "dims", path);
  std::vector<int> dims = read_all<int>(ds);
  MlpPolicy p(PatternCodec(v, d), dims, 0);
  auto sh = expect_line(in, "shift", path);
  auto sc = expect_line(in, "scale", path);
  const auto shift = read_all<double>(sh), scale = read_all<double>(sc);
  if (static_cast<int>(shift.size()) != p.codec().m() || static_cast<int>(scale.size()) != p.codec().m())
    throw ParseError(path.string() + ": input transform has the wrong length");
  p.set_input_transform(Eigen::Map<const Vector>(shift.data(), static_cast<Index>(shift.size())),
                        Eigen::Map<const Vector>(scale.data(), static_cast<Index>(scale.size())));
  for (std::size_t l = 0; l < p.layers_.size(); ++l) {
    auto hs = expect_line(in, "layer", path);
    std::size_t idx = 0;
    Index rows = 0, cols = 0;
    hs >> idx >> rows >> cols;
    auto& L = p.layers_[l];
    if (idx != l || rows != L.W.rows() || cols != L.W.cols()) throw ParseError(path.string() + ": layer header mismatch");
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        if (!(in >> L.W(i, j))) throw ParseError(path.string() + ": truncated weights");
    for (Index i = 0; i < rows; ++i)
      if (!(in >> L.b(i))) throw ParseError(path.string() + ": truncated biases");
    std::getline(in, line);
  }
  return p;
}

PolicyMechanism::PolicyMechanism(MlpPolicy policy) : policy_(std::move(policy)) {
  const auto& c = policy_.codec();
  for (int k = 0; k < c.size(); ++k) support_.push_back(c.decode(static_cast<std::uint64_t>(k)));
}

}  // namespace advmiss
