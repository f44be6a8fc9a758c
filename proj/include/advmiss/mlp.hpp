#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advmiss/linalg.hpp"
#include "advmiss/mechanisms.hpp"

namespace advmiss {

inline constexpr int kMaxPolicyV = 12;

/// Output index k <-> pattern over V: bit b of k set means V[b] observed, and
/// everything outside V is always observed.
class PatternCodec {
 public:
  PatternCodec() = default;
  PatternCodec(std::vector<int> v, int d);

  int dim() const { return d_; }
  int m() const { return static_cast<int>(v_.size()); }
  int size() const { return 1 << m(); }
  const std::vector<int>& v() const { return v_; }
  bool covers_all() const { return m() == d_; }

  ObservationPattern decode(std::uint64_t k) const { return pattern_from_code(k, v_, d_); }
  std::uint64_t encode(const ObservationPattern& r) const;
  /// Number of V entries masked under code k.
  int masked(std::uint64_t k) const;
  std::vector<std::uint64_t> all_bits() const;

 private:
  std::vector<int> v_;
  int d_ = 0;
};

struct DenseLayer {
  Matrix W;  // out x in
  Vector b;
};

/// Fully connected net over x_V: ReLU hidden layers, softmax head of size 2^|V|.
/// Inputs are standardized by a fixed shift/scale before the first layer.
class MlpPolicy {
 public:
  MlpPolicy() = default;
  /// dims = {|V|, hidden..., 2^|V|}; glorot-uniform weights, zero biases.
  MlpPolicy(PatternCodec codec, std::vector<int> dims, std::uint64_t seed);

  const PatternCodec& codec() const { return codec_; }
  const std::vector<int>& dims() const { return dims_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  void set_input_transform(Vector shift, Vector scale);
  /// Shift/scale from the V columns of complete data (mean, sd; sd floored at 1e-12).
  void fit_input_transform(const Matrix& X);
  const Vector& input_shift() const { return shift_; }
  const Vector& input_scale() const { return scale_; }

  struct Cache {
    std::vector<Matrix> acts;  // acts[0] = standardized input, acts[l] = output of layer l (pre-softmax for the last)
    Matrix probs;
  };

  /// Probabilities for full rows X (n x d); n x 2^|V|.
  Matrix probs(const Matrix& X, Cache* cache = nullptr) const;
  Vector row_probs(const Vector& x) const;
  /// Parameter gradient from dL/dlogits (n x 2^|V|).
  std::vector<DenseLayer> backward(const Cache& cache, const Matrix& dlogits) const;

  Index parameter_count() const;
  Vector flatten() const;
  void unflatten(const Vector& theta);

  void save(const std::filesystem::path& path, const std::vector<std::string>& columns) const;
  /// Column names (if any) go to `columns`.
  static MlpPolicy load(const std::filesystem::path& path, std::vector<std::string>* columns = nullptr);

 private:
  PatternCodec codec_;
  std::vector<int> dims_;
  std::vector<DenseLayer> layers_;
  Vector shift_, scale_;
};

/// Flatten a layer-structured gradient in the same order as MlpPolicy::flatten.
Vector flatten_layers(const std::vector<DenseLayer>& layers);

/// A trained policy as a missingness mechanism; support index = V code.
class PolicyMechanism : public MissingnessMechanism {
 public:
  explicit PolicyMechanism(MlpPolicy policy);

  std::string kind() const override { return "lamm"; }
  int dim() const override { return policy_.codec().dim(); }
  const std::vector<ObservationPattern>& support() const override { return support_; }
  Vector pattern_probs(const Vector& x) const override { return policy_.row_probs(x); }

  const MlpPolicy& policy() const { return policy_; }

 private:
  MlpPolicy policy_;
  std::vector<ObservationPattern> support_;
};

}  // namespace advmiss
