#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace rnnt {

#ifdef RNNT_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using Index = Eigen::Index;
using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Output label ids y_1..y_U; every id lies in [1, K-1].
using LabelSeq = std::vector<int>;
inline constexpr int kBlank = 0;

/// Raised when a caller violates a documented precondition (shape, range).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a computation produces a value it cannot recover from.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}

/// Dense row-major array with explicit shape, used for on-disk exchange.
/// In-memory math uses Vec/Mat directly; Tensor is the serialization unit.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor from_matrix(const Mat& m);
  static Tensor from_vector(const Vec& v);
  /// Rank-1 tensors become a column; rank-2 keep their shape.
  Mat to_matrix() const;

  const std::vector<std::int64_t>& shape() const { return shape_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

// "TKT1" little-endian: magic, u32 rank, u64 dims, f64 payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

struct LayerNormParams {
  Vec gain;
  Vec bias;
  Real epsilon = Real(1e-5);

  static LayerNormParams identity(Index dim, Real epsilon = Real(1e-5));
};

/// Intermediates kept by layer_norm for the backward pass.
struct LayerNormCache {
  Vec normalized;  // (v - mean) / sqrt(var + eps)
  Real inv_std = 0;
};

/// (v - mean) / sqrt(var + eps) * gain + bias, population variance.
/// eps == 0 is accepted for non-constant v.
Vec layer_norm(const Vec& v, const Eigen::Ref<const Vec>& gain,
               const Eigen::Ref<const Vec>& bias, Real epsilon,
               LayerNormCache* cache = nullptr);
Vec layer_norm(const Vec& v, const LayerNormParams& p);

/// Returns dL/dv; accumulates dL/dgain and dL/dbias.
Vec layer_norm_backward(const Vec& grad_out, const Eigen::Ref<const Vec>& gain,
                        const LayerNormCache& cache, Eigen::Ref<Vec> grad_gain,
                        Eigen::Ref<Vec> grad_bias);

Vec softmax(const Vec& logits);
/// Max-subtracted softmax over one row, overwriting it. Returns the
/// log-partition (max + log sum exp) so callers can form log-probabilities.
Real softmax_in_place(Eigen::Ref<RowVec> row);

Real log_sum_exp(Real a, Real b);
template <typename Derived>
Real log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  const Real m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

Vec matvec(const Mat& w, const Vec& v);
Mat matmul(const Mat& a, const Mat& b);
Vec add(const Vec& a, const Vec& b);
Vec hadamard(const Vec& a, const Vec& b);

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  return (Real(1) / (Real(1) + (-x.array()).exp())).matrix();
}

template <typename Derived>
auto tanh(const Eigen::MatrixBase<Derived>& x) {
  return x.array().tanh().matrix();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace rnnt
