#include "rnnt/core.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>

namespace rnnt {

static_assert(std::endian::native == std::endian::little,
              "tensor files are written in host order");

namespace {

constexpr char kTensorMagic[4] = {'T', 'K', 'T', '1'};

std::int64_t shape_product(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    require(d >= 1, "tensor dimensions must be >= 1");
    n *= d;
  }
  return n;
}

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("truncated tensor stream");
  return value;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)),
      data_(static_cast<std::size_t>(shape_product(shape_)), 0.0) {}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(static_cast<std::int64_t>(data_.size()) == shape_product(shape_),
          "tensor payload does not match shape");
}

Tensor Tensor::from_matrix(const Mat& m) {
  std::vector<double> data(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
  return Tensor({m.rows(), m.cols()}, std::move(data));
}

Tensor Tensor::from_vector(const Vec& v) {
  return Tensor({v.size()}, std::vector<double>(v.data(), v.data() + v.size()));
}

Mat Tensor::to_matrix() const {
  require(rank() == 1 || rank() == 2, "to_matrix needs a rank-1 or rank-2 tensor");
  const Index rows = shape_[0];
  const Index cols = rank() == 2 ? shape_[1] : 1;
  Mat m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c)
      m(r, c) = static_cast<Real>(data_[static_cast<std::size_t>(r * cols + c)]);
  return m;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kTensorMagic, 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTensorMagic, 4) != 0)
    throw std::runtime_error("bad tensor magic (expected TKT1)");
  const auto rank = get<std::uint32_t>(in);
  if (rank == 0 || rank > 8) throw std::runtime_error("unsupported tensor rank");
  std::vector<std::int64_t> shape(rank);
  for (auto& d : shape) {
    const auto v = get<std::uint64_t>(in);
    if (v == 0 || v > (1ull << 40)) throw std::runtime_error("bad tensor dimension");
    d = static_cast<std::int64_t>(v);
  }
  std::vector<double> data(static_cast<std::size_t>(shape_product(shape)));
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated tensor payload");
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_tensor(in);
}

LayerNormParams LayerNormParams::identity(Index dim, Real epsilon) {
  return {Vec::Ones(dim), Vec::Zero(dim), epsilon};
}

Vec layer_norm(const Vec& v, const Eigen::Ref<const Vec>& gain,
               const Eigen::Ref<const Vec>& bias, Real epsilon,
               LayerNormCache* cache) {
  require(v.size() == gain.size() && gain.size() == bias.size(),
          "layer_norm: dimension mismatch");
  require(v.size() > 0, "layer_norm: empty input");
  require(epsilon >= 0, "layer_norm: negative epsilon");
  const Real n = static_cast<Real>(v.size());
  const Real mean = v.mean();
  Vec centered = v.array() - mean;
  const Real var = centered.squaredNorm() / n;
  if (!std::isfinite(var)) throw NumericError("layer_norm: non-finite input");
  const Real denom = std::sqrt(var + epsilon);
  require(denom > 0, "layer_norm: zero variance with epsilon == 0");
  const Real inv_std = Real(1) / denom;
  Vec normalized = centered * inv_std;
  Vec out = normalized.cwiseProduct(gain) + bias;
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return out;
}

Vec layer_norm(const Vec& v, const LayerNormParams& p) {
  return layer_norm(v, p.gain, p.bias, p.epsilon);
}

Vec layer_norm_backward(const Vec& grad_out, const Eigen::Ref<const Vec>& gain,
                        const LayerNormCache& cache, Eigen::Ref<Vec> grad_gain,
                        Eigen::Ref<Vec> grad_bias) {
  const Vec& xhat = cache.normalized;
  grad_gain += grad_out.cwiseProduct(xhat);
  grad_bias += grad_out;
  const Vec dxhat = grad_out.cwiseProduct(gain);
  const Real mean_d = dxhat.mean();
  const Real mean_dx = dxhat.dot(xhat) / static_cast<Real>(xhat.size());
  return cache.inv_std * (dxhat.array() - mean_d - xhat.array() * mean_dx).matrix();
}

Vec softmax(const Vec& logits) {
  require(!logits.hasNaN(), "softmax: NaN input");
  require(logits.size() > 0, "softmax: empty input");
  RowVec row = logits.transpose();
  softmax_in_place(row);
  return row.transpose();
}

Real softmax_in_place(Eigen::Ref<RowVec> row) {
  const Real m = row.maxCoeff();
  row.array() = (row.array() - m).exp();
  const Real z = row.sum();
  row /= z;
  return m + std::log(z);
}

Real log_sum_exp(Real a, Real b) {
  constexpr Real ninf = -std::numeric_limits<Real>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

Vec matvec(const Mat& w, const Vec& v) {
  require(w.cols() == v.size(), "matvec: dimension mismatch");
  return w * v;
}

Mat matmul(const Mat& a, const Mat& b) {
  require(a.cols() == b.rows(), "matmul: dimension mismatch");
  return a * b;
}

Vec add(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "add: dimension mismatch");
  return a + b;
}

Vec hadamard(const Vec& a, const Vec& b) {
  require(a.size() == b.size(), "hadamard: dimension mismatch");
  return a.cwiseProduct(b);
}

}  // namespace rnnt
