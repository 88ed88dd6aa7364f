#include "rnnt/params.hpp"

#include <cmath>
#include <istream>
#include <ostream>

namespace rnnt {

Param& ParamRegistry::add(const std::string& name, Index rows, Index cols) {
  require(!contains(name), "duplicate parameter name: " + name);
  require(rows >= 1 && cols >= 1, "parameter " + name + " needs positive dims");
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Mat::Zero(rows, cols);
  p->grad = Mat::Zero(rows, cols);
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamRegistry::get(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter: " + name);
  return *params_[it->second];
}

const Param& ParamRegistry::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), "unknown parameter: " + name);
  return *params_[it->second];
}

std::size_t ParamRegistry::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

Real ParamRegistry::grad_norm() const {
  Real sq = 0;
  for (const auto& p : params_) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

Real ParamRegistry::clip_grad_norm(Real max_norm) {
  require(max_norm > 0, "clip norm must be positive");
  const Real norm = grad_norm();
  if (norm > max_norm) {
    const Real scale = max_norm / norm;
    for (auto& p : params_) p->grad *= scale;
  }
  return norm;
}

void ParamRegistry::copy_values_from(const ParamRegistry& other) {
  require(other.size() == size(), "copy_values_from: registry size mismatch");
  for (std::size_t i = 0; i < size(); ++i) {
    require(other[i].name == params_[i]->name &&
                other[i].value.rows() == params_[i]->value.rows() &&
                other[i].value.cols() == params_[i]->value.cols(),
            "copy_values_from: layout mismatch at " + params_[i]->name);
    params_[i]->value = other[i].value;
  }
}

void ParamRegistry::write(std::ostream& out) const {
  const auto count = static_cast<std::uint64_t>(params_.size());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const auto& p : params_) {
    const auto len = static_cast<std::uint32_t>(p->name.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(p->name.data(), len);
    write_tensor(out, Tensor::from_matrix(p->value));
  }
}

void ParamRegistry::read(std::istream& in) {
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || count != params_.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > 4096) throw std::runtime_error("corrupt parameter name");
    std::string name(len, '\0');
    in.read(name.data(), len);
    Mat m = read_tensor(in).to_matrix();
    Param& p = get(name);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw std::runtime_error("checkpoint shape mismatch for " + name);
    p.value = std::move(m);
  }
}

void init_uniform(Param& p, Real bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = static_cast<Real>(dist(rng));
}

GradCheckReport grad_check(ParamRegistry& params,
                           const std::function<Real(bool)>& loss, Real step) {
  require(step >= Real(1e-7) && step <= Real(1e-3), "grad_check: step outside [1e-7, 1e-3]");
  params.zero_grad();
  const Real base = loss(true);
  if (!std::isfinite(base)) throw NumericError("grad_check: non-finite loss");

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = params[i];
    const Mat analytic = p.grad;
    Mat numeric(p.value.rows(), p.value.cols());
    for (Index k = 0; k < p.value.size(); ++k) {
      Real& x = p.value.data()[k];
      const Real saved = x;
      Real f[4];
      const Real offsets[4] = {2 * step, step, -step, -2 * step};
      for (int j = 0; j < 4; ++j) {
        x = saved + offsets[j];
        f[j] = loss(false);
        if (!std::isfinite(f[j]))
          throw NumericError("grad_check: non-finite loss while perturbing " + p.name);
      }
      x = saved;
      numeric.data()[k] = (8 * (f[1] - f[2]) - (f[0] - f[3])) / (12 * step);
    }
    const Real err = (analytic - numeric).norm() /
                     (analytic.norm() + numeric.norm() + Real(1e-12));
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_param = p.name;
    }
  }
  return report;
}

}  // namespace rnnt
