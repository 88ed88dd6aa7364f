#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "rnnt/core.hpp"

namespace rnnt {

/// A named trainable tensor with its gradient accumulator. Vectors are
/// stored as single-column matrices; vec()/grad_vec() view them flat.
struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Eigen::Map<Vec> vec() { return {value.data(), value.size()}; }
  Eigen::Map<const Vec> vec() const { return {value.data(), value.size()}; }
  Eigen::Map<Vec> grad_vec() { return {grad.data(), grad.size()}; }
};

/// Owns every parameter of a model. Addresses are stable for the lifetime
/// of the registry, so modules keep raw Param pointers into it.
class ParamRegistry {
 public:
  ParamRegistry() = default;
  ParamRegistry(const ParamRegistry&) = delete;
  ParamRegistry& operator=(const ParamRegistry&) = delete;

  Param& add(const std::string& name, Index rows, Index cols);
  Param& get(const std::string& name);
  const Param& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t num_scalars() const;
  void zero_grad();
  Real grad_norm() const;
  /// Scales all gradients so the global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  Real clip_grad_norm(Real max_norm);

  /// Copies values (not gradients) from another registry with identical names/shapes.
  void copy_values_from(const ParamRegistry& other);

  void write(std::ostream& out) const;
  /// Reads values into the existing parameters; names and shapes must match.
  void read(std::istream& in);

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

void init_uniform(Param& p, Real bound, std::mt19937_64& rng);

struct GradCheckReport {
  Real max_rel_error = 0;
  std::string worst_param;
};

/// Five-point central-difference check of the analytic gradient.
///
/// `loss` is evaluated with accumulate=true once (it must add dL/dθ into the
/// registry's gradient buffers) and with accumulate=false for every
/// perturbation. The error per parameter tensor is
/// ||analytic - numeric|| / (||analytic|| + ||numeric|| + 1e-12), and the
/// report carries the maximum over tensors.
GradCheckReport grad_check(ParamRegistry& params,
                           const std::function<Real(bool accumulate)>& loss,
                           Real step = Real(1e-5));

}  // namespace rnnt
