#pragma once

#include <array>
#include <random>
#include <string>
#include <variant>

#include "rnnt/params.hpp"

namespace rnnt {

/// Recurrent state of one cell. `c` is empty for GRU cells.
struct CellState {
  Vec h;
  Vec c;
};

/// Gradients a cell's backward pass hands to its neighbours.
struct CellGrads {
  Vec x;
  Vec h_prev;
  Vec c_prev;  // empty for GRU
};

/// Layer-normalized LSTM with a linear output projection. The projected
/// output is both the layer output and the recurrent input.
class LstmCell {
 public:
  enum Gate { kInput = 0, kForget = 1, kCandidate = 2, kOutput = 3 };

  struct Cache {
    Vec x, h_prev, c_prev;
    std::array<LayerNormCache, 4> ln;
    std::array<Vec, 4> act;  // i, f, g (tanh), o
    LayerNormCache ln_cell;
    Vec tanh_cell;
    Vec q;
  };

  LstmCell() = default;
  LstmCell(ParamRegistry& reg, const std::string& prefix, Index input_dim,
           Index hidden, Index projection);

  /// uniform(+-1/sqrt(fan_in)) weights, zero biases except forget = 1,
  /// identity layer norms.
  void init(std::mt19937_64& rng);

  CellState step(const Vec& x, const CellState& prev, Cache* cache = nullptr) const;
  /// Reverse of step(); accumulates parameter gradients into the registry.
  CellGrads backward(const Vec& grad_h, const Vec& grad_c, const Cache& cache) const;

  CellState zero_state() const { return {Vec::Zero(proj_), Vec::Zero(hidden_)}; }
  Index input_dim() const { return input_; }
  Index hidden_dim() const { return hidden_; }
  Index output_dim() const { return proj_; }

  Param& w_x(int gate) const { return *wx_[gate]; }
  Param& w_h(int gate) const { return *wh_[gate]; }
  Param& bias(int gate) const { return *b_[gate]; }
  Param& ln_gain(int gate) const { return *ln_gain_[gate]; }
  Param& ln_bias(int gate) const { return *ln_bias_[gate]; }
  Param& ln_cell_gain() const { return *ln_cell_gain_; }
  Param& ln_cell_bias() const { return *ln_cell_bias_; }
  Param& projection() const { return *wp_; }

 private:
  Index input_ = 0, hidden_ = 0, proj_ = 0;
  Real epsilon_ = Real(1e-5);
  std::array<Param*, 4> wx_{}, wh_{}, b_{}, ln_gain_{}, ln_bias_{};
  Param* ln_cell_gain_ = nullptr;
  Param* ln_cell_bias_ = nullptr;
  Param* wp_ = nullptr;
};

/// Layer-normalized GRU: h = z*h_prev + (1-z)*candidate, with the reset gate
/// applied to h_prev inside the candidate's recurrent product.
class GruCell {
 public:
  enum Gate { kUpdate = 0, kReset = 1, kCandidate = 2 };

  struct Cache {
    Vec x, h_prev;
    Vec reset_h;  // r * h_prev
    std::array<LayerNormCache, 3> ln;
    std::array<Vec, 3> act;  // z, r, candidate
  };

  GruCell() = default;
  GruCell(ParamRegistry& reg, const std::string& prefix, Index input_dim, Index hidden);

  void init(std::mt19937_64& rng);

  Vec step(const Vec& x, const Vec& h_prev, Cache* cache = nullptr) const;
  /// Returns grads for x and h_prev (c_prev empty).
  CellGrads backward(const Vec& grad_h, const Cache& cache) const;

  Index input_dim() const { return input_; }
  Index hidden_dim() const { return hidden_; }
  Index output_dim() const { return hidden_; }

  Param& w_x(int gate) const { return *wx_[gate]; }
  Param& w_h(int gate) const { return *wh_[gate]; }
  Param& bias(int gate) const { return *b_[gate]; }
  Param& ln_gain(int gate) const { return *ln_gain_[gate]; }
  Param& ln_bias(int gate) const { return *ln_bias_[gate]; }

 private:
  Index input_ = 0, hidden_ = 0;
  Real epsilon_ = Real(1e-5);
  std::array<Param*, 3> wx_{}, wh_{}, b_{}, ln_gain_{}, ln_bias_{};
};

/// Either cell behind one interface, so networks can be assembled without
/// caring which recurrence they use.
class Cell {
 public:
  using Cache = std::variant<LstmCell::Cache, GruCell::Cache>;

  Cell() = default;
  explicit Cell(LstmCell c) : impl_(std::move(c)) {}
  explicit Cell(GruCell c) : impl_(std::move(c)) {}

  void init(std::mt19937_64& rng);
  CellState step(const Vec& x, const CellState& prev, Cache* cache = nullptr) const;
  CellGrads backward(const Vec& grad_h, const Vec& grad_c, const Cache& cache) const;
  CellState zero_state() const;

  bool is_lstm() const { return std::holds_alternative<LstmCell>(impl_); }
  Index input_dim() const;
  Index output_dim() const;
  const LstmCell& lstm() const { return std::get<LstmCell>(impl_); }
  const GruCell& gru() const { return std::get<GruCell>(impl_); }

 private:
  std::variant<LstmCell, GruCell> impl_;
};

}  // namespace rnnt
