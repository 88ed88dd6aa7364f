#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "rnnt/cells.hpp"
#include "support/reference.hpp"

using namespace rnnt;
using rnnt::testing::random_matrix;

namespace {

Real rel_error(const Vec& a, const Vec& n) { return (a - n).norm() / (a.norm() + n.norm() + 1e-12); }

Vec numeric_grad(const std::function<Real(const Vec&)>& f, const Vec& at) {
  const Real h = 1e-5;
  Vec g(at.size());
  for (Index i = 0; i < at.size(); ++i) {
    Vec p = at, m = at;
    p(i) += h;
    m(i) -= h;
    g(i) = (f(p) - f(m)) / (2 * h);
  }
  return g;
}

void perturb_layer_norms(ParamRegistry& reg, std::mt19937_64& rng) {
  for (std::size_t i = 0; i < reg.size(); ++i) {
    Param& p = reg[i];
    if (p.name.find(".gain") != std::string::npos)
      p.value.array() += random_matrix(p.value.rows(), p.value.cols(), rng, 0.3).array();
    if (p.name.find(".bias") != std::string::npos || p.name.find(".b_") != std::string::npos)
      p.value = random_matrix(p.value.rows(), p.value.cols(), rng, 0.5);
  }
}

void set_identity_norms(ParamRegistry& reg) {
  for (std::size_t i = 0; i < reg.size(); ++i)
    if (reg[i].name.find(".gain") != std::string::npos) reg[i].value.setOnes();
}

}  // namespace

TEST_CASE("lstm zero weights give the zero fixed point") {
  ParamRegistry reg;
  LstmCell cell(reg, "l", 3, 4, 2);
  set_identity_norms(reg);
  std::mt19937_64 rng(1);
  init_uniform(cell.projection(), 1, rng);
  LstmCell::Cache cache;
  const CellState s = cell.step(Vec::Ones(3), cell.zero_state(), &cache);
  for (int g : {0, 1, 3}) CHECK((cache.act[static_cast<std::size_t>(g)].array() == 0.5).all());
  CHECK(s.c.isZero(0));
  CHECK(s.h.isZero(0));
}

TEST_CASE("lstm saturated forget gate keeps the cell") {
  ParamRegistry reg;
  LstmCell cell(reg, "l", 3, 4, 2);
  set_identity_norms(reg);
  cell.ln_gain(LstmCell::kForget).value.setZero();
  cell.ln_bias(LstmCell::kForget).value.setConstant(50);
  cell.bias(LstmCell::kForget).value.setConstant(50);
  std::mt19937_64 rng(2);
  const Vec c0 = random_matrix(4, 1, rng);
  const CellState s = cell.step(random_matrix(3, 1, rng), {Vec::Zero(2), c0});
  CHECK((s.c - c0).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("lstm zero upstream gradient gives zero gradients") {
  ParamRegistry reg;
  LstmCell cell(reg, "l", 4, 4, 3);
  std::mt19937_64 rng(3);
  cell.init(rng);
  LstmCell::Cache cache;
  cell.step(random_matrix(4, 1, rng), {random_matrix(3, 1, rng), random_matrix(4, 1, rng)}, &cache);
  const CellGrads g = cell.backward(Vec::Zero(3), Vec::Zero(4), cache);
  CHECK(g.x.isZero(0));
  CHECK(g.h_prev.isZero(0));
  CHECK(g.c_prev.isZero(0));
  CHECK(reg.grad_norm() == 0);
}

TEST_CASE("lstm scalar cell matches the symbolic derivative") {
  // With one unit every layer norm returns its bias, so only the cell path
  // c = f c_prev + i g carries a gradient.
  ParamRegistry reg;
  LstmCell cell(reg, "l", 1, 1, 1);
  cell.ln_bias(LstmCell::kInput).value(0) = 0.3;
  cell.ln_bias(LstmCell::kForget).value(0) = -0.7;
  cell.ln_bias(LstmCell::kCandidate).value(0) = 0.9;
  cell.ln_bias(LstmCell::kOutput).value(0) = 0.2;
  Vec x(1), h0(1), c0(1);
  x << 0.4;
  h0 << -0.2;
  c0 << 1.3;
  LstmCell::Cache cache;
  const CellState s = cell.step(x, {h0, c0}, &cache);
  const Real i = 1 / (1 + std::exp(-0.3)), f = 1 / (1 + std::exp(0.7)), g = std::tanh(0.9);
  CHECK(std::abs(s.c(0) - (f * 1.3 + i * g)) < 1e-14);
  Vec one(1);
  one << 1;
  const CellGrads gr = cell.backward(Vec::Zero(1), one, cache);
  CHECK(std::abs(gr.c_prev(0) - f) < 1e-10);
  CHECK(std::abs(cell.ln_bias(LstmCell::kForget).grad(0) - 1.3 * f * (1 - f)) < 1e-10);
  CHECK(std::abs(cell.ln_bias(LstmCell::kInput).grad(0) - g * i * (1 - i)) < 1e-10);
  CHECK(std::abs(cell.ln_bias(LstmCell::kCandidate).grad(0) - i * (1 - g * g)) < 1e-10);
  CHECK(gr.x.isZero(0));
  CHECK(gr.h_prev.isZero(0));
}

TEST_CASE("lstm backward passes finite-difference checks") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Index in = 2 + trial % 7, hid = 3 + (trial * 3) % 6, proj = 1 + trial % static_cast<int>(hid);
    ParamRegistry reg;
    LstmCell cell(reg, "l", in, hid, proj);
    cell.init(rng);
    perturb_layer_norms(reg, rng);
    const Vec x = random_matrix(in, 1, rng), h0 = random_matrix(proj, 1, rng), c0 = random_matrix(hid, 1, rng);
    auto loss_of = [&](const Vec& xx, const Vec& hh, const Vec& cc) {
      const CellState s = cell.step(xx, {hh, cc});
      return s.h.squaredNorm() + Real(0.5) * s.c.squaredNorm();
    };
    CellGrads grads;
    auto f = [&](bool acc) {
      if (!acc) return loss_of(x, h0, c0);
      LstmCell::Cache cache;
      const CellState s = cell.step(x, {h0, c0}, &cache);
      grads = cell.backward(2 * s.h, s.c, cache);
      return s.h.squaredNorm() + Real(0.5) * s.c.squaredNorm();
    };
    CHECK(grad_check(reg, f).max_rel_error < 1e-5);
    CHECK(rel_error(grads.x, numeric_grad([&](const Vec& v) { return loss_of(v, h0, c0); }, x)) < 1e-5);
    CHECK(rel_error(grads.h_prev, numeric_grad([&](const Vec& v) { return loss_of(x, v, c0); }, h0)) < 1e-5);
    CHECK(rel_error(grads.c_prev, numeric_grad([&](const Vec& v) { return loss_of(x, h0, v); }, c0)) < 1e-5);
  }
}

TEST_CASE("gru saturated update gate copies the previous state") {
  ParamRegistry reg;
  GruCell cell(reg, "g", 3, 4);
  std::mt19937_64 rng(5);
  cell.init(rng);
  cell.ln_gain(GruCell::kUpdate).value.setZero();
  cell.ln_bias(GruCell::kUpdate).value.setConstant(50);
  const Vec h0 = random_matrix(4, 1, rng);
  const Vec h = cell.step(random_matrix(3, 1, rng), h0);
  CHECK(h == h0);
}

TEST_CASE("gru candidate-only path") {
  ParamRegistry reg;
  GruCell cell(reg, "g", 3, 4);
  std::mt19937_64 rng(6);
  cell.init(rng);
  for (int g = 0; g < 3; ++g) cell.w_x(g).value.setZero();
  cell.ln_gain(GruCell::kUpdate).value.setZero();
  cell.ln_bias(GruCell::kUpdate).value.setConstant(-50);
  cell.ln_gain(GruCell::kReset).value.setZero();
  cell.ln_bias(GruCell::kReset).value.setConstant(-50);
  cell.ln_gain(GruCell::kCandidate).value.setOnes();
  cell.ln_bias(GruCell::kCandidate).value.setZero();
  const Vec bh = random_matrix(4, 1, rng);
  cell.bias(GruCell::kCandidate).value = bh;
  const Vec h = cell.step(random_matrix(3, 1, rng), random_matrix(4, 1, rng));
  const Vec expect = layer_norm(bh, Vec::Ones(4), Vec::Zero(4), Real(1e-5)).array().tanh().matrix();
  CHECK((h - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gru backward passes finite-difference checks") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Index in = 2 + trial % 7, hid = 3 + (trial * 5) % 6;
    ParamRegistry reg;
    GruCell cell(reg, "g", in, hid);
    cell.init(rng);
    perturb_layer_norms(reg, rng);
    const Vec x = random_matrix(in, 1, rng), h0 = random_matrix(hid, 1, rng);
    auto loss_of = [&](const Vec& xx, const Vec& hh) { return cell.step(xx, hh).squaredNorm(); };
    CellGrads grads;
    auto f = [&](bool acc) {
      if (!acc) return loss_of(x, h0);
      GruCell::Cache cache;
      const Vec h = cell.step(x, h0, &cache);
      grads = cell.backward(2 * h, cache);
      return h.squaredNorm();
    };
    const auto rep = grad_check(reg, f);
    CHECK(rep.max_rel_error < 1e-5);
    CHECK(rel_error(grads.x, numeric_grad([&](const Vec& v) { return loss_of(v, h0); }, x)) < 1e-5);
    CHECK(rel_error(grads.h_prev, numeric_grad([&](const Vec& v) { return loss_of(x, v); }, h0)) < 1e-5);
    CHECK(grads.c_prev.size() == 0);
  }
}

TEST_CASE("cell outputs stay bounded") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    ParamRegistry reg;
    GruCell gru(reg, "g", 4, 5);
    LstmCell lstm(reg, "l", 4, 6, 3);
    gru.init(rng);
    lstm.init(rng);
    perturb_layer_norms(reg, rng);
    const Vec x = random_matrix(4, 1, rng, 10);
    const Vec h0 = random_matrix(5, 1, rng, 3);
    CHECK(gru.step(x, h0).cwiseAbs().maxCoeff() <= std::max(h0.cwiseAbs().maxCoeff(), Real(1)) + 1e-12);
    const CellState s = lstm.step(x, {random_matrix(3, 1, rng), random_matrix(6, 1, rng)});
    const Real bound = lstm.projection().value.cwiseAbs().rowwise().sum().maxCoeff();
    CHECK(s.h.cwiseAbs().maxCoeff() <= bound);
  }
}

TEST_CASE("cell steps are deterministic") {
  std::mt19937_64 rng(9);
  ParamRegistry reg;
  LstmCell lstm(reg, "l", 3, 4, 2);
  GruCell gru(reg, "g", 3, 4);
  lstm.init(rng);
  gru.init(rng);
  const Vec x = random_matrix(3, 1, rng), h = random_matrix(4, 1, rng);
  CHECK(gru.step(x, h) == gru.step(x, h));
  const CellState a = lstm.step(x, lstm.zero_state()), b = lstm.step(x, lstm.zero_state());
  CHECK(a.h == b.h);
  CHECK(a.c == b.c);
}

TEST_CASE("cells reject mismatched dimensions") {
  ParamRegistry reg;
  LstmCell lstm(reg, "l", 3, 4, 2);
  GruCell gru(reg, "g", 3, 4);
  CHECK_THROWS_AS(lstm.step(Vec::Zero(2), lstm.zero_state()), ContractError);
  CHECK_THROWS_AS(lstm.step(Vec::Zero(3), {Vec::Zero(4), Vec::Zero(4)}), ContractError);
  CHECK_THROWS_AS(gru.step(Vec::Zero(3), Vec::Zero(3)), ContractError);
  CHECK_THROWS_AS(LstmCell(reg, "bad", 3, 2, 4), ContractError);
}

TEST_CASE("lstm init sets the forget bias to one") {
  ParamRegistry reg;
  LstmCell lstm(reg, "l", 3, 4, 2);
  std::mt19937_64 rng(10);
  lstm.init(rng);
  CHECK((lstm.bias(LstmCell::kForget).value.array() == 1).all());
  CHECK(lstm.bias(LstmCell::kInput).value.isZero(0));
  CHECK((lstm.ln_gain(LstmCell::kOutput).value.array() == 1).all());
  const Real bound = 1 / std::sqrt(Real(3 + 2));
  CHECK(lstm.w_x(0).value.cwiseAbs().maxCoeff() <= bound);
}
