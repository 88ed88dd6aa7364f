#include "rnnt/cells.hpp"

#include <cmath>

namespace rnnt {

namespace {

constexpr const char* kLstmGates = "ifco";
constexpr const char* kGruGates = "zrh";

Vec sigmoid_vec(const Vec& x) { return sigmoid(x); }

// d(act)/d(pre) expressed through the activation value.
Vec sigmoid_grad(const Vec& grad, const Vec& act) {
  return grad.cwiseProduct(act.cwiseProduct(Vec::Ones(act.size()) - act));
}

Vec tanh_grad(const Vec& grad, const Vec& act) {
  return grad.cwiseProduct((Real(1) - act.array().square()).matrix());
}

void init_layer_norm(Param& gain, Param& bias) {
  gain.value.setOnes();
  bias.value.setZero();
}

}  // namespace

LstmCell::LstmCell(ParamRegistry& reg, const std::string& prefix, Index input_dim,
                   Index hidden, Index projection)
    : input_(input_dim), hidden_(hidden), proj_(projection) {
  require(input_dim >= 1 && hidden >= 1 && projection >= 1, "LstmCell: dims must be >= 1");
  require(projection <= hidden, "LstmCell: projection must not exceed hidden size");
  for (int g = 0; g < 4; ++g) {
    const std::string gate(1, kLstmGates[g]);
    wx_[g] = &reg.add(prefix + ".W_" + gate + "x", hidden, input_dim);
    wh_[g] = &reg.add(prefix + ".W_" + gate + "h", hidden, projection);
    b_[g] = &reg.add(prefix + ".b_" + gate, hidden, 1);
    ln_gain_[g] = &reg.add(prefix + ".ln_" + gate + ".gain", hidden, 1);
    ln_bias_[g] = &reg.add(prefix + ".ln_" + gate + ".bias", hidden, 1);
  }
  ln_cell_gain_ = &reg.add(prefix + ".ln_cell.gain", hidden, 1);
  ln_cell_bias_ = &reg.add(prefix + ".ln_cell.bias", hidden, 1);
  wp_ = &reg.add(prefix + ".W_p", projection, hidden);
}

void LstmCell::init(std::mt19937_64& rng) {
  const Real bound_x = Real(1) / std::sqrt(static_cast<Real>(input_ + proj_));
  for (int g = 0; g < 4; ++g) {
    init_uniform(*wx_[g], bound_x, rng);
    init_uniform(*wh_[g], bound_x, rng);
    b_[g]->value.setZero();
    init_layer_norm(*ln_gain_[g], *ln_bias_[g]);
  }
  b_[kForget]->value.setOnes();
  init_layer_norm(*ln_cell_gain_, *ln_cell_bias_);
  init_uniform(*wp_, Real(1) / std::sqrt(static_cast<Real>(hidden_)), rng);
}

CellState LstmCell::step(const Vec& x, const CellState& prev, Cache* cache) const {
  require(x.size() == input_, "LstmCell: input dimension mismatch");
  require(prev.h.size() == proj_ && prev.c.size() == hidden_,
          "LstmCell: state dimension mismatch");
  std::array<Vec, 4> act;
  std::array<LayerNormCache, 4> ln;
  for (int g = 0; g < 4; ++g) {
    Vec pre = wx_[g]->value * x + wh_[g]->value * prev.h + b_[g]->vec();
    Vec n = layer_norm(pre, ln_gain_[g]->vec(), ln_bias_[g]->vec(), epsilon_, &ln[g]);
    act[g] = g == kCandidate ? Vec(n.array().tanh()) : sigmoid_vec(n);
  }
  CellState next;
  next.c = act[kForget].cwiseProduct(prev.c) + act[kInput].cwiseProduct(act[kCandidate]);
  LayerNormCache ln_cell;
  Vec m = layer_norm(next.c, ln_cell_gain_->vec(), ln_cell_bias_->vec(), epsilon_, &ln_cell);
  Vec tanh_cell = m.array().tanh();
  Vec q = act[kOutput].cwiseProduct(tanh_cell);
  next.h = wp_->value * q;
  if (cache) {
    cache->x = x;
    cache->h_prev = prev.h;
    cache->c_prev = prev.c;
    cache->ln = std::move(ln);
    cache->act = std::move(act);
    cache->ln_cell = std::move(ln_cell);
    cache->tanh_cell = std::move(tanh_cell);
    cache->q = std::move(q);
  }
  return next;
}

CellGrads LstmCell::backward(const Vec& grad_h, const Vec& grad_c, const Cache& cache) const {
  require(cache.q.size() == hidden_, "LstmCell::backward: missing forward cache");
  require(grad_h.size() == proj_ && grad_c.size() == hidden_,
          "LstmCell::backward: gradient dimension mismatch");
  const auto& act = cache.act;

  wp_->grad.noalias() += grad_h * cache.q.transpose();
  const Vec dq = wp_->value.transpose() * grad_h;

  std::array<Vec, 4> dact;
  dact[kOutput] = dq.cwiseProduct(cache.tanh_cell);
  const Vec dm = tanh_grad(dq.cwiseProduct(act[kOutput]), cache.tanh_cell);
  const Vec dc = grad_c + layer_norm_backward(dm, ln_cell_gain_->vec(), cache.ln_cell,
                                              ln_cell_gain_->grad_vec(),
                                              ln_cell_bias_->grad_vec());
  dact[kForget] = dc.cwiseProduct(cache.c_prev);
  dact[kInput] = dc.cwiseProduct(act[kCandidate]);
  dact[kCandidate] = dc.cwiseProduct(act[kInput]);

  CellGrads out;
  out.c_prev = dc.cwiseProduct(act[kForget]);
  out.x = Vec::Zero(input_);
  out.h_prev = Vec::Zero(proj_);
  for (int g = 0; g < 4; ++g) {
    const Vec dn = g == kCandidate ? tanh_grad(dact[g], act[g]) : sigmoid_grad(dact[g], act[g]);
    const Vec da = layer_norm_backward(dn, ln_gain_[g]->vec(), cache.ln[g],
                                       ln_gain_[g]->grad_vec(), ln_bias_[g]->grad_vec());
    wx_[g]->grad.noalias() += da * cache.x.transpose();
    wh_[g]->grad.noalias() += da * cache.h_prev.transpose();
    b_[g]->grad_vec() += da;
    out.x.noalias() += wx_[g]->value.transpose() * da;
    out.h_prev.noalias() += wh_[g]->value.transpose() * da;
  }
  return out;
}

GruCell::GruCell(ParamRegistry& reg, const std::string& prefix, Index input_dim, Index hidden)
    : input_(input_dim), hidden_(hidden) {
  require(input_dim >= 1 && hidden >= 1, "GruCell: dims must be >= 1");
  for (int g = 0; g < 3; ++g) {
    const std::string gate(1, kGruGates[g]);
    wx_[g] = &reg.add(prefix + ".W_" + gate + "x", hidden, input_dim);
    wh_[g] = &reg.add(prefix + ".W_" + gate + "h", hidden, hidden);
    b_[g] = &reg.add(prefix + ".b_" + gate, hidden, 1);
    ln_gain_[g] = &reg.add(prefix + ".ln_" + gate + ".gain", hidden, 1);
    ln_bias_[g] = &reg.add(prefix + ".ln_" + gate + ".bias", hidden, 1);
  }
}

void GruCell::init(std::mt19937_64& rng) {
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(input_ + hidden_));
  for (int g = 0; g < 3; ++g) {
    init_uniform(*wx_[g], bound, rng);
    init_uniform(*wh_[g], bound, rng);
    b_[g]->value.setZero();
    init_layer_norm(*ln_gain_[g], *ln_bias_[g]);
  }
}

Vec GruCell::step(const Vec& x, const Vec& h_prev, Cache* cache) const {
  require(x.size() == input_, "GruCell: input dimension mismatch");
  require(h_prev.size() == hidden_, "GruCell: state dimension mismatch");
  std::array<Vec, 3> act;
  std::array<LayerNormCache, 3> ln;
  for (int g : {kUpdate, kReset}) {
    Vec pre = wx_[g]->value * x + wh_[g]->value * h_prev + b_[g]->vec();
    act[g] = sigmoid_vec(layer_norm(pre, ln_gain_[g]->vec(), ln_bias_[g]->vec(), epsilon_, &ln[g]));
  }
  Vec reset_h = act[kReset].cwiseProduct(h_prev);
  Vec pre = wx_[kCandidate]->value * x + wh_[kCandidate]->value * reset_h + b_[kCandidate]->vec();
  act[kCandidate] = layer_norm(pre, ln_gain_[kCandidate]->vec(), ln_bias_[kCandidate]->vec(),
                               epsilon_, &ln[kCandidate])
                        .array()
                        .tanh();
  const Vec& z = act[kUpdate];
  Vec h = z.cwiseProduct(h_prev) + (Vec::Ones(hidden_) - z).cwiseProduct(act[kCandidate]);
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->reset_h = std::move(reset_h);
    cache->ln = std::move(ln);
    cache->act = std::move(act);
  }
  return h;
}

CellGrads GruCell::backward(const Vec& grad_h, const Cache& cache) const {
  require(cache.reset_h.size() == hidden_, "GruCell::backward: missing forward cache");
  require(grad_h.size() == hidden_, "GruCell::backward: gradient dimension mismatch");
  const Vec& z = cache.act[kUpdate];
  const Vec& r = cache.act[kReset];
  const Vec& cand = cache.act[kCandidate];

  CellGrads out;
  out.x = Vec::Zero(input_);
  out.h_prev = grad_h.cwiseProduct(z);

  const Vec dz = grad_h.cwiseProduct(cache.h_prev - cand);
  const Vec dcand = grad_h.cwiseProduct(Vec::Ones(hidden_) - z);

  // Candidate path.
  const Vec da_h = layer_norm_backward(tanh_grad(dcand, cand), ln_gain_[kCandidate]->vec(),
                                       cache.ln[kCandidate], ln_gain_[kCandidate]->grad_vec(),
                                       ln_bias_[kCandidate]->grad_vec());
  wx_[kCandidate]->grad.noalias() += da_h * cache.x.transpose();
  wh_[kCandidate]->grad.noalias() += da_h * cache.reset_h.transpose();
  b_[kCandidate]->grad_vec() += da_h;
  out.x.noalias() += wx_[kCandidate]->value.transpose() * da_h;
  const Vec d_reset_h = wh_[kCandidate]->value.transpose() * da_h;
  out.h_prev += d_reset_h.cwiseProduct(r);
  const Vec dr = d_reset_h.cwiseProduct(cache.h_prev);

  // Gate paths.
  const std::array<const Vec*, 2> dgate{&dz, &dr};
  for (int g : {kUpdate, kReset}) {
    const Vec da = layer_norm_backward(sigmoid_grad(*dgate[g], cache.act[g]), ln_gain_[g]->vec(),
                                       cache.ln[g], ln_gain_[g]->grad_vec(),
                                       ln_bias_[g]->grad_vec());
    wx_[g]->grad.noalias() += da * cache.x.transpose();
    wh_[g]->grad.noalias() += da * cache.h_prev.transpose();
    b_[g]->grad_vec() += da;
    out.x.noalias() += wx_[g]->value.transpose() * da;
    out.h_prev.noalias() += wh_[g]->value.transpose() * da;
  }
  return out;
}

void Cell::init(std::mt19937_64& rng) {
  std::visit([&](auto& c) { c.init(rng); }, impl_);
}

CellState Cell::step(const Vec& x, const CellState& prev, Cache* cache) const {
  if (const auto* lstm = std::get_if<LstmCell>(&impl_)) {
    if (!cache) return lstm->step(x, prev);
    auto& c = cache->emplace<LstmCell::Cache>();
    return lstm->step(x, prev, &c);
  }
  const auto& gru = std::get<GruCell>(impl_);
  if (!cache) return {gru.step(x, prev.h), Vec()};
  auto& c = cache->emplace<GruCell::Cache>();
  return {gru.step(x, prev.h, &c), Vec()};
}

CellGrads Cell::backward(const Vec& grad_h, const Vec& grad_c, const Cache& cache) const {
  if (const auto* lstm = std::get_if<LstmCell>(&impl_)) {
    const auto* c = std::get_if<LstmCell::Cache>(&cache);
    require(c != nullptr, "Cell::backward: cache does not belong to an LSTM");
    return lstm->backward(grad_h, grad_c.size() ? grad_c : Vec(Vec::Zero(lstm->hidden_dim())), *c);
  }
  const auto* c = std::get_if<GruCell::Cache>(&cache);
  require(c != nullptr, "Cell::backward: cache does not belong to a GRU");
  return std::get<GruCell>(impl_).backward(grad_h, *c);
}

CellState Cell::zero_state() const {
  if (is_lstm()) return lstm().zero_state();
  return {Vec::Zero(gru().hidden_dim()), Vec()};
}

Index Cell::input_dim() const {
  return std::visit([](const auto& c) { return c.input_dim(); }, impl_);
}

Index Cell::output_dim() const {
  return std::visit([](const auto& c) { return c.output_dim(); }, impl_);
}

}  // namespace rnnt
