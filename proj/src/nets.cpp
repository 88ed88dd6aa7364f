#include "rnnt/nets.hpp"

#include <cmath>

namespace rnnt {

std::string to_string(CellKind kind) {
  switch (kind) {
    case CellKind::ln_lstm: return "ln_lstm";
    case CellKind::lt_lstm: return "lt_lstm";
    case CellKind::clt_lstm: return "clt_lstm";
    case CellKind::ln_gru: return "ln_gru";
    case CellKind::lt_gru: return "lt_gru";
    case CellKind::eclt_gru: return "eclt_gru";
  }
  return "?";
}

CellKind parse_cell_kind(const std::string& name) {
  for (auto k : {CellKind::ln_lstm, CellKind::lt_lstm, CellKind::clt_lstm, CellKind::ln_gru,
                 CellKind::lt_gru, CellKind::eclt_gru})
    if (to_string(k) == name) return k;
  throw ContractError("unknown cell kind: " + name);
}

std::string to_string(LookaheadInit init) {
  return init == LookaheadInit::identity ? "identity" : "average";
}

LookaheadInit parse_lookahead_init(const std::string& name) {
  if (name == "identity") return LookaheadInit::identity;
  if (name == "average") return LookaheadInit::average;
  throw ContractError("unknown lookahead init: " + name);
}

bool uses_lstm(CellKind kind) {
  return kind == CellKind::ln_lstm || kind == CellKind::lt_lstm || kind == CellKind::clt_lstm;
}

bool is_trajectory(CellKind kind) {
  return kind != CellKind::ln_lstm && kind != CellKind::ln_gru;
}

bool is_contextual(CellKind kind) {
  return kind == CellKind::clt_lstm || kind == CellKind::eclt_gru;
}

Index NetConfig::output_dim() const {
  if (uses_lstm(kind)) return projection > 0 ? projection : hidden;
  return hidden;
}

void NetConfig::validate(bool encoder) const {
  require(num_layers >= 1, "num_layers must be >= 1");
  require(hidden >= 1, "hidden must be >= 1");
  require(input_dim >= 1, "input_dim must be >= 1");
  require(tau >= 0, "tau must be >= 0");
  require(is_contextual(kind) || tau == 0, "tau > 0 requires a contextual cell kind");
  require(!is_contextual(kind) || encoder,
          "contextual cell kinds are only allowed in the encoder");
  if (uses_lstm(kind)) {
    require(projection >= 0 && projection <= hidden, "projection must be in [0, hidden]");
  } else {
    require(projection == 0 || projection == hidden, "GRU kinds have no projection");
  }
}

namespace {

std::size_t lstm_params(Index in, Index h, Index p) {
  return static_cast<std::size_t>(4 * (h * in + h * p + 3 * h) + 2 * h + p * h);
}

std::size_t gru_params(Index in, Index h) {
  return static_cast<std::size_t>(3 * (h * in + h * h + 3 * h));
}

}  // namespace

std::size_t count_parameters(const NetConfig& cfg) {
  const Index out = cfg.output_dim();
  const bool lstm = uses_lstm(cfg.kind);
  auto cell = [&](Index in) { return lstm ? lstm_params(in, cfg.hidden, out) : gru_params(in, cfg.hidden); };
  std::size_t n = 0;
  for (int l = 0; l < cfg.num_layers; ++l) n += cell(l == 0 ? cfg.input_dim : out);
  if (is_trajectory(cfg.kind)) n += static_cast<std::size_t>(cfg.num_layers) * cell(out);
  const auto taps = static_cast<std::size_t>(cfg.num_layers * (cfg.tau + 1));
  if (cfg.kind == CellKind::clt_lstm) n += taps * static_cast<std::size_t>(out * out);
  if (cfg.kind == CellKind::eclt_gru) n += taps * static_cast<std::size_t>(out);
  return n;
}

Network::Network(ParamRegistry& reg, const std::string& prefix, const NetConfig& cfg, bool encoder)
    : cfg_(cfg) {
  cfg_.validate(encoder);
  const Index out = cfg_.output_dim();
  auto make_cell = [&](const std::string& name, Index in) {
    if (uses_lstm(cfg_.kind)) return Cell(LstmCell(reg, name, in, cfg_.hidden, out));
    return Cell(GruCell(reg, name, in, cfg_.hidden));
  };
  for (int l = 0; l < cfg_.num_layers; ++l) {
    const std::string layer = prefix + ".layer" + std::to_string(l + 1);
    time_.push_back(make_cell(layer + ".time", l == 0 ? cfg_.input_dim : out));
    if (is_trajectory(cfg_.kind)) depth_.push_back(make_cell(layer + ".depth", out));
  }
  if (is_contextual(cfg_.kind)) {
    for (int b = 1; b <= cfg_.num_layers; ++b) {
      auto& taps = look_.emplace_back();
      for (int d = 0; d <= cfg_.tau; ++d) {
        const std::string name = prefix + ".lookahead" + std::to_string(b) + "." +
                                 (cfg_.kind == CellKind::clt_lstm ? "G" : "q") + std::to_string(d);
        taps.push_back(cfg_.kind == CellKind::clt_lstm ? &reg.add(name, out, out)
                                                       : &reg.add(name, out, 1));
      }
    }
  }
}

void Network::init(std::mt19937_64& rng) {
  for (auto& c : time_) c.init(rng);
  for (auto& c : depth_) c.init(rng);
  const bool average = cfg_.lookahead_init == LookaheadInit::average;
  const Real share = average ? Real(1) / static_cast<Real>(cfg_.tau + 1) : Real(1);
  for (auto& taps : look_) {
    for (std::size_t d = 0; d < taps.size(); ++d) {
      Param* p = taps[d];
      const Real w = (d == 0 || average) ? share : Real(0);
      if (cfg_.kind == CellKind::clt_lstm) p->value = Mat::Identity(p->value.rows(), p->value.cols()) * w;
      else p->value.setConstant(w);
    }
  }
}

Param& Network::lookahead(int boundary, int delta) const {
  require(is_contextual(cfg_.kind), "lookahead weights exist only for contextual kinds");
  require(boundary >= 1 && boundary <= cfg_.num_layers && delta >= 0 && delta <= cfg_.tau,
          "lookahead index out of range");
  return *look_[static_cast<std::size_t>(boundary - 1)][static_cast<std::size_t>(delta)];
}

Mat Network::run_time_layers(const Mat& x, std::vector<Mat>& outputs, Cache* cache) const {
  require(x.rows() >= 1, "network input must have at least one frame");
  require(x.cols() == cfg_.input_dim, "network input dimension mismatch");
  const Index frames = x.rows();
  const auto layers = static_cast<std::size_t>(cfg_.num_layers);
  if (cache) {
    cache->frames = frames;
    cache->time.assign(layers, std::vector<Cell::Cache>(static_cast<std::size_t>(frames)));
    cache->depth.clear();
    cache->depth_out.clear();
  }
  outputs.clear();
  const Mat* input = &x;
  for (std::size_t l = 0; l < layers; ++l) {
    Mat out(frames, cfg_.output_dim());
    CellState state = time_[l].zero_state();
    for (Index t = 0; t < frames; ++t) {
      Cell::Cache* c = cache ? &cache->time[l][static_cast<std::size_t>(t)] : nullptr;
      state = time_[l].step(input->row(t).transpose(), state, c);
      out.row(t) = state.h.transpose();
    }
    outputs.push_back(std::move(out));
    input = &outputs.back();
  }
  return outputs.back();
}

Mat Network::apply_lookahead(int boundary, const Mat& g) const {
  const Index frames = g.rows();
  const auto& taps = look_[static_cast<std::size_t>(boundary - 1)];
  Mat zeta;
  if (cfg_.kind == CellKind::clt_lstm) {
    zeta.noalias() = g * taps[0]->value.transpose();
  } else {
    zeta = (g.array().rowwise() * taps[0]->vec().transpose().array()).matrix();
  }
  for (int d = 1; d <= cfg_.tau && d < frames; ++d) {
    const Index n = frames - d;
    if (cfg_.kind == CellKind::clt_lstm) {
      zeta.topRows(n).noalias() += g.bottomRows(n) * taps[static_cast<std::size_t>(d)]->value.transpose();
    } else {
      zeta.topRows(n).array() +=
          g.bottomRows(n).array().rowwise() * taps[static_cast<std::size_t>(d)]->vec().transpose().array();
    }
  }
  return zeta;
}

Mat Network::lookahead_backward(int boundary, const Mat& g, const Mat& grad_zeta) const {
  const Index frames = g.rows();
  const auto& taps = look_[static_cast<std::size_t>(boundary - 1)];
  Mat grad_g = Mat::Zero(frames, g.cols());
  for (int d = 0; d <= cfg_.tau && d < frames; ++d) {
    const Index n = frames - d;
    Param& p = *taps[static_cast<std::size_t>(d)];
    if (cfg_.kind == CellKind::clt_lstm) {
      p.grad.noalias() += grad_zeta.topRows(n).transpose() * g.bottomRows(n);
      grad_g.bottomRows(n).noalias() += grad_zeta.topRows(n) * p.value;
    } else {
      p.grad_vec() += (grad_zeta.topRows(n).array() * g.bottomRows(n).array()).colwise().sum().matrix().transpose();
      grad_g.bottomRows(n).array() += grad_zeta.topRows(n).array().rowwise() * p.vec().transpose().array();
    }
  }
  return grad_g;
}

Mat Network::run_depth(const std::vector<Mat>& time_out, bool contextual, Cache* cache) const {
  const Index frames = time_out.front().rows();
  const Index out = cfg_.output_dim();
  const auto layers = static_cast<std::size_t>(cfg_.num_layers);
  if (cache) {
    cache->depth.assign(layers, std::vector<Cell::Cache>(static_cast<std::size_t>(frames)));
    if (contextual) cache->depth_out.resize(layers);
  }
  std::vector<Vec> memory(static_cast<std::size_t>(frames), depth_[0].zero_state().c);
  Mat below = Mat::Zero(frames, out);  // g[0] (and zeta[0]) are zero
  for (std::size_t l = 0; l < layers; ++l) {
    const Mat input = (l > 0 && contextual) ? apply_lookahead(static_cast<int>(l), below) : below;
    Mat g(frames, out);
    for (Index t = 0; t < frames; ++t) {
      const auto ti = static_cast<std::size_t>(t);
      Cell::Cache* c = cache ? &cache->depth[l][ti] : nullptr;
      CellState s = depth_[l].step(input.row(t).transpose(),
                                   {time_out[l].row(t).transpose(), memory[ti]}, c);
      g.row(t) = s.h.transpose();
      memory[ti] = std::move(s.c);
    }
    if (cache && contextual) cache->depth_out[l] = g;
    below = std::move(g);
  }
  return contextual ? apply_lookahead(cfg_.num_layers, below) : below;
}

Mat Network::forward_stack(const Mat& x, Cache* cache) const {
  require(!is_trajectory(cfg_.kind), "forward_stack needs ln_lstm or ln_gru");
  std::vector<Mat> outputs;
  return run_time_layers(x, outputs, cache);
}

Mat Network::forward_lt(const Mat& x, Cache* cache) const {
  require(cfg_.kind == CellKind::lt_lstm || cfg_.kind == CellKind::lt_gru,
          "forward_lt needs lt_lstm or lt_gru");
  std::vector<Mat> outputs;
  run_time_layers(x, outputs, cache);
  return run_depth(outputs, false, cache);
}

Mat Network::forward_clt(const Mat& x, Cache* cache) const {
  require(is_contextual(cfg_.kind), "forward_clt needs clt_lstm or eclt_gru");
  std::vector<Mat> outputs;
  run_time_layers(x, outputs, cache);
  return run_depth(outputs, true, cache);
}

Mat Network::forward(const Mat& x, Cache* cache) const {
  if (is_contextual(cfg_.kind)) return forward_clt(x, cache);
  if (is_trajectory(cfg_.kind)) return forward_lt(x, cache);
  return forward_stack(x, cache);
}

Vec Network::depth_column(const std::vector<Vec>& time_outputs) const {
  require(cfg_.kind == CellKind::lt_lstm || cfg_.kind == CellKind::lt_gru,
          "depth_column needs lt_lstm or lt_gru");
  require(time_outputs.size() == depth_.size(), "depth_column: one time output per layer");
  Vec g = Vec::Zero(cfg_.output_dim());
  Vec memory = depth_[0].zero_state().c;
  for (std::size_t l = 0; l < depth_.size(); ++l) {
    CellState s = depth_[l].step(g, {time_outputs[l], memory});
    g = std::move(s.h);
    memory = std::move(s.c);
  }
  return g;
}

Mat Network::backward(const Mat& grad_out, const Cache& cache) const {
  const Index frames = cache.frames;
  require(frames >= 1 && cache.time.size() == time_.size(), "Network::backward: missing cache");
  require(grad_out.rows() == frames && grad_out.cols() == cfg_.output_dim(),
          "Network::backward: gradient shape mismatch");
  const Index out = cfg_.output_dim();
  const auto layers = static_cast<std::size_t>(cfg_.num_layers);
  const bool contextual = is_contextual(cfg_.kind);

  std::vector<Mat> grad_h(layers, Mat::Zero(frames, out));
  if (!is_trajectory(cfg_.kind)) {
    grad_h.back() = grad_out;
  } else {
    require(cache.depth.size() == layers, "Network::backward: missing depth cache");
    Mat grad_g = contextual ? lookahead_backward(cfg_.num_layers, cache.depth_out.back(), grad_out)
                            : grad_out;
    const Vec zero_c = depth_[0].zero_state().c;
    std::vector<Vec> grad_memory(static_cast<std::size_t>(frames), zero_c);
    for (std::size_t l = layers; l-- > 0;) {
      Mat grad_in(frames, out);
      for (Index t = 0; t < frames; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        CellGrads g = depth_[l].backward(grad_g.row(t).transpose(), grad_memory[ti], cache.depth[l][ti]);
        grad_in.row(t) = g.x.transpose();
        grad_h[l].row(t) += g.h_prev.transpose();
        grad_memory[ti] = std::move(g.c_prev);
      }
      if (l > 0) {
        grad_g = contextual ? lookahead_backward(static_cast<int>(l), cache.depth_out[l - 1], grad_in)
                            : std::move(grad_in);
      }
    }
  }

  for (std::size_t l = layers; l-- > 0;) {
    const Index in_dim = time_[l].input_dim();
    Mat grad_x(frames, in_dim);
    CellState next_grad = time_[l].zero_state();
    next_grad.h.setZero();
    for (Index t = frames; t-- > 0;) {
      const Vec gh = grad_h[l].row(t).transpose() + next_grad.h;
      CellGrads g = time_[l].backward(gh, next_grad.c, cache.time[l][static_cast<std::size_t>(t)]);
      grad_x.row(t) = g.x.transpose();
      next_grad.h = std::move(g.h_prev);
      next_grad.c = std::move(g.c_prev);
    }
    if (l == 0) return grad_x;
    grad_h[l - 1] += grad_x;
  }
  return {};
}

NetState Network::initial_state() const {
  NetState s;
  for (const auto& c : time_) s.layers.push_back(c.zero_state());
  return s;
}

Vec Network::step(const Vec& x, NetState& state) const {
  require(!is_contextual(cfg_.kind), "streaming step is unavailable for lookahead networks");
  require(state.layers.size() == time_.size(), "NetState does not match network depth");
  Vec input = x;
  std::vector<Vec> column;
  for (std::size_t l = 0; l < time_.size(); ++l) {
    state.layers[l] = time_[l].step(input, state.layers[l]);
    input = state.layers[l].h;
    if (is_trajectory(cfg_.kind)) column.push_back(input);
  }
  return is_trajectory(cfg_.kind) ? depth_column(column) : input;
}

PredictionNetwork::PredictionNetwork(ParamRegistry& reg, const std::string& prefix,
                                     const NetConfig& cfg, Index vocab_size)
    : net_(reg, prefix, cfg, false), vocab_(vocab_size) {
  require(vocab_size >= 2, "vocabulary must hold blank plus at least one label");
  embedding_ = &reg.add(prefix + ".embedding", vocab_size - 1, cfg.input_dim);
}

void PredictionNetwork::init(std::mt19937_64& rng) {
  net_.init(rng);
  init_uniform(*embedding_, Real(1), rng);
}

void PredictionNetwork::check_token(int token) const {
  require(token != kBlank, "blank id inside a label sequence");
  require(token >= 1 && token < vocab_, "label id out of range: " + std::to_string(token));
}

Vec PredictionNetwork::embed(int token) const {
  check_token(token);
  return embedding_->value.row(token - 1).transpose();
}

Mat PredictionNetwork::forward(const LabelSeq& labels, Cache* cache) const {
  const auto positions = static_cast<Index>(labels.size()) + 1;
  Mat x = Mat::Zero(positions, net_.config().input_dim);
  for (std::size_t u = 0; u < labels.size(); ++u) {
    check_token(labels[u]);
    x.row(static_cast<Index>(u) + 1) = embedding_->value.row(labels[u] - 1);
  }
  if (cache) cache->labels = labels;
  return net_.forward(x, cache ? &cache->net : nullptr);
}

void PredictionNetwork::backward(const Mat& grad_out, const Cache& cache) const {
  const Mat grad_x = net_.backward(grad_out, cache.net);
  for (std::size_t u = 0; u < cache.labels.size(); ++u)
    embedding_->grad.row(cache.labels[u] - 1) += grad_x.row(static_cast<Index>(u) + 1);
}

Vec PredictionNetwork::start(NetState& state) const {
  state = net_.initial_state();
  return net_.step(Vec::Zero(net_.config().input_dim), state);
}

Vec PredictionNetwork::advance(NetState& state, int token) const {
  return net_.step(embed(token), state);
}

Index stacked_length(Index raw_frames, int stack) {
  require(stack >= 1, "stack factor must be >= 1");
  return (raw_frames + stack - 1) / stack;
}

Mat stack_frames(const Mat& features, int stack) {
  require(features.rows() >= 1, "cannot stack an empty feature sequence");
  const Index frames = stacked_length(features.rows(), stack);
  const Index dim = features.cols();
  Mat out = Mat::Zero(frames, dim * stack);
  for (Index r = 0; r < features.rows(); ++r)
    out.block(r / stack, (r % stack) * dim, 1, dim) = features.row(r);
  return out;
}

Encoder::Encoder(ParamRegistry& reg, const std::string& prefix, const NetConfig& cfg,
                 Index feature_dim, int stack)
    : net_(reg, prefix, cfg, true), feature_dim_(feature_dim), stack_(stack) {
  require(stack >= 1, "stack factor must be >= 1");
  require(cfg.input_dim == feature_dim * stack,
          "encoder input_dim must equal feature_dim * stack");
}

Mat Encoder::forward(const Mat& features, Network::Cache* cache) const {
  require(features.cols() == feature_dim_, "feature dimension mismatch");
  return net_.forward(stack_frames(features, stack_), cache);
}

void Encoder::backward(const Mat& grad_out, const Network::Cache& cache) const {
  net_.backward(grad_out, cache);
}

}  // namespace rnnt
