#include "rnnt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rnnt/config.hpp"

namespace rnnt {

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string to_string(ShuffleMode m) { return m == ShuffleMode::random ? "random" : "sorted"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ContractError("unknown optimizer: " + s);
}

ShuffleMode parse_shuffle(const std::string& s) {
  if (s == "random") return ShuffleMode::random;
  if (s == "sorted") return ShuffleMode::sorted;
  throw ContractError("unknown shuffle mode: " + s);
}

void TrainConfig::validate() const {
  require(learning_rate >= 0 && std::isfinite(learning_rate), "learning_rate must be finite and >= 0");
  require(clip_norm > 0, "clip_norm must be > 0");
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_budget >= 1, "batch_budget must be >= 1");
}

Index lattice_cells(const Utterance& u, int stack) {
  return stacked_length(u.features.rows(), stack) * static_cast<Index>(u.labels.size() + 1);
}

std::vector<Minibatch> make_batches(const std::vector<Utterance>& utts, Index budget, ShuffleMode mode,
                                    std::uint64_t seed, int stack) {
  require(!utts.empty(), "make_batches: empty corpus");
  require(budget >= 1, "make_batches: budget must be >= 1");
  std::vector<std::size_t> order(utts.size());
  std::iota(order.begin(), order.end(), 0);
  if (mode == ShuffleMode::random) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const Index ta = utts[a].features.rows(), tb = utts[b].features.rows();
      if (ta != tb) return ta < tb;
      return utts[a].labels.size() < utts[b].labels.size();
    });
  }
  std::vector<Minibatch> batches;
  Minibatch cur;
  for (std::size_t i : order) {
    const Index cells = lattice_cells(utts[i], stack);
    if (cells > budget)
      throw ContractError("utterance " + utts[i].id + " needs " + std::to_string(cells) +
                          " lattice cells, over the batch budget of " + std::to_string(budget));
    if (cur.lattice_cells + cells > budget) {
      batches.push_back(std::move(cur));
      cur = Minibatch{};
    }
    cur.indices.push_back(i);
    cur.lattice_cells += cells;
  }
  if (!cur.indices.empty()) batches.push_back(std::move(cur));
  return batches;
}

namespace {

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(static_cast<Real>(lr)) {}
  void step(ParamRegistry& params) override {
    if (lr_ == 0) return;
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value -= lr_ * params[i].grad;
  }

 private:
  Real lr_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr) : lr_(lr) {}
  void step(ParamRegistry& params) override {
    if (m_.empty()) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        m_.push_back(Mat::Zero(params[i].value.rows(), params[i].value.cols()));
        v_.push_back(m_.back());
      }
    }
    ++t_;
    if (lr_ == 0) return;
    const double c1 = 1 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(kBeta2, static_cast<double>(t_));
    const Real step = static_cast<Real>(lr_ * std::sqrt(c2) / c1);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Mat& g = params[i].grad;
      m_[i] = Real(kBeta1) * m_[i] + Real(1 - kBeta1) * g;
      v_[i] = Real(kBeta2) * v_[i] + Real(1 - kBeta2) * g.cwiseProduct(g);
      params[i].value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + Real(kEps));
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  std::uint64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

}  // namespace

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate) {
  if (kind == OptimizerKind::sgd) return std::make_unique<Sgd>(learning_rate);
  return std::make_unique<Adam>(learning_rate);
}

Trainer::Trainer(TransducerModel& model, const TrainConfig& cfg)
    : model_(model), cfg_((cfg.validate(), cfg)), opt_(make_optimizer(cfg.optimizer, cfg.learning_rate)),
      rng_(cfg.seed) {}

StepLog Trainer::train_step(const std::vector<Utterance>& utts, const Minibatch& batch, int epoch) {
  require(!batch.indices.empty(), "train_step: empty batch");
  std::vector<Mat> feats;
  std::vector<LabelSeq> labels;
  for (std::size_t i : batch.indices) {
    feats.push_back(utts[i].features);
    labels.push_back(utts[i].labels);
  }
  const Real scale = Real(1) / static_cast<Real>(batch.indices.size());
  model_.params().zero_grad();
  LossResult r;
  try {
    r = model_.compute_loss(feats, labels, true, scale);
  } catch (const NumericError& e) {
    std::ostringstream msg;
    msg << e.what() << " at step " << steps_ << " (epoch " << epoch << "), batch:";
    for (std::size_t i : batch.indices) msg << ' ' << utts[i].id;
    throw NumericError(msg.str());
  }
  StepLog log{steps_, epoch, static_cast<double>(r.total * scale), 0.0};
  log.grad_norm = static_cast<double>(model_.params().clip_grad_norm(static_cast<Real>(cfg_.clip_norm)));
  opt_->step(model_.params());
  ++steps_;
  return log;
}

EpochLog Trainer::run_epoch(const std::vector<Utterance>& train, const std::vector<Utterance>* dev, int epoch,
                            const TrainHooks& hooks) {
  const ShuffleMode mode = (epoch == 0 && cfg_.sorted_first_epoch) ? ShuffleMode::sorted : cfg_.shuffle;
  const auto batches = make_batches(train, cfg_.batch_budget, mode, rng_(), model_.config().stack);
  double loss_sum = 0;
  for (const auto& b : batches) {
    const StepLog s = train_step(train, b, epoch);
    loss_sum += s.loss;
    if (hooks.on_step) hooks.on_step(s);
  }
  EpochLog log{epoch, loss_sum / static_cast<double>(batches.size()), std::nan("")};
  if (dev && !dev->empty()) log.dev_token_error = evaluate(model_, *dev, DecodeConfig{}).token_error();
  if (hooks.on_epoch) hooks.on_epoch(log);
  return log;
}

std::vector<EpochLog> Trainer::fit(const std::vector<Utterance>& train, const std::vector<Utterance>* dev,
                                   const TrainHooks& hooks) {
  std::vector<EpochLog> logs;
  for (int e = 0; e < cfg_.epochs; ++e) logs.push_back(run_epoch(train, dev, e, hooks));
  return logs;
}

std::string Trainer::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void Trainer::set_rng_state(const std::string& state) {
  std::istringstream is(state);
  is >> rng_;
  if (!is) throw ContractError("malformed RNG state");
}

double EvalResult::mean_delay() const {
  return matched == 0 ? std::nan("") : delay_sum / static_cast<double>(matched);
}

EvalResult evaluate(const TransducerModel& model, const std::vector<Utterance>& utts, const DecodeConfig& cfg) {
  EvalResult out;
  for (const auto& u : utts) {
    Hypothesis h = decode(model.encode(u.features), model, cfg);
    out.errors += edit_distance_wer(h.tokens, u.labels);
    if (u.ref_frames.size() == u.labels.size()) {
      const auto ref = stacked_frames(u.ref_frames, model.config().stack);
      for (auto [hi, ri] : matched_tokens(h.tokens, u.labels)) {
        out.delay_sum += static_cast<double>(h.emit_frames[hi] - ref[ri]);
        ++out.matched;
      }
    }
    h.pred_state = {};
    h.pred_out = Vec();
    out.hyps.push_back(std::move(h));
  }
  return out;
}

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'N', 'N', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ContractError("truncated checkpoint");
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string take_string(std::istream& in) {
  const auto n = take<std::uint32_t>(in);
  if (n > (1u << 24)) throw ContractError("corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw ContractError("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const TransducerModel& model, std::uint64_t step,
                     const std::string& rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, model_key_values(model.config()).dump());
  put<std::uint64_t>(out, step);
  put_string(out, rng_state);
  model.params().write(out);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw ContractError(path + ": not a checkpoint (bad magic)");
  const auto version = take<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw ContractError(path + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.model = std::make_unique<TransducerModel>(model_config_from(KeyValueConfig::parse(take_string(in), path)));
  ck.step = take<std::uint64_t>(in);
  ck.rng_state = take_string(in);
  ck.model->params().read(in);
  return ck;
}

}  // namespace rnnt
