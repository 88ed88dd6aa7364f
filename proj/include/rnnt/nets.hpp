#pragma once

#include <random>
#include <string>
#include <vector>

#include "rnnt/cells.hpp"

namespace rnnt {

enum class CellKind { ln_lstm, lt_lstm, clt_lstm, ln_gru, lt_gru, eclt_gru };

std::string to_string(CellKind kind);
CellKind parse_cell_kind(const std::string& name);
bool uses_lstm(CellKind kind);
/// lt_* and *clt_*: time cells plus a per-column depth scan.
bool is_trajectory(CellKind kind);
/// clt_lstm and eclt_gru: depth inputs come from a lookahead embedding.
bool is_contextual(CellKind kind);

/// Starting values of the lookahead weights. `identity` passes the current
/// frame and closes every future tap; `average` weights the current and
/// future frames equally.
enum class LookaheadInit { identity, average };
std::string to_string(LookaheadInit init);
LookaheadInit parse_lookahead_init(const std::string& name);

struct NetConfig {
  CellKind kind = CellKind::ln_gru;
  int num_layers = 1;
  Index hidden = 32;
  Index projection = 0;  // LSTM kinds only; 0 means "same as hidden"
  int tau = 0;           // lookahead frames per layer, contextual kinds only
  LookaheadInit lookahead_init = LookaheadInit::identity;
  Index input_dim = 0;

  Index output_dim() const;
  /// Throws ContractError on an inconsistent configuration. Contextual
  /// kinds are rejected unless `encoder` is set.
  void validate(bool encoder) const;
};

/// Closed-form scalar count of a network built from `cfg`.
std::size_t count_parameters(const NetConfig& cfg);

/// Time-cell states, one per layer. Depth cells carry no state across time.
struct NetState {
  std::vector<CellState> layers;
};

/// A stack of recurrent layers in one of six arrangements:
///  - plain stacks (ln_lstm, ln_gru) return the top time-cell output;
///  - layer-trajectory nets (lt_*) scan each time column with depth cells,
///    g[l] = depth(prev = h[l], input = g[l-1], cell = d[l-1]), returning g[L];
///  - contextual nets (clt_lstm, eclt_gru) feed depth layer l the lookahead
///    embedding zeta[l-1](t) = sum_{d=0..tau} G_d g[l-1](t+d) (elementwise q_d
///    for eclt_gru) and return zeta[L]. Frames past the end contribute zeros.
/// Sequences are matrices with one row per time step.
class Network {
 public:
  struct Cache {
    Index frames = 0;
    std::vector<std::vector<Cell::Cache>> time;   // [layer][t]
    std::vector<std::vector<Cell::Cache>> depth;  // [layer][t]
    std::vector<Mat> depth_out;                   // g per layer, for the lookahead backward
  };

  Network() = default;
  Network(ParamRegistry& reg, const std::string& prefix, const NetConfig& cfg, bool encoder);

  void init(std::mt19937_64& rng);
  const NetConfig& config() const { return cfg_; }

  /// Dispatches on the configured kind.
  Mat forward(const Mat& x, Cache* cache = nullptr) const;
  Mat forward_stack(const Mat& x, Cache* cache = nullptr) const;
  Mat forward_lt(const Mat& x, Cache* cache = nullptr) const;
  Mat forward_clt(const Mat& x, Cache* cache = nullptr) const;

  /// Reverse of forward(); accumulates parameter gradients and returns dL/dx.
  Mat backward(const Mat& grad_out, const Cache& cache) const;

  /// Runs one depth column given the time-cell outputs h[0..L-1] at a frame.
  /// Only meaningful for lt_* kinds.
  Vec depth_column(const std::vector<Vec>& time_outputs) const;

  /// Streaming interface for non-contextual nets.
  NetState initial_state() const;
  Vec step(const Vec& x, NetState& state) const;

  const Cell& time_cell(int layer) const { return time_[static_cast<std::size_t>(layer)]; }
  const Cell& depth_cell(int layer) const { return depth_[static_cast<std::size_t>(layer)]; }
  /// Lookahead weight applied to g[boundary] at offset delta; boundary in [1, L].
  Param& lookahead(int boundary, int delta) const;

 private:
  Mat run_time_layers(const Mat& x, std::vector<Mat>& outputs, Cache* cache) const;
  Mat apply_lookahead(int boundary, const Mat& g) const;
  Mat lookahead_backward(int boundary, const Mat& g, const Mat& grad_zeta) const;
  Mat run_depth(const std::vector<Mat>& time_out, bool contextual, Cache* cache) const;

  NetConfig cfg_;
  std::vector<Cell> time_;
  std::vector<Cell> depth_;
  std::vector<std::vector<Param*>> look_;  // [boundary-1][delta]
};

/// Label-side network: a learned embedding (one row per non-blank label)
/// feeding a non-contextual Network. Position u = 0 sees the zero vector.
class PredictionNetwork {
 public:
  struct Cache {
    Network::Cache net;
    LabelSeq labels;
  };

  PredictionNetwork() = default;
  PredictionNetwork(ParamRegistry& reg, const std::string& prefix, const NetConfig& cfg,
                    Index vocab_size);

  void init(std::mt19937_64& rng);
  const Network& net() const { return net_; }
  Index vocab_size() const { return vocab_; }
  Index output_dim() const { return net_.config().output_dim(); }

  /// Returns U+1 rows: outputs after the start symbol and after each label.
  Mat forward(const LabelSeq& labels, Cache* cache = nullptr) const;
  void backward(const Mat& grad_out, const Cache& cache) const;

  Vec embed(int token) const;
  /// Output at u = 0 with a fresh state.
  Vec start(NetState& state) const;
  /// Feeds one emitted label and returns the next output.
  Vec advance(NetState& state, int token) const;

  Param& embedding() const { return *embedding_; }

 private:
  void check_token(int token) const;

  Network net_;
  Param* embedding_ = nullptr;
  Index vocab_ = 0;
};

/// Stacks `stack` consecutive feature rows into one frame (stride `stack`,
/// zero-padding the tail).
Mat stack_frames(const Mat& features, int stack);
Index stacked_length(Index raw_frames, int stack);

/// Acoustic-side network: frame stacking followed by a Network.
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParamRegistry& reg, const std::string& prefix, const NetConfig& cfg,
          Index feature_dim, int stack);

  void init(std::mt19937_64& rng) { net_.init(rng); }
  const Network& net() const { return net_; }
  int stack() const { return stack_; }
  Index feature_dim() const { return feature_dim_; }
  Index output_dim() const { return net_.config().output_dim(); }

  Mat forward(const Mat& features, Network::Cache* cache = nullptr) const;
  void backward(const Mat& grad_out, const Network::Cache& cache) const;

 private:
  Network net_;
  Index feature_dim_ = 0;
  int stack_ = 1;
};

}  // namespace rnnt
