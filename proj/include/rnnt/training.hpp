#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rnnt/decoder.hpp"
#include "rnnt/model.hpp"
#include "rnnt/synthetic.hpp"

namespace rnnt {

enum class OptimizerKind { sgd, adam };
enum class ShuffleMode { random, sorted };
std::string to_string(OptimizerKind k);
std::string to_string(ShuffleMode m);
OptimizerKind parse_optimizer(const std::string& s);
ShuffleMode parse_shuffle(const std::string& s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  int epochs = 10;
  Index batch_budget = 4000;  // max lattice cells sum T_n (U_n + 1) per batch
  ShuffleMode shuffle = ShuffleMode::random;
  bool sorted_first_epoch = false;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Indices into a corpus split.
struct Minibatch {
  std::vector<std::size_t> indices;
  Index lattice_cells = 0;
};

/// Lattice cells one utterance occupies: stacked frames times (U + 1).
Index lattice_cells(const Utterance& u, int stack);

/// Splits `utts` into batches of at most `budget` lattice cells. Random mode
/// permutes with a generator seeded by `seed`; sorted mode orders by frames
/// then label count. Throws ContractError naming any utterance that alone
/// exceeds the budget.
std::vector<Minibatch> make_batches(const std::vector<Utterance>& utts, Index budget, ShuffleMode mode,
                                    std::uint64_t seed, int stack);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update from the registry's gradient buffers.
  virtual void step(ParamRegistry& params) = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate);

struct StepLog {
  std::uint64_t step;
  int epoch;
  double loss;       // mean per-utterance loss of the batch
  double grad_norm;  // before clipping
};

struct EpochLog {
  int epoch;
  double mean_loss;
  double dev_token_error;  // NaN without a dev set
};

struct TrainHooks {
  std::function<void(const StepLog&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Single-writer trainer. The shuffle generator and the step counter are
/// the only state besides the model, and both go into checkpoints.
class Trainer {
 public:
  Trainer(TransducerModel& model, const TrainConfig& cfg);

  /// Forward, merged backward, clip, update. Returns the batch log.
  StepLog train_step(const std::vector<Utterance>& utts, const Minibatch& batch, int epoch);
  EpochLog run_epoch(const std::vector<Utterance>& train, const std::vector<Utterance>* dev, int epoch,
                     const TrainHooks& hooks = {});
  std::vector<EpochLog> fit(const std::vector<Utterance>& train, const std::vector<Utterance>* dev,
                            const TrainHooks& hooks = {});

  std::uint64_t steps() const { return steps_; }
  std::string rng_state() const;
  void set_rng_state(const std::string& state);
  void set_steps(std::uint64_t s) { steps_ = s; }

 private:
  TransducerModel& model_;
  TrainConfig cfg_;
  std::unique_ptr<Optimizer> opt_;
  std::mt19937_64 rng_;
  std::uint64_t steps_ = 0;
};

struct EvalResult {
  ErrorCounts errors;
  double delay_sum = 0;       // encoder frames, over matched tokens
  std::size_t matched = 0;
  std::vector<Hypothesis> hyps;

  double token_error() const { return errors.wer(); }
  /// NaN when nothing matched.
  double mean_delay() const;
};

/// Decodes every utterance and scores it against its labels; reference
/// frames are mapped to encoder frames with the model's stacking factor.
EvalResult evaluate(const TransducerModel& model, const std::vector<Utterance>& utts, const DecodeConfig& cfg);

struct Checkpoint {
  std::unique_ptr<TransducerModel> model;
  std::uint64_t step = 0;
  std::string rng_state;
};

/// Binary layout: magic "RNNTCKPT", u32 version, model config text, u64 step,
/// RNG state text, parameters. Strings are u32 length plus bytes.
void save_checkpoint(const std::string& path, const TransducerModel& model, std::uint64_t step,
                     const std::string& rng_state);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace rnnt
