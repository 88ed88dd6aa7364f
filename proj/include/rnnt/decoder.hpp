#pragma once

#include <limits>
#include <string>
#include <vector>

#include "rnnt/model.hpp"

namespace rnnt {

struct Hypothesis {
  LabelSeq tokens;
  Real log_prob = 0;
  NetState pred_state;
  Vec pred_out;
  std::vector<Index> emit_frames;  // zero-based encoder frame of each token
};

enum class DecodeMode { greedy, beam };
std::string to_string(DecodeMode m);
DecodeMode parse_decode_mode(const std::string& s);

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  int beam_width = 10;
  int max_symbols_per_frame = 10;

  void validate() const;
};

/// What a decoder needs from a model: per-frame label distributions given a
/// hypothesis, and a way to feed an emitted label into the prediction state.
class DecodeScorer {
 public:
  virtual ~DecodeScorer() = default;
  virtual Index num_frames() const = 0;
  virtual Hypothesis start() const = 0;
  /// log P(k | t, hypothesis) for all K labels.
  virtual Vec log_probs(Index t, const Hypothesis& hyp) const = 0;
  /// Updates pred_state/pred_out after `token` was appended.
  virtual void extend(Hypothesis& hyp, int token) const = 0;
};

/// Scores with a TransducerModel over precomputed encoder outputs.
class ModelScorer : public DecodeScorer {
 public:
  ModelScorer(const TransducerModel& model, Mat enc_outputs);

  Index num_frames() const override { return enc_.rows(); }
  Hypothesis start() const override;
  Vec log_probs(Index t, const Hypothesis& hyp) const override;
  void extend(Hypothesis& hyp, int token) const override;

  /// Prediction-network steps taken so far (start() counts as one).
  std::size_t prediction_steps() const { return steps_; }

 private:
  const TransducerModel& model_;
  Mat enc_;
  mutable std::size_t steps_ = 0;
};

/// At each frame take the argmax label (lowest id on ties); blank advances
/// the frame, anything else is emitted and the frame is revisited, up to
/// max_symbols_per_frame emissions before a forced advance.
Hypothesis greedy_decode(const DecodeScorer& scorer, int max_symbols_per_frame = 10);
Hypothesis greedy_decode(const Mat& enc_outputs, const TransducerModel& model,
                         int max_symbols_per_frame = 10);

/// Frame-synchronous beam search. Within a frame, every active hypothesis
/// proposes its blank-terminated version and its one-label extensions; the
/// best `beam_width` proposals survive, blank-terminated ones moving to the
/// next frame. Expansion stops once the next-frame set holds beam_width
/// entries none of the remaining active hypotheses can beat, or at the
/// per-frame symbol cap. Hypotheses with equal token sequences are merged
/// by log-sum-exp. Returns the n-best list, best first.
std::vector<Hypothesis> beam_decode(const DecodeScorer& scorer, const DecodeConfig& cfg);
std::vector<Hypothesis> beam_decode(const Mat& enc_outputs, const TransducerModel& model,
                                    const DecodeConfig& cfg);

/// Inserts `hyp` into `set`, merging with an entry of identical tokens by
/// log-sum-exp (the higher-scoring entry keeps its emission frames).
void merge_hypothesis(std::vector<Hypothesis>& set, Hypothesis hyp);

/// Dispatches on cfg.mode.
Hypothesis decode(const Mat& enc_outputs, const TransducerModel& model, const DecodeConfig& cfg);

struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t ref_length = 0;

  std::size_t errors() const { return substitutions + insertions + deletions; }
  /// (S+I+D)/N; 0 for an empty reference and empty hypothesis, +inf for an
  /// empty reference with a non-empty hypothesis.
  double wer() const;
  ErrorCounts& operator+=(const ErrorCounts& o);
};

ErrorCounts edit_distance_wer(const LabelSeq& hyp, const LabelSeq& ref);

/// Index pairs (hyp position, ref position) of tokens the minimum-edit
/// alignment marks as correct.
std::vector<std::pair<std::size_t, std::size_t>> matched_tokens(const LabelSeq& hyp, const LabelSeq& ref);

/// Mean of (emit frame - reference frame) over correctly aligned tokens.
/// Throws if no token matches.
double alignment_delay(const Hypothesis& hyp, const LabelSeq& ref, const std::vector<Index>& ref_frames);

/// (total encoder lookahead + mean alignment delay) * frame duration.
double reported_latency_ms(int layers, int tau, double mean_delay_frames, double frame_ms = 30.0);

}  // namespace rnnt
