#pragma once

#include <span>
#include <vector>

#include "rnnt/joint.hpp"

namespace rnnt {

/// Log-domain forward/backward variables of one sequence. Indices are
/// zero-based: alpha(0, 0) = log 1 and beta(T-1, U) = log P(blank | T-1, U).
struct SequenceLattice {
  Mat log_alpha;  // T x (U+1)
  Mat log_beta;   // T x (U+1)
  Mat log_blank;  // T x (U+1), log P(blank | t, u)
  Mat log_emit;   // T x U, log P(y_{u+1} | t, u)
  Real log_likelihood = 0;

  Real loss() const { return -log_likelihood; }
  Index frames() const { return log_alpha.rows(); }
  Index labels() const { return log_alpha.cols() - 1; }
  /// beta with the out-of-lattice conventions applied: beta(T, U) = log 1
  /// (the terminal blank), every other out-of-range cell = log 0.
  Real beta_at(Index t, Index u) const;
};

/// Forward-backward over one lattice given only the two transition scores
/// that matter at each cell.
SequenceLattice forward_backward(Mat log_blank, Mat log_emit);

/// Buffer lifecycle of the single K-wide tensor owned by a LossWorkspace.
enum class BufferPhase { logits, posteriors, gradients };

/// Everything the loss keeps for a minibatch: per-sequence alpha/beta and a
/// single packed K-wide buffer that holds logits, then P(k|t,u) (softmax in
/// place), then dL/dlogits (merged gradient in place).
class LossWorkspace {
 public:
  LossWorkspace() = default;

  std::size_t num_sequences() const { return sequences_.size(); }
  const SequenceLattice& sequence(std::size_t n) const { return sequences_[n]; }
  const std::vector<LabelSeq>& labels() const { return labels_; }
  Real loss(std::size_t n) const { return sequences_[n].loss(); }
  Real total_loss() const;

  BufferPhase phase() const { return phase_; }
  const PackedLattice& buffer() const { return buffer_; }
  /// Moves the buffer out (typically the gradient after grad_logits_merged).
  PackedLattice release_buffer();

 private:
  friend LossWorkspace forward_backward(const PackedLattice&, std::span<const LabelSeq>);
  friend LossWorkspace forward_backward_from_logits(PackedLattice&&, std::span<const LabelSeq>);
  friend void grad_logits_merged(LossWorkspace&);

  std::vector<SequenceLattice> sequences_;
  std::vector<LabelSeq> labels_;
  PackedLattice buffer_;
  BufferPhase phase_ = BufferPhase::logits;
};

/// From packed log P(k|t,u). Rows must be normalized within 1e-6. The
/// workspace buffer receives exp(log_posteriors).
LossWorkspace forward_backward(const PackedLattice& log_posteriors, std::span<const LabelSeq> labels);

/// Training path: takes ownership of the logits lattice, applies softmax in
/// place and runs forward-backward. No other K-wide tensor is allocated.
LossWorkspace forward_backward_from_logits(PackedLattice&& logits, std::span<const LabelSeq> labels);

/// dL/dP(k|t,u) as a new K-wide lattice:
/// -alpha(t,u)/P(y|x) * {beta(t,u+1) if k = y_{u+1}; beta(t+1,u) if blank; 0}.
PackedLattice grad_posterior(const LossWorkspace& ws);

/// dL/dh(k|t,u) = P(k|t,u) alpha(t,u)/P(y|x) [beta(t,u) - {beta(t,u+1) if
/// k = y_{u+1}; beta(t+1,u) if blank; 0}], written over the posterior buffer.
/// Requires phase() == posteriors; leaves phase() == gradients.
void grad_logits_merged(LossWorkspace& ws);

/// Sums the probability of every monotone alignment path explicitly and
/// returns -log of the total. `posteriors` holds T*(U+1) rows of K
/// probabilities for one sequence, t-major.
Real brute_force_loss(const Mat& posteriors, Index frames, const LabelSeq& labels);
/// Number of alignment paths brute_force_loss enumerates: C(T-1+U, U).
std::uint64_t alignment_path_count(Index frames, Index labels);

}  // namespace rnnt
