#pragma once

#include <random>
#include <vector>

#include "rnnt/loss.hpp"
#include "rnnt/model.hpp"

namespace rnnt::testing {

/// dL/dlogits by composing the posterior gradient with the softmax
/// Jacobian: dL/dh_k = P_k (g_k - sum_j P_j g_j). Allocates the posterior
/// gradient and the result as separate K-wide lattices.
PackedLattice chain_rule_grad_logits(const LossWorkspace& ws);

/// Random row-normalized posteriors for one sequence, T*(U+1) rows of K.
Mat random_posteriors(Index frames, Index labels, Index vocab, std::mt19937_64& rng);
LabelSeq random_labels(Index count, Index vocab, std::mt19937_64& rng);
Mat random_matrix(Index rows, Index cols, std::mt19937_64& rng, Real scale = 1);

/// Packs one sequence's posterior rows into a single-sequence log lattice.
PackedLattice pack_log(const Mat& posteriors, Index frames, Index labels);
PackedLattice pack_rows(const std::vector<Mat>& blocks, const std::vector<LatticeDims>& dims);

/// A fully random small loss instance.
struct LossInstance {
  Index frames, labels, vocab;
  Mat posteriors;
  LabelSeq y;
};
LossInstance random_instance(std::mt19937_64& rng, Index max_frames = 4, Index max_labels = 3,
                             Index max_vocab = 4);

/// Tiny transducer for gradient checks and rigged decodes.
ModelConfig tiny_model_config(CellKind encoder_kind = CellKind::ln_gru, int encoder_layers = 2,
                              int tau = 0, Index vocab = 3, Index joint_dim = 3);

}  // namespace rnnt::testing
