#include "support/reference.hpp"

namespace rnnt::testing {

PackedLattice chain_rule_grad_logits(const LossWorkspace& ws) {
  require(ws.phase() == BufferPhase::posteriors, "chain rule reference needs posteriors");
  const PackedLattice gp = grad_posterior(ws);
  const PackedLattice& p = ws.buffer();
  PackedLattice out(p.dims(), p.width());
  for (Index r = 0; r < p.rows(); ++r) {
    const Real dot = p.data().row(r).dot(gp.data().row(r));
    out.data().row(r) = p.data().row(r).array() * (gp.data().row(r).array() - dot);
  }
  return out;
}

Mat random_posteriors(Index frames, Index labels, Index vocab, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Mat p(frames * (labels + 1), vocab);
  for (Index r = 0; r < p.rows(); ++r) {
    for (Index k = 0; k < vocab; ++k) p(r, k) = static_cast<Real>(u(rng));
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

LabelSeq random_labels(Index count, Index vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(1, static_cast<int>(vocab - 1));
  LabelSeq y;
  for (Index i = 0; i < count; ++i) y.push_back(d(rng));
  return y;
}

Mat random_matrix(Index rows, Index cols, std::mt19937_64& rng, Real scale) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * static_cast<Real>(u(rng));
  return m;
}

PackedLattice pack_log(const Mat& posteriors, Index frames, Index labels) {
  PackedLattice lat({{frames, labels + 1}}, posteriors.cols());
  lat.data() = posteriors.array().log().matrix();
  return lat;
}

PackedLattice pack_rows(const std::vector<Mat>& blocks, const std::vector<LatticeDims>& dims) {
  PackedLattice lat(dims, blocks.front().cols());
  for (std::size_t n = 0; n < blocks.size(); ++n) lat.block(n) = blocks[n];
  return lat;
}

LossInstance random_instance(std::mt19937_64& rng, Index max_frames, Index max_labels, Index max_vocab) {
  LossInstance in;
  in.frames = std::uniform_int_distribution<Index>(1, max_frames)(rng);
  in.labels = std::uniform_int_distribution<Index>(0, max_labels)(rng);
  in.vocab = std::uniform_int_distribution<Index>(2, max_vocab)(rng);
  in.posteriors = random_posteriors(in.frames, in.labels, in.vocab, rng);
  in.y = random_labels(in.labels, in.vocab, rng);
  return in;
}

ModelConfig tiny_model_config(CellKind encoder_kind, int encoder_layers, int tau, Index vocab, Index joint_dim) {
  ModelConfig m;
  m.feature_dim = 2;
  m.stack = 1;
  m.vocab_size = vocab;
  m.joint_dim = joint_dim;
  m.encoder.kind = encoder_kind;
  m.encoder.num_layers = encoder_layers;
  m.encoder.hidden = 3;
  m.encoder.projection = uses_lstm(encoder_kind) ? 2 : 0;
  m.encoder.tau = tau;
  m.encoder.input_dim = 2;
  m.prediction.kind = CellKind::ln_gru;
  m.prediction.num_layers = 1;
  m.prediction.hidden = 3;
  m.prediction.input_dim = 2;
  return m;
}

}  // namespace rnnt::testing
