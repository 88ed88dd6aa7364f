#include "rnnt/model.hpp"

namespace rnnt {

void ModelConfig::validate() const {
  require(feature_dim >= 1, "feature_dim must be >= 1");
  require(stack >= 1, "stack must be >= 1");
  require(encoder.input_dim == feature_dim * stack, "encoder input_dim must equal feature_dim * stack");
  require(vocab_size >= 2, "vocab_size must be >= 2");
  require(joint_dim >= 1, "joint_dim must be >= 1");
  encoder.validate(true);
  prediction.validate(false);
}

TransducerModel::TransducerModel(const ModelConfig& cfg)
    : cfg_((cfg.validate(), cfg)),
      encoder_(params_, "enc", cfg.encoder, cfg.feature_dim, cfg.stack),
      prediction_(params_, "pred", cfg.prediction, cfg.vocab_size),
      joint_(params_, "joint",
             JointConfig{cfg.encoder.output_dim(), cfg.prediction.output_dim(), cfg.joint_dim,
                         cfg.vocab_size, cfg.activation}) {}

void TransducerModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  encoder_.init(rng);
  prediction_.init(rng);
  joint_.init(rng);
}

Mat TransducerModel::encode(const Mat& features, Network::Cache* cache) const {
  return encoder_.forward(features, cache);
}

LossResult TransducerModel::compute_loss(std::span<const Mat> features, std::span<const LabelSeq> labels,
                                         bool backward, Real grad_scale) {
  require(features.size() == labels.size() && !features.empty(),
          "compute_loss: need one label sequence per utterance");
  const std::size_t n = features.size();
  ForwardCaches caches;
  caches.encoder.resize(n);
  caches.prediction.resize(n);
  std::vector<Mat> enc(n), pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    enc[i] = encoder_.forward(features[i], backward ? &caches.encoder[i] : nullptr);
    pred[i] = prediction_.forward(labels[i], backward ? &caches.prediction[i] : nullptr);
  }
  caches.z = joint_.combine_packed(enc, pred, backward ? &caches.joint : nullptr);
  LossWorkspace ws = forward_backward_from_logits(joint_.project_logits(caches.z), labels);

  LossResult result;
  for (std::size_t i = 0; i < n; ++i) result.per_sequence.push_back(ws.loss(i));
  result.total = ws.total_loss();
  if (!std::isfinite(result.total)) throw NumericError("non-finite RNN-T loss");

  if (backward) {
    grad_logits_merged(ws);
    PackedLattice grad = ws.release_buffer();
    if (grad_scale != 1) grad.data() *= grad_scale;
    backprop_to_networks(*this, grad, caches);
  }
  return result;
}

Real TransducerModel::log_likelihood(const Mat& features, const LabelSeq& labels) const {
  std::vector<Mat> enc{encoder_.forward(features)};
  std::vector<Mat> pred{prediction_.forward(labels)};
  const std::vector<LabelSeq> y{labels};
  LossWorkspace ws = forward_backward_from_logits(joint_.project_logits(joint_.combine_packed(enc, pred)), y);
  return -ws.loss(0);
}

void backprop_to_networks(const TransducerModel& model, const PackedLattice& grad_logits,
                          const ForwardCaches& caches) {
  const std::size_t n = grad_logits.num_sequences();
  require(caches.encoder.size() == n && caches.prediction.size() == n && caches.z.num_sequences() == n,
          "backprop_to_networks: missing forward caches");
  std::vector<Mat> grad_enc, grad_pred;
  model.joint().backward(grad_logits, caches.z, caches.joint, grad_enc, grad_pred);
  for (std::size_t i = 0; i < n; ++i) {
    model.encoder().backward(grad_enc[i], caches.encoder[i]);
    model.prediction().backward(grad_pred[i], caches.prediction[i]);
  }
}

}  // namespace rnnt
