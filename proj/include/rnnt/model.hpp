#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rnnt/joint.hpp"
#include "rnnt/loss.hpp"
#include "rnnt/nets.hpp"

namespace rnnt {

struct ModelConfig {
  Index feature_dim = 20;
  int stack = 3;
  NetConfig encoder;     // input_dim must equal feature_dim * stack
  NetConfig prediction;  // input_dim is the label embedding size
  Index joint_dim = 64;
  Index vocab_size = 21;  // K, blank included
  Activation activation = Activation::tanh;

  void validate() const;
};

/// Per-sequence forward intermediates needed by backprop_to_networks.
struct ForwardCaches {
  std::vector<Network::Cache> encoder;
  std::vector<PredictionNetwork::Cache> prediction;
  JointCache joint;
  PackedLattice z;
};

struct LossResult {
  Real total = 0;  // sum of per-sequence losses
  std::vector<Real> per_sequence;
};

/// Encoder, prediction network and joint network sharing one registry.
class TransducerModel {
 public:
  explicit TransducerModel(const ModelConfig& cfg);
  TransducerModel(const TransducerModel&) = delete;
  TransducerModel& operator=(const TransducerModel&) = delete;

  void init(std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  const Encoder& encoder() const { return encoder_; }
  const PredictionNetwork& prediction() const { return prediction_; }
  const JointNetwork& joint() const { return joint_; }

  Mat encode(const Mat& features, Network::Cache* cache = nullptr) const;

  /// Forward pass and RNN-T loss for a minibatch. With `backward`, runs the
  /// merged in-place gradient and accumulates dL/dtheta (of the summed loss,
  /// times `grad_scale`) into the registry.
  LossResult compute_loss(std::span<const Mat> features, std::span<const LabelSeq> labels,
                          bool backward, Real grad_scale = 1);

  /// log P(y | x) under the model.
  Real log_likelihood(const Mat& features, const LabelSeq& labels) const;

 private:
  ModelConfig cfg_;
  ParamRegistry params_;
  Encoder encoder_;
  PredictionNetwork prediction_;
  JointNetwork joint_;
};

/// Routes dL/dlogits back through the joint network into both recurrent
/// networks: encoder gradients at frame t sum over u, prediction gradients
/// at position u sum over t. Accumulates into the model's registry.
void backprop_to_networks(const TransducerModel& model, const PackedLattice& grad_logits,
                          const ForwardCaches& caches);

}  // namespace rnnt
