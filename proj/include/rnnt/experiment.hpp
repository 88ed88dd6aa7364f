#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rnnt/config.hpp"

namespace rnnt {

/// The corpus at cfg.data_dir, or the synthetic task generated in memory.
Corpus load_or_generate(const RunConfig& cfg);

struct TrainedModel {
  std::unique_ptr<TransducerModel> model;
  std::vector<EpochLog> epochs;
  std::uint64_t steps = 0;
  std::string rng_state;
  double seconds = 0;
};

/// Initializes a model from cfg.seed and fits it on corpus.train, scoring
/// corpus.dev after every epoch.
TrainedModel train_from_config(const RunConfig& cfg, const Corpus& corpus, const TrainHooks& hooks = {});

struct TauPoint {
  int tau = 0;
  std::uint64_t seed = 0;
  double token_error = 0;
  double mean_delay = 0;  // encoder frames; NaN if nothing matched
};

/// Trains one model per (tau, seed) with the encoder lookahead overridden
/// and scores each on corpus.test. Jobs run on up to `workers` threads;
/// results come back in (tau, seed) order whatever the worker count.
std::vector<TauPoint> sweep_tau(const RunConfig& base, const Corpus& corpus, const std::vector<int>& taus,
                                const std::vector<std::uint64_t>& seeds, int workers);

}  // namespace rnnt
