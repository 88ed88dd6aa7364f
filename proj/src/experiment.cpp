#include "rnnt/experiment.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <mutex>
#include <thread>

namespace rnnt {

Corpus load_or_generate(const RunConfig& cfg) {
  if (!cfg.data_dir.empty()) return load_corpus(cfg.data_dir);
  return gen_synthetic(cfg.task);
}

TrainedModel train_from_config(const RunConfig& cfg, const Corpus& corpus, const TrainHooks& hooks) {
  TrainedModel out;
  out.model = std::make_unique<TransducerModel>(cfg.model);
  out.model->init(cfg.seed);
  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  Trainer trainer(*out.model, tc);
  const auto start = std::chrono::steady_clock::now();
  out.epochs = trainer.fit(corpus.train, corpus.dev.empty() ? nullptr : &corpus.dev, hooks);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.steps = trainer.steps();
  out.rng_state = trainer.rng_state();
  return out;
}

std::vector<TauPoint> sweep_tau(const RunConfig& base, const Corpus& corpus, const std::vector<int>& taus,
                                const std::vector<std::uint64_t>& seeds, int workers) {
  require(!taus.empty() && !seeds.empty(), "sweep_tau: need at least one tau and one seed");
  require(workers >= 1, "sweep_tau: workers must be at least 1");
  require(is_contextual(base.model.encoder.kind), "sweep_tau: encoder kind must have lookahead");
  for (int t : taus) require(t >= 0, "sweep_tau: tau must be non-negative");

  std::vector<TauPoint> points;
  for (int t : taus)
    for (std::uint64_t s : seeds) points.push_back({t, s, 0, 0});

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      try {
        RunConfig cfg = base;
        cfg.model.encoder.tau = points[i].tau;
        cfg.seed = points[i].seed;
        const TrainedModel tm = train_from_config(cfg, corpus);
        const EvalResult r = evaluate(*tm.model, corpus.test, base.decode);
        points[i].token_error = r.token_error();
        points[i].mean_delay = r.mean_delay();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(workers), points.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return points;
}

}  // namespace rnnt
