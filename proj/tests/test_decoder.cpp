#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "rnnt/decoder.hpp"
#include "support/reference.hpp"

using namespace rnnt;
using namespace rnnt::testing;

namespace {

/// Label distributions looked up by (frame, emitted tokens); anything not
/// in the table falls back to `fallback`.
class TableScorer : public DecodeScorer {
 public:
  using Fn = std::function<Vec(Index, const LabelSeq&)>;
  TableScorer(Index frames, Fn fn) : frames_(frames), fn_(std::move(fn)) {}

  Index num_frames() const override { return frames_; }
  Hypothesis start() const override { return {}; }
  Vec log_probs(Index t, const Hypothesis& h) const override {
    const Vec p = fn_(t, h.tokens);
    return p.array().log().matrix();
  }
  void extend(Hypothesis&, int) const override { ++extends; }

  mutable std::size_t extends = 0;

 private:
  Index frames_;
  Fn fn_;
};

Vec probs(std::initializer_list<Real> v) {
  Vec p(static_cast<Index>(v.size()));
  Index i = 0;
  for (Real x : v) p(i++) = x;
  return p;
}

/// Deterministic pseudo-random distribution per (t, prefix).
TableScorer::Fn random_table(Index vocab, std::uint64_t seed, Real blank_bias = 0) {
  return [=](Index t, const LabelSeq& y) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(t) * 1315423911ull;
    for (int k : y) h = h * 31 + static_cast<std::uint64_t>(k) + 7;
    std::mt19937_64 rng(h);
    std::uniform_real_distribution<Real> u(0, 3);
    Vec logits(vocab);
    for (Index k = 0; k < vocab; ++k) logits(k) = u(rng);
    logits(0) += blank_bias;
    return softmax(logits);
  };
}

std::unique_ptr<TransducerModel> random_model(std::uint64_t seed, Index vocab = 5) {
  auto m = std::make_unique<TransducerModel>(tiny_model_config(CellKind::lt_gru, 2, 0, vocab, 4));
  m->init(seed);
  std::mt19937_64 rng(seed + 1);
  m->joint().out_proj().value *= 4;
  m->joint().out_bias().value = random_matrix(vocab, 1, rng, 1);
  return m;
}

}  // namespace

TEST_CASE("always-blank model decodes to nothing") {
  TableScorer s(5, [](Index, const LabelSeq&) { return probs({0.9, 0.05, 0.05}); });
  const Hypothesis g = greedy_decode(s);
  CHECK(g.tokens.empty());
  CHECK(g.emit_frames.empty());
  CHECK(std::abs(g.log_prob - 5 * std::log(0.9)) < 1e-12);
  DecodeConfig cfg;
  cfg.mode = DecodeMode::beam;
  CHECK(beam_decode(s, cfg).front().tokens.empty());
}

TEST_CASE("greedy emits then advances on blank") {
  TableScorer s(1, [](Index, const LabelSeq& y) {
    return y.empty() ? probs({0.2, 0.1, 0.7}) : probs({0.6, 0.3, 0.1});
  });
  const Hypothesis g = greedy_decode(s);
  CHECK(g.tokens == LabelSeq{2});
  CHECK(g.emit_frames == std::vector<Index>{0});
  CHECK(std::abs(g.log_prob - std::log(0.7 * 0.6)) < 1e-12);
}

TEST_CASE("greedy breaks ties toward the lowest id") {
  TableScorer s(1, [](Index, const LabelSeq& y) {
    return y.empty() ? probs({0.2, 0.4, 0.4}) : probs({1.0, 0.0, 0.0});
  });
  CHECK(greedy_decode(s).tokens == LabelSeq{1});
}

TEST_CASE("symbol cap forces an advance") {
  TableScorer s(3, [](Index, const LabelSeq&) { return probs({0.1, 0.9}); });
  const Hypothesis g = greedy_decode(s, 4);
  CHECK(g.tokens.size() == 12);
  CHECK(s.extends == 12);
  for (std::size_t i = 0; i < 12; ++i) CHECK(g.emit_frames[i] == static_cast<Index>(i / 4));
  CHECK(std::abs(g.log_prob - (12 * std::log(0.9) + 3 * std::log(0.1))) < 1e-10);
  DecodeConfig cfg;
  cfg.mode = DecodeMode::beam;
  cfg.beam_width = 3;
  cfg.max_symbols_per_frame = 4;
  for (const auto& h : beam_decode(s, cfg)) CHECK(h.tokens.size() <= 12);
}

TEST_CASE("beam width one equals greedy") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Index vocab = 2 + static_cast<Index>(seed % 5);
    TableScorer s(1 + static_cast<Index>(seed % 7), random_table(vocab, seed, seed % 3 == 0 ? 1.5 : 0));
    DecodeConfig cfg;
    cfg.mode = DecodeMode::beam;
    cfg.beam_width = 1;
    cfg.max_symbols_per_frame = 1 + static_cast<int>(seed % 3);
    const Hypothesis g = greedy_decode(s, cfg.max_symbols_per_frame);
    const Hypothesis b = beam_decode(s, cfg).front();
    CHECK(b.tokens == g.tokens);
    CHECK(b.emit_frames == g.emit_frames);
    CHECK(std::abs(b.log_prob - g.log_prob) < 1e-12);
  }
}

TEST_CASE("beam width one equals greedy on a network model") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto model = random_model(seed);
    std::mt19937_64 rng(seed);
    const Mat enc = model->encode(random_matrix(6, 2, rng));
    DecodeConfig cfg;
    cfg.mode = DecodeMode::beam;
    cfg.beam_width = 1;
    const Hypothesis g = greedy_decode(enc, *model);
    const Hypothesis b = beam_decode(enc, *model, cfg).front();
    CHECK(b.tokens == g.tokens);
    CHECK(b.log_prob == doctest::Approx(g.log_prob).epsilon(1e-12));
  }
}

TEST_CASE("beam finds a delayed emission that greedy misses") {
  // Emitting 1 at frame 0 looks best locally; waiting and emitting 2 at
  // frame 1 has the higher total.
  TableScorer s(2, [](Index t, const LabelSeq& y) {
    if (t == 0 && y.empty()) return probs({0.40, 0.45, 0.15});
    if (t == 0 && y == LabelSeq{1}) return probs({0.50, 0.25, 0.25});
    if (t == 1 && y.empty()) return probs({0.05, 0.05, 0.90});
    if (t == 1) return probs({0.90, 0.05, 0.05});
    return probs({0.6, 0.2, 0.2});
  });
  const Hypothesis g = greedy_decode(s);
  CHECK(g.tokens == LabelSeq{1});
  DecodeConfig cfg;
  cfg.mode = DecodeMode::beam;
  cfg.beam_width = 4;
  const Hypothesis b = beam_decode(s, cfg).front();
  CHECK(b.tokens == LabelSeq{2});
  CHECK(b.emit_frames == std::vector<Index>{1});
  CHECK(b.log_prob > g.log_prob);
}

TEST_CASE("merging sums probabilities") {
  std::vector<Hypothesis> set;
  Hypothesis a;
  a.tokens = {1, 2};
  a.log_prob = -1.5;
  a.emit_frames = {0, 1};
  Hypothesis b = a;
  b.log_prob = -0.7;
  b.emit_frames = {1, 1};
  merge_hypothesis(set, a);
  merge_hypothesis(set, b);
  REQUIRE(set.size() == 1);
  CHECK(std::abs(set[0].log_prob - std::log(std::exp(-1.5) + std::exp(-0.7))) < 1e-12);
  CHECK(set[0].emit_frames == std::vector<Index>{1, 1});
  Hypothesis c = a;
  c.tokens = {2, 1};
  merge_hypothesis(set, c);
  CHECK(set.size() == 2);
}

TEST_CASE("beam output is well formed and no worse than greedy") {
  int better_or_equal = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    TableScorer s(2 + static_cast<Index>(seed % 5), random_table(4, seed + 1000, 1.0));
    DecodeConfig cfg;
    cfg.mode = DecodeMode::beam;
    cfg.beam_width = 5;
    const auto nbest = beam_decode(s, cfg);
    REQUIRE(!nbest.empty());
    CHECK(nbest.size() <= 5);
    for (std::size_t i = 1; i < nbest.size(); ++i) {
      CHECK(nbest[i - 1].log_prob >= nbest[i].log_prob);
      CHECK(nbest[i - 1].tokens != nbest[i].tokens);
    }
    for (const auto& h : nbest) {
      CHECK(h.tokens.size() == h.emit_frames.size());
      CHECK(std::is_sorted(h.emit_frames.begin(), h.emit_frames.end()));
    }
    ++total;
    if (nbest.front().log_prob >= greedy_decode(s).log_prob - 1e-12) ++better_or_equal;
  }
  CHECK(better_or_equal == total);
}

TEST_CASE("model scorer counts prediction steps") {
  const auto model = random_model(3);
  std::mt19937_64 rng(4);
  const Mat enc = model->encode(random_matrix(5, 2, rng));
  ModelScorer s(*model, enc);
  const Hypothesis g = greedy_decode(s, 2);
  CHECK(s.prediction_steps() == g.tokens.size() + 1);
  CHECK(g.tokens.size() <= 5 * 2);
  CHECK(decode(enc, *model, DecodeConfig{}).tokens == g.tokens);
}

TEST_CASE("decode config validation") {
  DecodeConfig c;
  c.beam_width = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  c.beam_width = 1;
  c.max_symbols_per_frame = 0;
  CHECK_THROWS_AS(c.validate(), ContractError);
  CHECK(parse_decode_mode("beam") == DecodeMode::beam);
  CHECK_THROWS_AS(parse_decode_mode("viterbi"), ContractError);
}

TEST_CASE("edit distance examples") {
  const ErrorCounts same = edit_distance_wer({1, 2, 3}, {1, 2, 3});
  CHECK(same.errors() == 0);
  CHECK(same.wer() == 0);
  const ErrorCounts del = edit_distance_wer({}, {1, 2, 3, 4});
  CHECK(del.deletions == 4);
  CHECK(del.wer() == 1.0);
  const ErrorCounts sub = edit_distance_wer({1, 2, 3}, {1, 9, 3});
  CHECK(sub.substitutions == 1);
  CHECK(sub.insertions == 0);
  CHECK(sub.deletions == 0);
  CHECK(std::abs(sub.wer() - 1.0 / 3) < 1e-15);
  const ErrorCounts ins = edit_distance_wer({1, 5, 2}, {1, 2});
  CHECK(ins.insertions == 1);
  CHECK(ins.errors() == 1);
  CHECK(edit_distance_wer({}, {}).wer() == 0);
  CHECK(std::isinf(edit_distance_wer({1}, {}).wer()));
}

TEST_CASE("edit distance matches a plain Levenshtein oracle") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> len(0, 7), tok(1, 3);
  for (int trial = 0; trial < 300; ++trial) {
    LabelSeq a, b;
    for (int i = len(rng); i > 0; --i) a.push_back(tok(rng));
    for (int i = len(rng); i > 0; --i) b.push_back(tok(rng));
    std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1));
    for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
    for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= a.size(); ++i)
      for (std::size_t j = 1; j <= b.size(); ++j)
        d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1])});
    const ErrorCounts c = edit_distance_wer(a, b);
    CHECK(static_cast<int>(c.errors()) == d[a.size()][b.size()]);
    CHECK(c.ref_length == b.size());
    CHECK(c.deletions + c.substitutions + matched_tokens(a, b).size() == b.size());
    CHECK(c.insertions + c.substitutions + matched_tokens(a, b).size() == a.size());
  }
}

TEST_CASE("alignment delay") {
  Hypothesis h;
  h.tokens = {3, 4, 5};
  h.emit_frames = {2, 5, 9};
  CHECK(alignment_delay(h, {3, 4, 5}, {2, 5, 9}) == 0);
  CHECK(alignment_delay(h, {3, 4, 5}, {0, 3, 7}) == 2.0);
  CHECK(alignment_delay(h, {3, 4, 5}, {4, 6, 10}) < 0);
  CHECK(alignment_delay(h, {3, 9, 5}, {1, 4, 8}) == 1.0);
  CHECK_THROWS_AS(alignment_delay(h, {7, 8}, {1, 2}), ContractError);
  CHECK_THROWS_AS(alignment_delay(h, {3}, {1, 2}), ContractError);
}

TEST_CASE("reported latency arithmetic") {
  CHECK(reported_latency_ms(6, 4, 2) == 780.0);
  CHECK(reported_latency_ms(6, 0, 10) == 300.0);
  CHECK(reported_latency_ms(2, 1, 0.5, 10) == 25.0);
}
