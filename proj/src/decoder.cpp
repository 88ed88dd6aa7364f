#include "rnnt/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace rnnt {

std::string to_string(DecodeMode m) { return m == DecodeMode::greedy ? "greedy" : "beam"; }

DecodeMode parse_decode_mode(const std::string& s) {
  if (s == "greedy") return DecodeMode::greedy;
  if (s == "beam") return DecodeMode::beam;
  throw ContractError("unknown decode mode: " + s);
}

void DecodeConfig::validate() const {
  require(beam_width >= 1, "beam_width must be >= 1");
  require(max_symbols_per_frame >= 1, "max_symbols_per_frame must be >= 1");
}

ModelScorer::ModelScorer(const TransducerModel& model, Mat enc_outputs)
    : model_(model), enc_(std::move(enc_outputs)) {
  require(enc_.rows() >= 1, "decoding needs at least one encoder frame");
}

Hypothesis ModelScorer::start() const {
  Hypothesis h;
  h.pred_out = model_.prediction().start(h.pred_state);
  ++steps_;
  return h;
}

Vec ModelScorer::log_probs(Index t, const Hypothesis& hyp) const {
  Vec logits = model_.joint().logits(enc_.row(t).transpose(), hyp.pred_out);
  const Real z = log_sum_exp(logits);
  return logits.array() - z;
}

void ModelScorer::extend(Hypothesis& hyp, int token) const {
  hyp.pred_out = model_.prediction().advance(hyp.pred_state, token);
  ++steps_;
}

Hypothesis greedy_decode(const DecodeScorer& scorer, int max_symbols_per_frame) {
  require(max_symbols_per_frame >= 1, "max_symbols_per_frame must be >= 1");
  Hypothesis hyp = scorer.start();
  for (Index t = 0; t < scorer.num_frames(); ++t) {
    int emitted = 0;
    while (true) {
      const Vec lp = scorer.log_probs(t, hyp);
      Index best = 0;
      lp.maxCoeff(&best);
      if (best == kBlank || emitted == max_symbols_per_frame) {
        hyp.log_prob += lp(kBlank);
        break;
      }
      hyp.log_prob += lp(best);
      hyp.tokens.push_back(static_cast<int>(best));
      hyp.emit_frames.push_back(t);
      scorer.extend(hyp, static_cast<int>(best));
      ++emitted;
    }
  }
  return hyp;
}

Hypothesis greedy_decode(const Mat& enc_outputs, const TransducerModel& model, int max_symbols_per_frame) {
  return greedy_decode(ModelScorer(model, enc_outputs), max_symbols_per_frame);
}

void merge_hypothesis(std::vector<Hypothesis>& set, Hypothesis hyp) {
  for (auto& h : set) {
    if (h.tokens != hyp.tokens) continue;
    const Real merged = log_sum_exp(h.log_prob, hyp.log_prob);
    if (hyp.log_prob > h.log_prob) h.emit_frames = std::move(hyp.emit_frames);
    h.log_prob = merged;
    return;
  }
  set.push_back(std::move(hyp));
}

namespace {

struct Proposal {
  std::size_t source;
  int token;
  Real score;
};

// Higher score first; ties go to the lower label id, then the earlier source.
bool proposal_before(const Proposal& a, const Proposal& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token != b.token) return a.token < b.token;
  return a.source < b.source;
}

bool hypothesis_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<Hypothesis> beam_decode(const DecodeScorer& scorer, const DecodeConfig& cfg) {
  cfg.validate();
  const auto width = static_cast<std::size_t>(cfg.beam_width);
  std::vector<Hypothesis> beam{scorer.start()};

  for (Index t = 0; t < scorer.num_frames(); ++t) {
    std::vector<Hypothesis> active = std::move(beam);
    std::vector<Hypothesis> next;
    for (int step = 0; step <= cfg.max_symbols_per_frame && !active.empty(); ++step) {
      const bool may_emit = step < cfg.max_symbols_per_frame;
      std::vector<Proposal> proposals;
      for (std::size_t i = 0; i < active.size(); ++i) {
        const Vec lp = scorer.log_probs(t, active[i]);
        proposals.push_back({i, kBlank, active[i].log_prob + lp(kBlank)});
        if (!may_emit) continue;
        for (Index k = 1; k < lp.size(); ++k)
          proposals.push_back({i, static_cast<int>(k), active[i].log_prob + lp(k)});
      }
      const std::size_t keep = std::min(width, proposals.size());
      std::partial_sort(proposals.begin(), proposals.begin() + static_cast<std::ptrdiff_t>(keep),
                        proposals.end(), proposal_before);

      std::vector<Hypothesis> grown;
      for (std::size_t p = 0; p < keep; ++p) {
        const Proposal& pr = proposals[p];
        Hypothesis h = active[pr.source];
        h.log_prob = pr.score;
        if (pr.token == kBlank) {
          merge_hypothesis(next, std::move(h));
        } else {
          h.tokens.push_back(pr.token);
          h.emit_frames.push_back(t);
          scorer.extend(h, pr.token);
          merge_hypothesis(grown, std::move(h));
        }
      }
      active = std::move(grown);
      if (active.empty() || next.size() < width) continue;
      std::sort(next.begin(), next.end(), hypothesis_before);
      Real best_active = -std::numeric_limits<Real>::infinity();
      for (const auto& h : active) best_active = std::max(best_active, h.log_prob);
      if (best_active <= next[width - 1].log_prob) break;
    }
    std::sort(next.begin(), next.end(), hypothesis_before);
    if (next.size() > width) next.resize(width);
    beam = std::move(next);
  }
  return beam;
}

std::vector<Hypothesis> beam_decode(const Mat& enc_outputs, const TransducerModel& model,
                                    const DecodeConfig& cfg) {
  return beam_decode(ModelScorer(model, enc_outputs), cfg);
}

Hypothesis decode(const Mat& enc_outputs, const TransducerModel& model, const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.mode == DecodeMode::greedy) return greedy_decode(enc_outputs, model, cfg.max_symbols_per_frame);
  return beam_decode(enc_outputs, model, cfg).front();
}

double ErrorCounts::wer() const {
  if (ref_length == 0) return errors() == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return static_cast<double>(errors()) / static_cast<double>(ref_length);
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  substitutions += o.substitutions;
  insertions += o.insertions;
  deletions += o.deletions;
  ref_length += o.ref_length;
  return *this;
}

namespace {

enum class Op { match, sub, ins, del };

// Levenshtein table plus a backtrace preferring match/sub, then del, then ins.
std::vector<Op> align(const LabelSeq& hyp, const LabelSeq& ref) {
  const std::size_t h = hyp.size(), r = ref.size();
  std::vector<std::vector<std::size_t>> d(h + 1, std::vector<std::size_t>(r + 1));
  for (std::size_t i = 0; i <= h; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= r; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= h; ++i)
    for (std::size_t j = 1; j <= r; ++j)
      d[i][j] = std::min({d[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1), d[i - 1][j] + 1, d[i][j - 1] + 1});
  std::vector<Op> ops;
  std::size_t i = h, j = r;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1)) {
      ops.push_back(hyp[i - 1] == ref[j - 1] ? Op::match : Op::sub);
      --i;
      --j;
    } else if (j > 0 && d[i][j] == d[i][j - 1] + 1) {
      ops.push_back(Op::del);
      --j;
    } else {
      ops.push_back(Op::ins);
      --i;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

}  // namespace

ErrorCounts edit_distance_wer(const LabelSeq& hyp, const LabelSeq& ref) {
  ErrorCounts c;
  c.ref_length = ref.size();
  for (Op op : align(hyp, ref)) {
    if (op == Op::sub) ++c.substitutions;
    if (op == Op::ins) ++c.insertions;
    if (op == Op::del) ++c.deletions;
  }
  return c;
}

std::vector<std::pair<std::size_t, std::size_t>> matched_tokens(const LabelSeq& hyp, const LabelSeq& ref) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0, j = 0;
  for (Op op : align(hyp, ref)) {
    switch (op) {
      case Op::match: out.emplace_back(i++, j++); break;
      case Op::sub: ++i; ++j; break;
      case Op::ins: ++i; break;
      case Op::del: ++j; break;
    }
  }
  return out;
}

double alignment_delay(const Hypothesis& hyp, const LabelSeq& ref, const std::vector<Index>& ref_frames) {
  require(ref.size() == ref_frames.size(), "alignment_delay: one reference frame per reference token");
  require(hyp.tokens.size() == hyp.emit_frames.size(), "alignment_delay: hypothesis lacks emission frames");
  const auto pairs = matched_tokens(hyp.tokens, ref);
  if (pairs.empty()) throw ContractError("alignment_delay: no matched tokens");
  double sum = 0;
  for (auto [h, r] : pairs) sum += static_cast<double>(hyp.emit_frames[h] - ref_frames[r]);
  return sum / static_cast<double>(pairs.size());
}

double reported_latency_ms(int layers, int tau, double mean_delay_frames, double frame_ms) {
  require(layers >= 1 && tau >= 0, "latency needs layers >= 1 and tau >= 0");
  return (static_cast<double>(layers * tau) + mean_delay_frames) * frame_ms;
}

}  // namespace rnnt
