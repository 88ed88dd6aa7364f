#include "rnnt/loss.hpp"

#include <cmath>
#include <functional>
#include <limits>

namespace rnnt {

namespace {

constexpr Real kLogZero = -std::numeric_limits<Real>::infinity();

void check_labels(const LabelSeq& labels, Index vocab) {
  for (int y : labels) {
    require(y != kBlank, "blank id inside a label sequence");
    require(y >= 1 && y < vocab, "label id out of range: " + std::to_string(y));
  }
}

void check_layout(const PackedLattice& lattice, std::span<const LabelSeq> labels) {
  require(lattice.num_sequences() == labels.size(), "one label sequence per lattice block required");
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto& d = lattice.dims()[n];
    require(d.frames >= 1, "loss needs T >= 1");
    require(d.positions == static_cast<Index>(labels[n].size()) + 1,
            "lattice positions must equal U + 1");
    check_labels(labels[n], lattice.width());
  }
}

}  // namespace

Real SequenceLattice::beta_at(Index t, Index u) const {
  const Index frames = log_beta.rows();
  const Index last = log_beta.cols() - 1;
  if (t == frames && u == last) return 0;
  if (t >= frames || u > last) return kLogZero;
  return log_beta(t, u);
}

SequenceLattice forward_backward(Mat log_blank, Mat log_emit) {
  const Index frames = log_blank.rows();
  const Index positions = log_blank.cols();
  require(frames >= 1, "forward_backward: T must be >= 1");
  require(positions >= 1 && log_emit.rows() == frames && log_emit.cols() == positions - 1,
          "forward_backward: emission scores must be T x U");
  const Index last = positions - 1;

  SequenceLattice s;
  s.log_alpha.setConstant(frames, positions, kLogZero);
  s.log_beta.setConstant(frames, positions, kLogZero);
  auto& a = s.log_alpha;
  auto& b = s.log_beta;

  for (Index t = 0; t < frames; ++t) {
    for (Index u = 0; u < positions; ++u) {
      if (t == 0 && u == 0) {
        a(0, 0) = 0;
        continue;
      }
      Real v = kLogZero;
      if (t > 0) v = a(t - 1, u) + log_blank(t - 1, u);
      if (u > 0) v = log_sum_exp(v, a(t, u - 1) + log_emit(t, u - 1));
      a(t, u) = v;
    }
  }
  for (Index t = frames; t-- > 0;) {
    for (Index u = positions; u-- > 0;) {
      if (t == frames - 1 && u == last) {
        b(t, u) = log_blank(t, u);
        continue;
      }
      Real v = kLogZero;
      if (t + 1 < frames) v = b(t + 1, u) + log_blank(t, u);
      if (u < last) v = log_sum_exp(v, b(t, u + 1) + log_emit(t, u));
      b(t, u) = v;
    }
  }
  s.log_likelihood = a(frames - 1, last) + log_blank(frames - 1, last);
  s.log_blank = std::move(log_blank);
  s.log_emit = std::move(log_emit);
  return s;
}

Real LossWorkspace::total_loss() const {
  Real sum = 0;
  for (const auto& s : sequences_) sum += s.loss();
  return sum;
}

PackedLattice LossWorkspace::release_buffer() { return std::move(buffer_); }

LossWorkspace forward_backward(const PackedLattice& log_posteriors, std::span<const LabelSeq> labels) {
  check_layout(log_posteriors, labels);
  const Mat& lp = log_posteriors.data();
  for (Index r = 0; r < lp.rows(); ++r) {
    const Real mass = lp.row(r).array().exp().sum();
    require(std::abs(mass - 1) <= Real(1e-6), "posteriors must be normalized per (t, u)");
  }
  LossWorkspace ws;
  ws.labels_.assign(labels.begin(), labels.end());
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto& d = log_posteriors.dims()[n];
    const auto& y = labels[n];
    Mat blank(d.frames, d.positions);
    Mat emit(d.frames, d.positions - 1);
    for (Index t = 0; t < d.frames; ++t) {
      for (Index u = 0; u < d.positions; ++u) {
        const auto row = log_posteriors.row(n, t, u);
        blank(t, u) = row(kBlank);
        if (u + 1 < d.positions) emit(t, u) = row(y[static_cast<std::size_t>(u)]);
      }
    }
    ws.sequences_.push_back(forward_backward(std::move(blank), std::move(emit)));
  }
  ws.buffer_ = log_posteriors;
  ws.buffer_.data().array() = ws.buffer_.data().array().exp();
  ws.phase_ = BufferPhase::posteriors;
  return ws;
}

LossWorkspace forward_backward_from_logits(PackedLattice&& logits, std::span<const LabelSeq> labels) {
  check_layout(logits, labels);
  LossWorkspace ws;
  ws.labels_.assign(labels.begin(), labels.end());
  ws.buffer_ = std::move(logits);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const auto& d = ws.buffer_.dims()[n];
    const auto& y = labels[n];
    Mat blank(d.frames, d.positions);
    Mat emit(d.frames, d.positions - 1);
    for (Index t = 0; t < d.frames; ++t) {
      for (Index u = 0; u < d.positions; ++u) {
        auto row = ws.buffer_.row(n, t, u);
        const Real h_blank = row(kBlank);
        const Real h_label = u + 1 < d.positions ? row(y[static_cast<std::size_t>(u)]) : 0;
        const Real log_z = softmax_in_place(row);
        blank(t, u) = h_blank - log_z;
        if (u + 1 < d.positions) emit(t, u) = h_label - log_z;
      }
    }
    ws.sequences_.push_back(forward_backward(std::move(blank), std::move(emit)));
  }
  ws.phase_ = BufferPhase::posteriors;
  return ws;
}

PackedLattice grad_posterior(const LossWorkspace& ws) {
  require(ws.phase() != BufferPhase::logits, "grad_posterior: forward-backward has not run");
  const PackedLattice& buf = ws.buffer();
  PackedLattice grad(buf.dims(), buf.width());
  grad.data().setZero();
  for (std::size_t n = 0; n < ws.num_sequences(); ++n) {
    const auto& s = ws.sequence(n);
    const auto& y = ws.labels()[n];
    for (Index t = 0; t < s.frames(); ++t) {
      for (Index u = 0; u <= s.labels(); ++u) {
        const Real common = s.log_alpha(t, u) - s.log_likelihood;
        auto row = grad.row(n, t, u);
        row(kBlank) = -std::exp(common + s.beta_at(t + 1, u));
        if (u < s.labels()) row(y[static_cast<std::size_t>(u)]) = -std::exp(common + s.beta_at(t, u + 1));
      }
    }
  }
  return grad;
}

void grad_logits_merged(LossWorkspace& ws) {
  require(ws.phase_ == BufferPhase::posteriors,
          "grad_logits_merged: buffer does not hold posteriors (already converted?)");
  for (std::size_t n = 0; n < ws.num_sequences(); ++n) {
    const auto& s = ws.sequences_[n];
    const auto& y = ws.labels_[n];
    for (Index t = 0; t < s.frames(); ++t) {
      for (Index u = 0; u <= s.labels(); ++u) {
        const Real common = s.log_alpha(t, u) - s.log_likelihood;
        auto row = ws.buffer_.row(n, t, u);
        row *= std::exp(common + s.log_beta(t, u));
        row(kBlank) -= std::exp(common + s.log_blank(t, u) + s.beta_at(t + 1, u));
        if (u < s.labels())
          row(y[static_cast<std::size_t>(u)]) -= std::exp(common + s.log_emit(t, u) + s.beta_at(t, u + 1));
      }
    }
  }
  ws.phase_ = BufferPhase::gradients;
}

std::uint64_t alignment_path_count(Index frames, Index labels) {
  require(frames >= 1 && labels >= 0, "alignment_path_count: need T >= 1, U >= 0");
  // C(T-1+U, U), computed incrementally to stay exact.
  std::uint64_t c = 1;
  for (Index i = 1; i <= labels; ++i)
    c = c * static_cast<std::uint64_t>(frames - 1 + i) / static_cast<std::uint64_t>(i);
  return c;
}

Real brute_force_loss(const Mat& posteriors, Index frames, const LabelSeq& labels) {
  const auto last = static_cast<Index>(labels.size());
  require(frames >= 1, "brute_force_loss: T must be >= 1");
  require(posteriors.rows() == frames * (last + 1), "brute_force_loss: need T*(U+1) posterior rows");
  check_labels(labels, posteriors.cols());
  require(alignment_path_count(frames, last) <= 5'000'000, "brute_force_loss: instance too large");

  auto prob = [&](Index t, Index u, int k) { return posteriors(t * (last + 1) + u, k); };
  // Walk every path explicitly; each leaf contributes the product of its
  // transition probabilities and the final blank.
  double total = 0;
  std::function<void(Index, Index, double)> walk = [&](Index t, Index u, double p) {
    if (t == frames - 1 && u == last) {
      total += p * prob(t, u, kBlank);
      return;
    }
    if (t + 1 < frames) walk(t + 1, u, p * prob(t, u, kBlank));
    if (u < last) walk(t, u + 1, p * prob(t, u, labels[static_cast<std::size_t>(u)]));
  };
  walk(0, 0, 1.0);
  return static_cast<Real>(-std::log(total));
}

}  // namespace rnnt
