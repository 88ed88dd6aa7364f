#include <doctest.h>

#include <random>

#include "rnnt/joint.hpp"
#include "support/reference.hpp"

using namespace rnnt;
using rnnt::testing::random_matrix;

namespace {

struct JointFixture {
  ParamRegistry reg;
  JointNetwork joint;
  JointFixture(Index fe, Index fp, Index d, Index k, Activation act, std::uint64_t seed)
      : joint(reg, "j", JointConfig{fe, fp, d, k, act}) {
    std::mt19937_64 rng(seed);
    joint.init(rng);
    joint.joint_bias().value = random_matrix(d, 1, rng, 0.5);
    joint.out_bias().value = random_matrix(k, 1, rng, 0.5);
  }
};

BatchSpec random_spec(std::mt19937_64& rng) {
  BatchSpec s;
  const int n = std::uniform_int_distribution<int>(1, 6)(rng);
  std::uniform_int_distribution<Index> t(1, 12), u(0, 6);
  for (int i = 0; i < n; ++i) s.sequences.push_back({t(rng), u(rng) + 1});
  s.joint_dim = std::uniform_int_distribution<Index>(1, 32)(rng);
  s.vocab_size = std::uniform_int_distribution<Index>(2, 64)(rng);
  s.bytes_per_scalar = 8;
  return s;
}

}  // namespace

TEST_CASE("packed lattice indexing") {
  PackedLattice lat({{3, 3}, {5, 5}}, 4);
  CHECK(lat.rows() == 34);
  CHECK(lat.data().size() == 136);
  CHECK(lat.offsets() == std::vector<Index>{0, 9});
  CHECK(lat.row_index(0, 2, 1) == 7);
  CHECK(lat.row_index(1, 1, 3) == 9 + 5 + 3);
  CHECK_THROWS_AS(lat.row_index(0, 3, 0), ContractError);
  CHECK_THROWS_AS(lat.row_index(1, 0, 5), ContractError);
  CHECK_THROWS_AS(PackedLattice({{0, 2}}, 3), ContractError);
}

TEST_CASE("combine_packed equals the broadcast reference") {
  std::mt19937_64 rng(1);
  for (Activation act : {Activation::tanh, Activation::relu}) {
    for (int trial = 0; trial < 20; ++trial) {
      JointFixture fx(3, 4, 5, 6, act, 100 + static_cast<std::uint64_t>(trial));
      std::vector<Mat> enc, pred;
      std::vector<LatticeDims> dims;
      const int n = 1 + trial % 4;
      for (int i = 0; i < n; ++i) {
        const Index t = std::uniform_int_distribution<Index>(1, 6)(rng);
        const Index u = std::uniform_int_distribution<Index>(0, 4)(rng);
        enc.push_back(random_matrix(t, 3, rng));
        pred.push_back(random_matrix(u + 1, 4, rng));
        dims.push_back({t, u + 1});
      }
      const PackedLattice z = fx.joint.combine_packed(enc, pred);
      const Mat ref = combine_broadcast_reference(fx.joint, enc, pred);
      Index max_t = 0, max_p = 0;
      for (auto d : dims) {
        max_t = std::max(max_t, d.frames);
        max_p = std::max(max_p, d.positions);
      }
      CHECK(ref.rows() == n * max_t * max_p);
      Real worst = 0;
      for (std::size_t s = 0; s < dims.size(); ++s)
        for (Index t = 0; t < dims[s].frames; ++t)
          for (Index u = 0; u < dims[s].positions; ++u) {
            const Index r = (static_cast<Index>(s) * max_t + t) * max_p + u;
            worst = std::max(worst, (z.row(s, t, u) - ref.row(r)).cwiseAbs().maxCoeff());
          }
      CHECK(worst <= 1e-12);
    }
  }
}

TEST_CASE("combine_packed small cases") {
  JointFixture fx(2, 2, 3, 4, Activation::tanh, 2);
  std::mt19937_64 rng(3);
  SUBCASE("zero projections and bias give zeros") {
    fx.joint.enc_proj().value.setZero();
    fx.joint.pred_proj().value.setZero();
    fx.joint.joint_bias().value.setZero();
    CHECK(fx.joint.combine_packed({random_matrix(3, 2, rng)}, {random_matrix(2, 2, rng)}).data().isZero(0));
  }
  SUBCASE("smallest lattice") {
    const Mat e = random_matrix(1, 2, rng), p = random_matrix(1, 2, rng);
    const PackedLattice z = fx.joint.combine_packed({e}, {p});
    CHECK(z.rows() == 1);
    const Vec expect = (fx.joint.enc_proj().value * e.row(0).transpose() +
                        fx.joint.pred_proj().value * p.row(0).transpose() + fx.joint.joint_bias().value)
                           .array()
                           .tanh()
                           .matrix();
    CHECK((z.row(0, 0, 0).transpose() - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("zero output weights give the bias in every row") {
    fx.joint.out_proj().value.setZero();
    const PackedLattice h =
        fx.joint.project_logits(fx.joint.combine_packed({random_matrix(3, 2, rng)}, {random_matrix(2, 2, rng)}));
    for (Index r = 0; r < h.rows(); ++r) CHECK(h.data().row(r).transpose() == fx.joint.out_bias().value);
  }
  SUBCASE("identity output weights pass z through") {
    JointFixture id(2, 2, 2, 2, Activation::tanh, 4);
    id.joint.out_proj().value.setIdentity();
    const PackedLattice z = id.joint.combine_packed({random_matrix(2, 2, rng)}, {random_matrix(3, 2, rng)});
    const PackedLattice h = id.joint.project_logits(z);
    for (Index r = 0; r < h.rows(); ++r)
      CHECK((h.data().row(r) - z.data().row(r) - id.joint.out_bias().value.transpose()).cwiseAbs().maxCoeff() <
            1e-15);
  }
  SUBCASE("mismatched inputs are rejected") {
    CHECK_THROWS_AS(fx.joint.combine_packed({random_matrix(3, 3, rng)}, {random_matrix(2, 2, rng)}), ContractError);
    CHECK_THROWS_AS(fx.joint.combine_packed({random_matrix(3, 2, rng)}, {}), ContractError);
    PackedLattice wrong({{1, 1}}, 5);
    CHECK_THROWS_AS(fx.joint.project_logits(wrong), ContractError);
  }
}

TEST_CASE("joint backward passes finite-difference checks") {
  std::mt19937_64 rng(5);
  for (Activation act : {Activation::tanh, Activation::relu}) {
    JointFixture fx(3, 2, 4, 5, act, 6);
    const std::vector<Mat> enc{random_matrix(3, 3, rng), random_matrix(2, 3, rng)};
    const std::vector<Mat> pred{random_matrix(2, 2, rng), random_matrix(4, 2, rng)};
    const PackedLattice w_lat = [&] {
      PackedLattice w({{3, 2}, {2, 4}}, 5);
      w.data() = random_matrix(w.rows(), 5, rng);
      return w;
    }();
    std::vector<Mat> ge, gp;
    auto loss = [&](const std::vector<Mat>& e, const std::vector<Mat>& p, bool acc) {
      JointCache cache;
      const PackedLattice z = fx.joint.combine_packed(e, p, acc ? &cache : nullptr);
      const PackedLattice h = fx.joint.project_logits(z);
      if (acc) fx.joint.backward(w_lat, z, cache, ge, gp);
      return h.data().cwiseProduct(w_lat.data()).sum();
    };
    CHECK(grad_check(fx.reg, [&](bool acc) { return loss(enc, pred, acc); }).max_rel_error < 1e-5);
    CHECK(ge.size() == 2);
    CHECK(ge[0].rows() == 3);
    CHECK(ge[0].cols() == 3);
    CHECK(gp[1].rows() == 4);
    const Real h = 1e-6;
    for (std::size_t s = 0; s < 2; ++s) {
      for (Index i = 0; i < enc[s].size(); ++i) {
        auto ep = enc, em = enc;
        ep[s].data()[i] += h;
        em[s].data()[i] -= h;
        CHECK(ge[s].data()[i] == doctest::Approx((loss(ep, pred, false) - loss(em, pred, false)) / (2 * h)).epsilon(1e-6));
      }
      for (Index i = 0; i < pred[s].size(); ++i) {
        auto pp = pred, pm = pred;
        pp[s].data()[i] += h;
        pm[s].data()[i] -= h;
        CHECK(gp[s].data()[i] == doctest::Approx((loss(enc, pp, false) - loss(enc, pm, false)) / (2 * h)).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("footprint examples") {
  BatchSpec s{{{3, 3}, {5, 5}}, 4, 10, 8};
  CHECK(footprint(s, Layout::packed, LatticeStage::z) == 1088);
  CHECK(footprint(s, Layout::broadcast, LatticeStage::z) == 1600);
  CHECK(footprint(s, Layout::packed, LatticeStage::z) / 8 == 136);
  CHECK(footprint(s, Layout::broadcast, LatticeStage::z) / 8 == 200);
  CHECK(footprint(s, Layout::packed, LatticeStage::logits) == 34 * 10 * 8);
  BatchSpec eq{{{4, 3}, {4, 3}, {4, 3}}, 7, 9, 4};
  CHECK(footprint(eq, Layout::packed, LatticeStage::z) == footprint(eq, Layout::broadcast, LatticeStage::z));
}

TEST_CASE("packed footprint never exceeds broadcast") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const BatchSpec s = random_spec(rng);
    bool all_equal = true;
    for (auto d : s.sequences) all_equal = all_equal && d == s.sequences.front();
    for (LatticeStage st : {LatticeStage::z, LatticeStage::logits}) {
      const auto p = footprint(s, Layout::packed, st), b = footprint(s, Layout::broadcast, st);
      CHECK(p <= b);
      CHECK((p == b) == all_equal);
    }
  }
}

TEST_CASE("allocation counters match the modeled packed bytes") {
  std::mt19937_64 rng(8);
  JointFixture fx(3, 2, 6, 11, Activation::tanh, 9);
  const std::vector<Mat> enc{random_matrix(4, 3, rng), random_matrix(2, 3, rng)};
  const std::vector<Mat> pred{random_matrix(3, 2, rng), random_matrix(1, 2, rng)};
  reset_lattice_alloc_stats();
  const PackedLattice z = fx.joint.combine_packed(enc, pred);
  BatchSpec s{{{4, 3}, {2, 1}}, 6, 11, sizeof(Real)};
  CHECK(lattice_alloc_stats(6).allocations == 1);
  CHECK(lattice_alloc_stats(6).bytes_allocated == footprint(s, Layout::packed, LatticeStage::z));
  const PackedLattice h = fx.joint.project_logits(z);
  CHECK(lattice_alloc_stats(11).bytes_allocated == footprint(s, Layout::packed, LatticeStage::logits));
  CHECK(lattice_alloc_stats(11).live == 1);
}

TEST_CASE("packed lattice copies count, moves do not") {
  reset_lattice_alloc_stats();
  PackedLattice a({{2, 2}}, 13);
  PackedLattice b = a;
  CHECK(lattice_alloc_stats(13).allocations == 2);
  CHECK(lattice_alloc_stats(13).live == 2);
  PackedLattice c = std::move(a);
  CHECK(lattice_alloc_stats(13).allocations == 2);
  CHECK(lattice_alloc_stats(13).live == 2);
  { PackedLattice d = std::move(b); }
  CHECK(lattice_alloc_stats(13).live == 1);
  CHECK(lattice_alloc_stats(13).peak_live == 2);
}

TEST_CASE("max_batch is monotone in the budget") {
  const auto dist = LengthDistribution::builtin();
  for (Layout l : {Layout::broadcast, Layout::packed})
    for (LossVariant v : {LossVariant::chain_rule, LossVariant::merged}) {
      MaxBatchQuery q;
      q.layout = l;
      q.variant = v;
      Index prev = 0;
      for (std::uint64_t budget = 1ull << 24; budget <= 1ull << 33; budget *= 2) {
        q.budget_bytes = budget;
        const Index n = max_batch(dist, q);
        CHECK(n >= prev);
        prev = n;
      }
      CHECK(prev > 0);
    }
}

TEST_CASE("max_batch returns zero below one sequence") {
  MaxBatchQuery q;
  q.budget_bytes = 1000;
  CHECK(max_batch(LengthDistribution::builtin(), q) == 0);
  q.budget_bytes = 0;
  CHECK_THROWS_AS(max_batch(LengthDistribution::builtin(), q), ContractError);
}

TEST_CASE("max_batch closed form on equal lengths") {
  const Index t = 50, u = 6, d = 640;
  const auto dist = LengthDistribution::equal(t, u);
  for (Index k : {Index(4096), Index(36000)}) {
    for (std::uint64_t budget : {std::uint64_t(1) << 30, std::uint64_t(3) << 31}) {
      MaxBatchQuery q;
      q.vocab_size = k;
      q.joint_dim = d;
      q.budget_bytes = budget;
      const std::uint64_t cells = static_cast<std::uint64_t>(t * (u + 1));
      const std::uint64_t merged = cells * static_cast<std::uint64_t>(d + k) * 4;
      const std::uint64_t chain = cells * static_cast<std::uint64_t>(d + 3 * k) * 4;
      q.variant = LossVariant::merged;
      const Index nm = max_batch(dist, q);
      q.variant = LossVariant::chain_rule;
      const Index nc = max_batch(dist, q);
      CHECK(nm == static_cast<Index>(budget / merged));
      CHECK(nc == static_cast<Index>(budget / chain));
      q.layout = Layout::broadcast;
      CHECK(max_batch(dist, q) == nc);
      if (nc >= 20) {
        const double bound = static_cast<double>(d + 3 * k) / static_cast<double>(d + k);
        CHECK(static_cast<double>(nm) / static_cast<double>(nc) >= bound * (1 - 1.0 / static_cast<double>(nc)));
      }
    }
  }
}

TEST_CASE("larger vocabularies shrink the batch") {
  const auto dist = LengthDistribution::builtin();
  for (std::uint64_t budget : {std::uint64_t(16) << 30, std::uint64_t(64) << 30}) {
    auto run = [&](Index k, LossVariant v, Layout l) {
      MaxBatchQuery q;
      q.vocab_size = k;
      q.budget_bytes = budget;
      q.variant = v;
      q.layout = l;
      return max_batch(dist, q);
    };
    const Index m4 = run(4096, LossVariant::merged, Layout::packed);
    const Index c4 = run(4096, LossVariant::chain_rule, Layout::broadcast);
    const Index m36 = run(36000, LossVariant::merged, Layout::packed);
    const Index c36 = run(36000, LossVariant::chain_rule, Layout::broadcast);
    CHECK(m36 < m4);
    CHECK(c36 < c4);
    CHECK(m4 > c4);
    CHECK(m36 > c36);
  }
}

TEST_CASE("merged advantage grows with the vocabulary once batches are large") {
  auto ratio = [](const LengthDistribution& dist, Index k, std::uint64_t budget, Layout chain_layout) {
    MaxBatchQuery q;
    q.vocab_size = k;
    q.budget_bytes = budget;
    const double m = static_cast<double>(max_batch(dist, q));
    q.variant = LossVariant::chain_rule;
    q.layout = chain_layout;
    return m / static_cast<double>(max_batch(dist, q));
  };
  const auto equal = LengthDistribution::equal(50, 6);
  for (std::uint64_t gb : {16, 64, 256}) {
    CHECK(ratio(equal, 36000, gb << 30, Layout::packed) > ratio(equal, 4096, gb << 30, Layout::packed));
  }
  const auto speech = LengthDistribution::builtin();
  for (std::uint64_t gb : {512, 1024, 4096}) {
    CHECK(ratio(speech, 36000, gb << 30, Layout::broadcast) > ratio(speech, 4096, gb << 30, Layout::broadcast));
  }
}

TEST_CASE("layout and variant names round trip") {
  for (Layout l : {Layout::broadcast, Layout::packed}) CHECK(parse_layout(to_string(l)) == l);
  for (LossVariant v : {LossVariant::chain_rule, LossVariant::merged}) CHECK(parse_loss_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_layout("sparse"), ContractError);
}
