#include "rnnt/joint.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace rnnt {

namespace {

struct AllocTable {
  std::map<Index, LatticeAllocStats> by_width;
};

AllocTable& alloc_table() {
  thread_local AllocTable table;
  return table;
}

template <typename Derived>
void apply_activation(Activation a, Eigen::MatrixBase<Derived>& x) {
  if (a == Activation::tanh) {
    x.derived().array() = x.derived().array().tanh();
  } else {
    x.derived().array() = x.derived().array().max(Real(0));
  }
}

}  // namespace

LatticeAllocStats lattice_alloc_stats(Index width) {
  auto& t = alloc_table().by_width;
  auto it = t.find(width);
  return it == t.end() ? LatticeAllocStats{} : it->second;
}

void reset_lattice_alloc_stats() {
  for (auto& [w, s] : alloc_table().by_width) {
    s.allocations = 0;
    s.bytes_allocated = 0;
    s.peak_live = s.live;
  }
}

PackedLattice::PackedLattice(std::vector<LatticeDims> dims, Index width) : dims_(std::move(dims)) {
  require(width >= 1, "lattice width must be >= 1");
  Index rows = 0;
  offsets_.reserve(dims_.size());
  for (const auto& d : dims_) {
    require(d.frames >= 1 && d.positions >= 1, "lattice needs T >= 1 and U + 1 >= 1");
    offsets_.push_back(rows);
    rows += d.cells();
  }
  data_.resize(rows, width);
  track_alloc();
}

PackedLattice::PackedLattice(const PackedLattice& other)
    : data_(other.data_), dims_(other.dims_), offsets_(other.offsets_) {
  track_alloc();
}

PackedLattice::PackedLattice(PackedLattice&& other) noexcept
    : data_(std::move(other.data_)), dims_(std::move(other.dims_)), offsets_(std::move(other.offsets_)) {
  other.data_.resize(0, 0);
}

PackedLattice& PackedLattice::operator=(const PackedLattice& other) {
  if (this != &other) {
    track_free();
    data_ = other.data_;
    dims_ = other.dims_;
    offsets_ = other.offsets_;
    track_alloc();
  }
  return *this;
}

PackedLattice& PackedLattice::operator=(PackedLattice&& other) noexcept {
  if (this != &other) {
    track_free();
    data_ = std::move(other.data_);
    dims_ = std::move(other.dims_);
    offsets_ = std::move(other.offsets_);
    other.data_.resize(0, 0);
  }
  return *this;
}

PackedLattice::~PackedLattice() { track_free(); }

void PackedLattice::track_alloc() {
  if (data_.size() == 0) return;
  auto& s = alloc_table().by_width[data_.cols()];
  ++s.allocations;
  s.bytes_allocated += static_cast<std::size_t>(data_.size()) * sizeof(Real);
  ++s.live;
  s.peak_live = std::max(s.peak_live, s.live);
}

void PackedLattice::track_free() {
  if (data_.size() == 0) return;
  auto& s = alloc_table().by_width[data_.cols()];
  if (s.live > 0) --s.live;
}

Index PackedLattice::row_index(std::size_t n, Index t, Index u) const {
  require(n < dims_.size(), "lattice sequence index out of range");
  const auto& d = dims_[n];
  require(t >= 0 && t < d.frames && u >= 0 && u < d.positions, "lattice cell out of range");
  return offsets_[n] + t * d.positions + u;
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  throw ContractError("unknown activation: " + name);
}

JointNetwork::JointNetwork(ParamRegistry& reg, const std::string& prefix, const JointConfig& cfg)
    : cfg_(cfg) {
  require(cfg.vocab_size >= 2, "joint network needs K >= 2 (blank plus one label)");
  require(cfg.joint_dim >= 1 && cfg.enc_dim >= 1 && cfg.pred_dim >= 1, "joint dims must be >= 1");
  u_ = &reg.add(prefix + ".U", cfg.joint_dim, cfg.enc_dim);
  v_ = &reg.add(prefix + ".V", cfg.joint_dim, cfg.pred_dim);
  bz_ = &reg.add(prefix + ".b_z", cfg.joint_dim, 1);
  wy_ = &reg.add(prefix + ".W_y", cfg.vocab_size, cfg.joint_dim);
  by_ = &reg.add(prefix + ".b_y", cfg.vocab_size, 1);
}

void JointNetwork::init(std::mt19937_64& rng) {
  const Real b = Real(1) / std::sqrt(static_cast<Real>(cfg_.enc_dim + cfg_.pred_dim));
  init_uniform(*u_, b, rng);
  init_uniform(*v_, b, rng);
  bz_->value.setZero();
  init_uniform(*wy_, Real(1) / std::sqrt(static_cast<Real>(cfg_.joint_dim)), rng);
  by_->value.setZero();
}

PackedLattice JointNetwork::combine_packed(const std::vector<Mat>& enc, const std::vector<Mat>& pred,
                                           JointCache* cache) const {
  require(enc.size() == pred.size() && !enc.empty(), "combine_packed: need one enc/pred pair per sequence");
  std::vector<LatticeDims> dims;
  for (std::size_t n = 0; n < enc.size(); ++n) {
    require(enc[n].cols() == cfg_.enc_dim, "combine_packed: encoder width mismatch");
    require(pred[n].cols() == cfg_.pred_dim, "combine_packed: prediction width mismatch");
    dims.push_back({enc[n].rows(), pred[n].rows()});
  }
  PackedLattice z(std::move(dims), cfg_.joint_dim);
  for (std::size_t n = 0; n < enc.size(); ++n) {
    const Mat enc_proj = enc[n] * u_->value.transpose();
    Mat pred_proj = pred[n] * v_->value.transpose();
    pred_proj.rowwise() += bz_->vec().transpose();
    const Index positions = pred[n].rows();
    auto blk = z.block(n);
    for (Index t = 0; t < enc[n].rows(); ++t) {
      auto rows = blk.middleRows(t * positions, positions);
      rows = pred_proj.rowwise() + enc_proj.row(t);
    }
    apply_activation(cfg_.activation, blk);
  }
  if (cache) {
    cache->enc = enc;
    cache->pred = pred;
  }
  return z;
}

PackedLattice JointNetwork::project_logits(const PackedLattice& z) const {
  require(z.width() == cfg_.joint_dim, "project_logits: lattice width must equal D");
  PackedLattice out(z.dims(), cfg_.vocab_size);
  out.data().noalias() = z.data() * wy_->value.transpose();
  out.data().rowwise() += by_->vec().transpose();
  return out;
}

Vec JointNetwork::logits(const Vec& enc, const Vec& pred) const {
  Vec z = u_->value * enc + v_->value * pred + bz_->vec();
  apply_activation(cfg_.activation, z);
  return wy_->value * z + by_->vec();
}

void JointNetwork::backward(const PackedLattice& grad_logits, const PackedLattice& z,
                            const JointCache& cache, std::vector<Mat>& grad_enc,
                            std::vector<Mat>& grad_pred) const {
  require(grad_logits.dims() == z.dims(), "joint backward: lattice layouts differ");
  require(cache.enc.size() == z.num_sequences(), "joint backward: missing forward cache");
  wy_->grad.noalias() += grad_logits.data().transpose() * z.data();
  by_->grad_vec() += grad_logits.data().colwise().sum().transpose();

  grad_enc.resize(z.num_sequences());
  grad_pred.resize(z.num_sequences());
  for (std::size_t n = 0; n < z.num_sequences(); ++n) {
    const auto& d = z.dims()[n];
    Mat da = grad_logits.block(n) * wy_->value;  // dL/dz
    const auto zb = z.block(n);
    if (cfg_.activation == Activation::tanh) {
      da.array() *= Real(1) - zb.array().square();
    } else {
      da.array() *= (zb.array() > Real(0)).template cast<Real>();
    }
    Mat d_enc_proj = Mat::Zero(d.frames, cfg_.joint_dim);
    Mat d_pred_proj = Mat::Zero(d.positions, cfg_.joint_dim);
    for (Index t = 0; t < d.frames; ++t) {
      const auto rows = da.middleRows(t * d.positions, d.positions);
      d_enc_proj.row(t) = rows.colwise().sum();
      d_pred_proj += rows;
    }
    u_->grad.noalias() += d_enc_proj.transpose() * cache.enc[n];
    v_->grad.noalias() += d_pred_proj.transpose() * cache.pred[n];
    bz_->grad_vec() += d_pred_proj.colwise().sum().transpose();
    grad_enc[n] = d_enc_proj * u_->value;
    grad_pred[n] = d_pred_proj * v_->value;
  }
}

Mat combine_broadcast_reference(const JointNetwork& joint, const std::vector<Mat>& enc,
                                const std::vector<Mat>& pred) {
  Index max_t = 0, max_p = 0;
  for (std::size_t n = 0; n < enc.size(); ++n) {
    max_t = std::max(max_t, enc[n].rows());
    max_p = std::max(max_p, pred[n].rows());
  }
  const auto& cfg = joint.config();
  const auto n_seq = static_cast<Index>(enc.size());
  // Padded inputs, as a framework would hold them.
  std::vector<Mat> enc_pad(enc.size(), Mat::Zero(max_t, cfg.enc_dim));
  std::vector<Mat> pred_pad(enc.size(), Mat::Zero(max_p, cfg.pred_dim));
  for (std::size_t n = 0; n < enc.size(); ++n) {
    enc_pad[n].topRows(enc[n].rows()) = enc[n];
    pred_pad[n].topRows(pred[n].rows()) = pred[n];
  }
  Mat out(n_seq * max_t * max_p, cfg.joint_dim);
  for (Index n = 0; n < n_seq; ++n) {
    for (Index t = 0; t < max_t; ++t) {
      for (Index u = 0; u < max_p; ++u) {
        const auto ni = static_cast<std::size_t>(n);
        Vec z = joint.enc_proj().value * enc_pad[ni].row(t).transpose() +
                joint.pred_proj().value * pred_pad[ni].row(u).transpose() + joint.joint_bias().vec();
        z = cfg.activation == Activation::tanh ? Vec(z.array().tanh()) : Vec(z.array().max(Real(0)));
        out.row((n * max_t + t) * max_p + u) = z.transpose();
      }
    }
  }
  return out;
}

std::string to_string(Layout l) { return l == Layout::packed ? "packed" : "broadcast"; }
std::string to_string(LossVariant v) { return v == LossVariant::merged ? "merged" : "chain_rule"; }

Layout parse_layout(const std::string& s) {
  if (s == "packed") return Layout::packed;
  if (s == "broadcast") return Layout::broadcast;
  throw ContractError("unknown layout: " + s);
}

LossVariant parse_loss_variant(const std::string& s) {
  if (s == "merged") return LossVariant::merged;
  if (s == "chain_rule") return LossVariant::chain_rule;
  throw ContractError("unknown loss variant: " + s);
}

namespace {

std::uint64_t lattice_cells(const BatchSpec& spec, Layout layout) {
  std::uint64_t cells = 0;
  if (layout == Layout::packed) {
    for (const auto& d : spec.sequences) cells += static_cast<std::uint64_t>(d.cells());
    return cells;
  }
  Index max_t = 0, max_p = 0;
  for (const auto& d : spec.sequences) {
    max_t = std::max(max_t, d.frames);
    max_p = std::max(max_p, d.positions);
  }
  return static_cast<std::uint64_t>(spec.sequences.size()) * static_cast<std::uint64_t>(max_t) *
         static_cast<std::uint64_t>(max_p);
}

}  // namespace

std::uint64_t footprint(const BatchSpec& spec, Layout layout, LatticeStage stage) {
  const auto width = static_cast<std::uint64_t>(stage == LatticeStage::z ? spec.joint_dim : spec.vocab_size);
  return lattice_cells(spec, layout) * width * spec.bytes_per_scalar;
}

std::uint64_t modeled_peak_bytes(const BatchSpec& spec, Layout layout, LossVariant variant) {
  const std::uint64_t k_tensors = variant == LossVariant::merged ? 1 : 3;
  return footprint(spec, layout, LatticeStage::z) + k_tensors * footprint(spec, layout, LatticeStage::logits);
}

LengthDistribution LengthDistribution::builtin(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> frames(30, 400);
  std::normal_distribution<double> jitter(0.0, 2.0);
  LengthDistribution d;
  for (int i = 0; i < 1000; ++i) {
    const Index t = frames(rng);
    const auto u = static_cast<Index>(std::max(1.0, std::round(static_cast<double>(t) / 8.0 + jitter(rng))));
    d.samples.emplace_back(t, u);
  }
  return d;
}

LengthDistribution LengthDistribution::equal(Index frames, Index labels) {
  return {{{frames, labels}}};
}

Index max_batch(const LengthDistribution& dist, const MaxBatchQuery& q) {
  require(q.budget_bytes > 0, "max_batch: budget must be positive");
  require(!dist.samples.empty(), "max_batch: empty length distribution");
  std::mt19937_64 rng(q.seed);
  std::uniform_int_distribution<std::size_t> pick(0, dist.samples.size() - 1);
  const std::uint64_t per_cell =
      (static_cast<std::uint64_t>(q.joint_dim) +
       (q.variant == LossVariant::merged ? 1u : 3u) * static_cast<std::uint64_t>(q.vocab_size)) *
      q.bytes_per_scalar;
  std::uint64_t packed_cells = 0;
  Index max_t = 0, max_p = 0;
  Index n = 0;
  while (n < q.limit) {
    const auto& [t, u] = dist.samples[pick(rng)];
    std::uint64_t cells;
    if (q.layout == Layout::packed) {
      cells = packed_cells + static_cast<std::uint64_t>(t * (u + 1));
    } else {
      cells = static_cast<std::uint64_t>(n + 1) * static_cast<std::uint64_t>(std::max(max_t, t)) *
              static_cast<std::uint64_t>(std::max(max_p, u + 1));
    }
    if (cells * per_cell > q.budget_bytes) break;
    packed_cells += static_cast<std::uint64_t>(t * (u + 1));
    max_t = std::max(max_t, t);
    max_p = std::max(max_p, u + 1);
    ++n;
  }
  return n;
}

}  // namespace rnnt
