#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rnnt/params.hpp"

namespace rnnt {

/// Lattice extent of one sequence: T frames by U+1 prediction positions.
struct LatticeDims {
  Index frames = 0;
  Index positions = 0;

  Index cells() const { return frames * positions; }
  bool operator==(const LatticeDims&) const = default;
};

/// Live/peak counters for lattice buffers of one row width.
struct LatticeAllocStats {
  std::size_t allocations = 0;
  std::size_t bytes_allocated = 0;
  std::size_t live = 0;
  std::size_t peak_live = 0;
};

/// Per-thread counters fed by every PackedLattice buffer allocation.
LatticeAllocStats lattice_alloc_stats(Index width);
/// Clears allocation totals and sets every peak to the current live count.
void reset_lattice_alloc_stats();

/// Per-sequence T_n x (U_n + 1) row blocks of a fixed width, concatenated.
/// Row (n, t, u) lives at offset(n) + t * (U_n + 1) + u. No padding.
class PackedLattice {
 public:
  PackedLattice() = default;
  PackedLattice(std::vector<LatticeDims> dims, Index width);
  PackedLattice(const PackedLattice& other);
  PackedLattice(PackedLattice&& other) noexcept;
  PackedLattice& operator=(const PackedLattice& other);
  PackedLattice& operator=(PackedLattice&& other) noexcept;
  ~PackedLattice();

  std::size_t num_sequences() const { return dims_.size(); }
  const std::vector<LatticeDims>& dims() const { return dims_; }
  const std::vector<Index>& offsets() const { return offsets_; }
  Index width() const { return data_.cols(); }
  Index rows() const { return data_.rows(); }

  Index row_index(std::size_t n, Index t, Index u) const;
  auto row(std::size_t n, Index t, Index u) { return data_.row(row_index(n, t, u)); }
  auto row(std::size_t n, Index t, Index u) const { return data_.row(row_index(n, t, u)); }
  /// All rows of sequence n, ordered t-major.
  auto block(std::size_t n) { return data_.middleRows(offsets_[n], dims_[n].cells()); }
  auto block(std::size_t n) const { return data_.middleRows(offsets_[n], dims_[n].cells()); }

  Mat& data() { return data_; }
  const Mat& data() const { return data_; }

 private:
  void track_alloc();
  void track_free();

  Mat data_;
  std::vector<LatticeDims> dims_;
  std::vector<Index> offsets_;
};

enum class Activation { tanh, relu };
std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct JointConfig {
  Index enc_dim = 0;
  Index pred_dim = 0;
  Index joint_dim = 0;   // D
  Index vocab_size = 0;  // K, blank included
  Activation activation = Activation::tanh;
};

/// Projected encoder/prediction terms kept for the backward pass.
struct JointCache {
  std::vector<Mat> enc;       // T_n x F_enc inputs
  std::vector<Mat> pred;      // (U_n+1) x F_pre inputs
};

/// z = psi(U h_enc + V h_pre + b_z), logits = W_y z + b_y.
class JointNetwork {
 public:
  JointNetwork() = default;
  JointNetwork(ParamRegistry& reg, const std::string& prefix, const JointConfig& cfg);

  void init(std::mt19937_64& rng);
  const JointConfig& config() const { return cfg_; }

  /// Builds the packed z lattice. U h_enc is computed once per frame and
  /// V h_pre once per position; the sum is formed cell by cell.
  PackedLattice combine_packed(const std::vector<Mat>& enc, const std::vector<Mat>& pred,
                               JointCache* cache = nullptr) const;
  PackedLattice project_logits(const PackedLattice& z) const;

  /// Logits for one (frame, position) pair; used by the decoders.
  Vec logits(const Vec& enc, const Vec& pred) const;

  /// Consumes dL/dlogits; accumulates joint parameter gradients and returns
  /// dL/dh_enc (T_n x F_enc, summed over u) and dL/dh_pre (summed over t).
  void backward(const PackedLattice& grad_logits, const PackedLattice& z, const JointCache& cache,
                std::vector<Mat>& grad_enc, std::vector<Mat>& grad_pred) const;

  Param& enc_proj() const { return *u_; }
  Param& pred_proj() const { return *v_; }
  Param& joint_bias() const { return *bz_; }
  Param& out_proj() const { return *wy_; }
  Param& out_bias() const { return *by_; }

 private:
  JointConfig cfg_;
  Param* u_ = nullptr;   // D x F_enc
  Param* v_ = nullptr;   // D x F_pre
  Param* bz_ = nullptr;  // D
  Param* wy_ = nullptr;  // K x D
  Param* by_ = nullptr;  // K
};

/// Reference: materializes the padded N x maxT x maxP x D tensor the
/// broadcasting approach would build. Returned flattened as (n, t, u) rows.
Mat combine_broadcast_reference(const JointNetwork& joint, const std::vector<Mat>& enc,
                                const std::vector<Mat>& pred);

// ---------------------------------------------------------------------------
// Memory accounting

enum class Layout { broadcast, packed };
enum class LatticeStage { z, logits };
enum class LossVariant { chain_rule, merged };

std::string to_string(Layout l);
std::string to_string(LossVariant v);
Layout parse_layout(const std::string& s);
LossVariant parse_loss_variant(const std::string& s);

struct BatchSpec {
  std::vector<LatticeDims> sequences;  // (T_n, U_n + 1)
  Index joint_dim = 0;                 // D
  Index vocab_size = 0;                // K
  std::size_t bytes_per_scalar = sizeof(Real);
};

/// broadcast: N * max(T) * max(U+1) * width; packed: sum T_n (U_n+1) * width.
/// Width is D at the z stage and K at the logits stage.
std::uint64_t footprint(const BatchSpec& spec, Layout layout, LatticeStage stage);

/// Modeled peak of the dominant lattice tensors during a training step:
/// the z lattice plus one (merged) or three (chain rule) logits-sized
/// tensors in the loss stage. Cell activations are not modeled.
std::uint64_t modeled_peak_bytes(const BatchSpec& spec, Layout layout, LossVariant variant);

/// Empirical (T, U) distribution sampled with a fixed seed.
struct LengthDistribution {
  std::vector<std::pair<Index, Index>> samples;  // (T, U)

  /// Speech-like lengths: T in [30, 400] frames, U roughly T/8.
  static LengthDistribution builtin(std::uint64_t seed = 7);
  static LengthDistribution equal(Index frames, Index labels);
};

struct MaxBatchQuery {
  Index joint_dim = 640;
  Index vocab_size = 4096;
  std::size_t bytes_per_scalar = 4;
  std::uint64_t budget_bytes = 0;
  Layout layout = Layout::packed;
  LossVariant variant = LossVariant::merged;
  std::uint64_t seed = 1;
  Index limit = 100000000;  // search cap on N
};

/// Largest N whose modeled peak fits the budget, drawing sequence i of the
/// batch from the i-th seeded draw of `dist` (so batches are nested in N).
/// Returns 0 when a single sequence does not fit.
Index max_batch(const LengthDistribution& dist, const MaxBatchQuery& q);

}  // namespace rnnt
