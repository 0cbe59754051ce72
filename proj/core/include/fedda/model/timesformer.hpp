#pragma once

#include <map>
#include <string>

#include "fedda/autodiff/ops.hpp"
#include "fedda/autodiff/tape.hpp"
#include "fedda/model/config.hpp"
#include "fedda/model/volume.hpp"
#include "fedda/model/weights.hpp"

namespace fedda::model {

// Last-block attention weights.
// time  [A, N, T, T+1]: per head and patch, query gate t over {CLS, gates 1..T}.
// space [A, T, N, N+1]: per head and gate, query patch p over {CLS, patches 1..N}.
struct AttentionMaps {
  ad::Tensor time;
  ad::Tensor space;

  friend bool operator==(const AttentionMaps&, const AttentionMaps&) = default;
};

struct AttentionMapVars {
  ad::Var time;
  ad::Var space;

  AttentionMaps values() const { return {time.value(), space.value()}; }
};

// A WeightSet recorded on a tape, either as trainable leaves or constants.
class BoundWeights {
 public:
  BoundWeights() = default;
  BoundWeights(ad::Tape& tape, const WeightSet& weights, bool trainable);

  const ad::Var& operator[](const std::string& name) const;
  void set(const std::string& name, ad::Var v) { vars_[name] = v; }
  const std::map<std::string, ad::Var>& vars() const { return vars_; }

 private:
  std::map<std::string, ad::Var> vars_;
};

struct QKV {
  ad::Var q, k, v;
};

struct HeadAttention {
  ad::Var s;      // [1 + N*T, D_h]; row 0 is the CLS output
  ad::Var time;   // [N, T, T+1]
  ad::Var space;  // [T, N, N+1]
};

struct BlockOutput {
  ad::Var tokens;  // [1 + N*T, d_model]
  AttentionMapVars maps;
};

struct Encoding {
  ad::Var tokens;    // final token grid
  ad::Var features;  // patch tokens without CLS, [N*T, d_model]
  AttentionMapVars maps;
};

struct ForwardVars {
  ad::Var prob;  // [V, V, V]
  Encoding encoding;
};

// Value-level result of a forward pass.
struct SegmentationOutput {
  ad::Tensor prob;      // [V, V, V], strictly inside (0, 1)
  ad::Tensor features;  // [N*T, d_model]
  AttentionMaps maps;
};

// Splits each gate into P^3 blocks. Row t*N + p holds patch p of gate t,
// patches in (z, y, x) block order, voxels in (z, y, x) order inside a block.
ad::Tensor patchify(const GatedVolumeSequence& x, const ModelConfig& cfg);
// Inverse of patchify (voxels only).
GatedVolumeSequence assemble_patches(const ad::Tensor& patches, const ModelConfig& cfg);

// Token row of patch p in gate t; row 0 is CLS.
inline std::size_t token_row(const ModelConfig& cfg, std::size_t p, std::size_t t) {
  return 1 + t * cfg.num_patches() + p;
}

// Divided space-time transformer with a CLS-driven segmentation head.
// Stateless apart from the geometry; safe to share across threads.
class TimeSformer {
 public:
  explicit TimeSformer(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  // patches [N*T, P^3] -> tokens [1 + N*T, d_model]
  ad::Var embed(const ad::Var& patches, const BoundWeights& w) const;
  // Per-head projections of LN1(z_prev) for `block`, each [1 + N*T, D_h].
  QKV qkv_project(const ad::Var& z_prev, const BoundWeights& w, std::size_t block,
                  std::size_t head) const;
  // One head of divided attention. Patch queries combine the temporal
  // softmax (CLS and the same patch at every gate) with the spatial softmax
  // over patches of the same gate; the CLS term comes from the temporal
  // softmax only. The CLS query attends to every token.
  HeadAttention divided_attention(const QKV& qkv) const;
  BlockOutput block_forward(const ad::Var& z_prev, const BoundWeights& w,
                            std::size_t block) const;
  Encoding encode(const ad::Var& patches, const BoundWeights& w) const;
  // cls [d_model] or [1, d_model] -> probabilities [V, V, V]
  ad::Var segment_head(const ad::Var& cls, const BoundWeights& w) const;

  ForwardVars forward(ad::Tape& tape, const GatedVolumeSequence& x, const BoundWeights& w) const;
  SegmentationOutput predict(const GatedVolumeSequence& x, const WeightSet& weights) const;

 private:
  ModelConfig cfg_;
  ad::KeyTablePtr time_keys_;
  ad::KeyTablePtr space_keys_;
  ad::KeyTablePtr space_values_;
  ad::KeyTablePtr cls_keys_;
};

}  // namespace fedda::model
