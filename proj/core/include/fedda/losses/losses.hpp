#pragma once

#include <span>
#include <vector>

#include "fedda/autodiff/ops.hpp"
#include "fedda/model/timesformer.hpp"

namespace fedda::losses {

// Weights of the attention-consistency and LMMD terms in the total objective.
struct LossWeights {
  double alpha_att = 0.01;
  double beta_lmmd = 100.0;

  // Throws std::invalid_argument unless both are finite and non-negative.
  void validate() const;
};

// Which auxiliary terms take part in the objective.
struct LossToggles {
  bool time_att = true;
  bool spatial_att = true;
  bool lmmd = true;
};

// 1 - (2 sum(p*g) + eps) / (sum(p) + sum(g) + eps). `mask` must be binary and
// shaped like `prob`.
ad::Var dice_loss(const ad::Var& prob, const ad::Tensor& mask, double eps = 1.0);

// Elementwise mean over a batch of maps.
model::AttentionMapVars average_maps(std::span<const model::AttentionMapVars> batch);
model::AttentionMaps average_maps(std::span<const model::AttentionMaps> batch);

struct AttentionLoss {
  ad::Var time;   // mean |T_src - T_tgt|
  ad::Var space;  // mean |S_src - S_tgt|
  ad::Var total;  // time + space
};

// Compares batch-averaged maps. Throws std::invalid_argument when the shapes
// disagree (maps from different configs).
AttentionLoss attention_consistency_loss(const model::AttentionMapVars& src,
                                         const model::AttentionMapVars& tgt);

// omega[i,c] = y[i,c] / sum_j y[j,c]; columns with zero mass stay zero.
ad::Tensor class_weights(const ad::Tensor& soft_labels);

// Sum of Gaussian kernels exp(-|a - b|^2 / sigma_m).
struct KernelSpec {
  std::vector<double> bandwidths;

  static constexpr double kMultipliers[] = {0.25, 0.5, 1.0, 2.0, 4.0};
  // Multipliers times the median pairwise squared distance of `features`
  // (rows); a zero median falls back to 1.
  static KernelSpec from_features(const ad::Tensor& features);
  static KernelSpec single(double sigma) { return {{sigma}}; }
};

// [na, d] x [nb, d] -> [na, nb]
ad::Var gaussian_kernel(const ad::Var& a, const ad::Var& b, const KernelSpec& spec);

// Class-weighted MMD between source and target samples:
// (1/C) sum_c [ws_c' Kss ws_c + wt_c' Ktt wt_c - 2 ws_c' Kst wt_c],
// skipping classes with zero mass on either side. Labels are treated as
// constants. Throws std::invalid_argument("no class mass") when every class
// is skipped.
ad::Var lmmd_loss(const ad::Var& z_src, const ad::Tensor& labels_src, const ad::Var& z_tgt,
                  const ad::Tensor& labels_tgt, const KernelSpec& spec);

// dice + alpha * att + beta * lmmd. Terms whose weight is zero or whose Var
// is unset are left out of the graph. Throws std::domain_error when a
// present component is NaN or infinite.
ad::Var total_loss(const ad::Var& dice, const ad::Var& l_att, const ad::Var& l_lmmd,
                   const LossWeights& w);

}  // namespace fedda::losses
