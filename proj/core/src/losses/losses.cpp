#include "fedda/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedda::losses {

using ad::Tensor;
using ad::Var;

void LossWeights::validate() const {
  if (!std::isfinite(alpha_att) || alpha_att < 0.0) {
    throw std::invalid_argument("alpha_att must be finite and non-negative");
  }
  if (!std::isfinite(beta_lmmd) || beta_lmmd < 0.0) {
    throw std::invalid_argument("beta_lmmd must be finite and non-negative");
  }
}

Var dice_loss(const Var& prob, const Tensor& mask, double eps) {
  if (prob.shape() != mask.shape()) {
    throw ad::ShapeError("dice_loss: prob " + ad::to_string(prob.shape()) + " vs mask " +
                         ad::to_string(mask.shape()));
  }
  double mask_sum = 0.0;
  for (double g : mask.data()) {
    if (g != 0.0 && g != 1.0) throw std::invalid_argument("dice_loss: mask is not binary");
    mask_sum += g;
  }
  ad::Tape& tape = *prob.tape();
  const Var g = tape.constant(mask);
  const Var inter = ad::add_scalar(ad::scale(ad::sum(ad::mul(prob, g)), 2.0), eps);
  const Var denom = ad::add_scalar(ad::sum(prob), mask_sum + eps);
  return ad::add_scalar(ad::scale(ad::div(inter, denom), -1.0), 1.0);
}

model::AttentionMapVars average_maps(std::span<const model::AttentionMapVars> batch) {
  if (batch.empty()) throw std::invalid_argument("average_maps: empty batch");
  if (batch.size() == 1) return batch[0];
  Var time = batch[0].time, space = batch[0].space;
  for (std::size_t i = 1; i < batch.size(); ++i) {
    time = ad::add(time, batch[i].time);
    space = ad::add(space, batch[i].space);
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  return {ad::scale(time, inv), ad::scale(space, inv)};
}

model::AttentionMaps average_maps(std::span<const model::AttentionMaps> batch) {
  if (batch.empty()) throw std::invalid_argument("average_maps: empty batch");
  model::AttentionMaps out = batch[0];
  for (std::size_t i = 1; i < batch.size(); ++i) {
    if (batch[i].time.shape() != out.time.shape() ||
        batch[i].space.shape() != out.space.shape()) {
      throw std::invalid_argument("average_maps: maps from different configs");
    }
    for (std::size_t j = 0; j < out.time.size(); ++j) out.time[j] += batch[i].time[j];
    for (std::size_t j = 0; j < out.space.size(); ++j) out.space[j] += batch[i].space[j];
  }
  if (batch.size() > 1) {
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (auto& v : out.time.data()) v *= inv;
    for (auto& v : out.space.data()) v *= inv;
  }
  return out;
}

AttentionLoss attention_consistency_loss(const model::AttentionMapVars& src,
                                         const model::AttentionMapVars& tgt) {
  if (src.time.shape() != tgt.time.shape() || src.space.shape() != tgt.space.shape()) {
    throw std::invalid_argument(
        "attention_consistency_loss: map shapes differ (time " + ad::to_string(src.time.shape()) +
        " vs " + ad::to_string(tgt.time.shape()) + ", space " +
        ad::to_string(src.space.shape()) + " vs " + ad::to_string(tgt.space.shape()) + ")");
  }
  const Var time = ad::mean(ad::abs(ad::sub(src.time, tgt.time)));
  const Var space = ad::mean(ad::abs(ad::sub(src.space, tgt.space)));
  return {time, space, ad::add(time, space)};
}

Tensor class_weights(const Tensor& soft_labels) {
  if (soft_labels.rank() != 2) {
    throw ad::ShapeError("class_weights: expected [n, C], got " +
                         ad::to_string(soft_labels.shape()));
  }
  const std::size_t n = soft_labels.dim(0), C = soft_labels.dim(1);
  Tensor w({n, C});
  for (std::size_t c = 0; c < C; ++c) {
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double y = soft_labels[i * C + c];
      if (!(y >= 0.0) || !std::isfinite(y)) {
        throw std::invalid_argument("class_weights: negative or non-finite label mass");
      }
      mass += y;
    }
    if (mass == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) w[i * C + c] = soft_labels[i * C + c] / mass;
  }
  return w;
}

KernelSpec KernelSpec::from_features(const Tensor& features) {
  if (features.rank() != 2) {
    throw ad::ShapeError("KernelSpec: expected [n, d] features, got " +
                         ad::to_string(features.shape()));
  }
  const std::size_t n = features.dim(0), d = features.dim(1);
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  const double* f = features.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = f[i * d + c] - f[j * d + c];
        s += diff * diff;
      }
      dist.push_back(s);
    }
  }
  double median = 0.0;
  if (!dist.empty()) {
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    median = *mid;
  }
  if (!(median > 0.0) || !std::isfinite(median)) median = 1.0;
  KernelSpec spec;
  for (double m : kMultipliers) spec.bandwidths.push_back(m * median);
  return spec;
}

Var gaussian_kernel(const Var& a, const Var& b, const KernelSpec& spec) {
  if (spec.bandwidths.empty()) throw std::invalid_argument("gaussian_kernel: no bandwidths");
  for (double s : spec.bandwidths) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("gaussian_kernel: bandwidths must be positive");
    }
  }
  const Var d2 = ad::sq_dist(a, b);
  Var k = ad::exp(ad::scale(d2, -1.0 / spec.bandwidths[0]));
  for (std::size_t m = 1; m < spec.bandwidths.size(); ++m) {
    k = ad::add(k, ad::exp(ad::scale(d2, -1.0 / spec.bandwidths[m])));
  }
  return k;
}

Var lmmd_loss(const Var& z_src, const Tensor& labels_src, const Var& z_tgt,
              const Tensor& labels_tgt, const KernelSpec& spec) {
  if (labels_src.rank() != 2 || labels_tgt.rank() != 2 ||
      labels_src.dim(1) != labels_tgt.dim(1)) {
    throw ad::ShapeError("lmmd_loss: labels " + ad::to_string(labels_src.shape()) + " and " +
                         ad::to_string(labels_tgt.shape()) + " must share a class axis");
  }
  if (z_src.shape().size() != 2 || z_tgt.shape().size() != 2 ||
      z_src.shape()[1] != z_tgt.shape()[1]) {
    throw ad::ShapeError("lmmd_loss: features " + ad::to_string(z_src.shape()) + " and " +
                         ad::to_string(z_tgt.shape()) + " must share a feature axis");
  }
  if (z_src.shape()[0] != labels_src.dim(0) || z_tgt.shape()[0] != labels_tgt.dim(0)) {
    throw ad::ShapeError("lmmd_loss: label rows do not match feature rows");
  }
  const std::size_t C = labels_src.dim(1);
  Tensor ws = class_weights(labels_src);
  Tensor wt = class_weights(labels_tgt);
  std::size_t active = 0;
  for (std::size_t c = 0; c < C; ++c) {
    auto mass = [c, C](const Tensor& w) {
      double m = 0.0;
      for (std::size_t i = 0; i < w.dim(0); ++i) m += w[i * C + c];
      return m;
    };
    if (mass(ws) > 0.0 && mass(wt) > 0.0) {
      ++active;
      continue;
    }
    for (std::size_t i = 0; i < ws.dim(0); ++i) ws[i * C + c] = 0.0;
    for (std::size_t i = 0; i < wt.dim(0); ++i) wt[i * C + c] = 0.0;
  }
  if (active == 0) throw std::invalid_argument("lmmd_loss: no class mass");

  ad::Tape& tape = *z_src.tape();
  const Var Ws = tape.constant(std::move(ws));
  const Var Wt = tape.constant(std::move(wt));
  // sum_c w_c' K v_c == sum(W o (K V))
  auto quad = [](const Var& k, const Var& left, const Var& right) {
    return ad::sum(ad::mul(left, ad::matmul(k, right)));
  };
  const Var ss = quad(gaussian_kernel(z_src, z_src, spec), Ws, Ws);
  const Var tt = quad(gaussian_kernel(z_tgt, z_tgt, spec), Wt, Wt);
  const Var st = quad(gaussian_kernel(z_src, z_tgt, spec), Ws, Wt);
  const Var total = ad::sub(ad::add(ss, tt), ad::scale(st, 2.0));
  return ad::scale(total, 1.0 / static_cast<double>(C));
}

Var total_loss(const Var& dice, const Var& l_att, const Var& l_lmmd, const LossWeights& w) {
  w.validate();
  auto check = [](const Var& v, const char* name) {
    if (v.valid() && !v.value().all_finite()) {
      throw std::domain_error(std::string("total_loss: ") + name + " component is not finite");
    }
  };
  check(dice, "dice");
  check(l_att, "attention");
  check(l_lmmd, "lmmd");
  if (!dice.valid()) throw std::invalid_argument("total_loss: dice component missing");
  Var total = dice;
  if (w.alpha_att != 0.0 && l_att.valid()) total = ad::add(total, ad::scale(l_att, w.alpha_att));
  if (w.beta_lmmd != 0.0 && l_lmmd.valid()) {
    total = ad::add(total, ad::scale(l_lmmd, w.beta_lmmd));
  }
  return total;
}

}  // namespace fedda::losses
