#pragma once

// Straight-line re-evaluation of the transformer with plain loops, used as an
// independent oracle for the tape-based implementation.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fedda/model/config.hpp"
#include "fedda/model/weights.hpp"

namespace fedda::testing {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  static Mat of(const ad::Tensor& t) {
    Mat m(t.dim(0), t.size() / t.dim(0));
    m.v.assign(t.data().begin(), t.data().end());
    return m;
  }
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
};

// x [n,in] times w^T, w [out,in], plus optional bias.
inline Mat ref_linear(const Mat& x, const ad::Tensor& w, const ad::Tensor* b = nullptr) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  Mat y(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double s = b ? (*b)[o] : 0.0;
      for (std::size_t c = 0; c < in; ++c) s += x(i, c) * w[o * in + c];
      y(i, o) = s;
    }
  return y;
}

inline Mat ref_layer_norm(const Mat& x, const ad::Tensor& g, const ad::Tensor& b, double eps) {
  Mat y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) mean += x(i, c);
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t c = 0; c < x.cols; ++c) var += (x(i, c) - mean) * (x(i, c) - mean);
    var /= static_cast<double>(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c)
      y(i, c) = (x(i, c) - mean) / std::sqrt(var + eps) * g[c] + b[c];
  }
  return y;
}

inline double ref_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline std::vector<double> ref_softmax(std::vector<double> z) {
  double mx = z[0];
  for (double a : z) mx = std::max(mx, a);
  double s = 0.0;
  for (double& a : z) s += (a = std::exp(a - mx));
  for (double& a : z) a /= s;
  return z;
}

inline double ref_dot(const Mat& a, std::size_t i, const Mat& b, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols; ++c) s += a(i, c) * b(j, c);
  return s;
}

struct RefHead {
  Mat s;                                   // [R, Dh]
  std::vector<std::vector<double>> time;   // per (p,t) in p-major order, T+1 weights
  std::vector<std::vector<double>> space;  // per (t,p) in t-major order, N+1 weights
};

// One head of divided attention evaluated query by query.
inline RefHead ref_divided_attention(const Mat& q, const Mat& k, const Mat& v,
                                     const model::ModelConfig& cfg) {
  const std::size_t N = cfg.num_patches(), T = cfg.gates, R = cfg.tokens();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols));
  auto row = [&](std::size_t p, std::size_t t) { return 1 + t * N + p; };
  RefHead out;
  out.s = Mat(R, q.cols);
  out.time.resize(N * T);
  out.space.resize(N * T);

  std::vector<double> logits;
  for (std::size_t r = 0; r < R; ++r) logits.push_back(scale * ref_dot(q, 0, k, r));
  const auto cls_w = ref_softmax(logits);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < q.cols; ++c) out.s(0, c) += cls_w[r] * v(r, c);

  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t p = 0; p < N; ++p) {
      const std::size_t i = row(p, t);
      std::vector<double> lt{scale * ref_dot(q, i, k, 0)};
      for (std::size_t t2 = 0; t2 < T; ++t2) lt.push_back(scale * ref_dot(q, i, k, row(p, t2)));
      std::vector<double> ls{scale * ref_dot(q, i, k, 0)};
      for (std::size_t p2 = 0; p2 < N; ++p2) ls.push_back(scale * ref_dot(q, i, k, row(p2, t)));
      const auto at = ref_softmax(lt);
      const auto as = ref_softmax(ls);
      for (std::size_t c = 0; c < q.cols; ++c) {
        double s = at[0] * v(0, c);
        for (std::size_t t2 = 0; t2 < T; ++t2) s += at[1 + t2] * v(row(p, t2), c);
        for (std::size_t p2 = 0; p2 < N; ++p2) s += as[1 + p2] * v(row(p2, t), c);
        out.s(i, c) = s;
      }
      out.time[p * T + t] = at;
      out.space[t * N + p] = as;
    }
  }
  return out;
}

inline Mat ref_block(const Mat& z, const model::WeightSet& w, const model::ModelConfig& cfg,
                     std::size_t block) {
  const std::string pre = "block" + std::to_string(block) + ".";
  const double eps = cfg.layer_norm_eps;
  const Mat h = ref_layer_norm(z, w.at(pre + "ln1.gamma"), w.at(pre + "ln1.beta"), eps);
  const Mat q = ref_linear(h, w.at(pre + "attn.wq"));
  const Mat k = ref_linear(h, w.at(pre + "attn.wk"));
  const Mat v = ref_linear(h, w.at(pre + "attn.wv"));
  const std::size_t Dh = cfg.head_dim();
  Mat s(z.rows, cfg.embed_dim);
  for (std::size_t a = 0; a < cfg.heads; ++a) {
    Mat qa(z.rows, Dh), ka(z.rows, Dh), va(z.rows, Dh);
    for (std::size_t i = 0; i < z.rows; ++i)
      for (std::size_t c = 0; c < Dh; ++c) {
        qa(i, c) = q(i, a * Dh + c);
        ka(i, c) = k(i, a * Dh + c);
        va(i, c) = v(i, a * Dh + c);
      }
    const RefHead head = ref_divided_attention(qa, ka, va, cfg);
    for (std::size_t i = 0; i < z.rows; ++i)
      for (std::size_t c = 0; c < Dh; ++c) s(i, a * Dh + c) = head.s(i, c);
  }
  Mat zmid = ref_linear(s, w.at(pre + "attn.wo"));
  for (std::size_t i = 0; i < zmid.v.size(); ++i) zmid.v[i] += z.v[i];
  const Mat h2 = ref_layer_norm(zmid, w.at(pre + "ln2.gamma"), w.at(pre + "ln2.beta"), eps);
  const auto b1 = w.at(pre + "mlp.b1");
  const auto b2 = w.at(pre + "mlp.b2");
  Mat hidden = ref_linear(h2, w.at(pre + "mlp.w1"), &b1);
  for (double& x : hidden.v) x = ref_gelu(x);
  Mat out = ref_linear(hidden, w.at(pre + "mlp.w2"), &b2);
  for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += z.v[i];
  return out;
}

// Patch matrix [N*T, P^3] -> tokens [1 + N*T, d].
inline Mat ref_embed(const Mat& patches, const model::WeightSet& w) {
  const auto& E = w.at("embed.proj");
  const auto& pos = w.at("embed.pos");
  const auto& cls = w.at("embed.cls");
  const std::size_t d = E.dim(0);
  Mat z(patches.rows + 1, d);
  for (std::size_t c = 0; c < d; ++c) z(0, c) = cls[c] + pos[c];
  for (std::size_t i = 0; i < patches.rows; ++i)
    for (std::size_t o = 0; o < d; ++o) {
      double s = 0.0;
      for (std::size_t c = 0; c < patches.cols; ++c) s += E[o * patches.cols + c] * patches(i, c);
      z(i + 1, o) = s + pos[(i + 1) * d + o];
    }
  return z;
}

// Full forward pass: probabilities, flattened (z, y, x).
inline std::vector<double> ref_forward(const Mat& patches, const model::WeightSet& w,
                                       const model::ModelConfig& cfg) {
  Mat z = ref_embed(patches, w);
  for (std::size_t l = 0; l < cfg.blocks; ++l) z = ref_block(z, w, cfg, l);
  Mat cls(1, cfg.embed_dim);
  for (std::size_t c = 0; c < cfg.embed_dim; ++c) cls(0, c) = z(0, c);
  const Mat h = ref_layer_norm(cls, w.at("head.ln.gamma"), w.at("head.ln.beta"),
                               cfg.layer_norm_eps);
  const auto b1 = w.at("head.b1");
  const auto b2 = w.at("head.b2");
  Mat hidden = ref_linear(h, w.at("head.w1"), &b1);
  for (double& x : hidden.v) x = ref_gelu(x);
  const Mat logits = ref_linear(hidden, w.at("head.w2"), &b2);
  std::vector<double> prob;
  for (double x : logits.v) prob.push_back(1.0 / (1.0 + std::exp(-x)));
  return prob;
}

}  // namespace fedda::testing
