#include "fedda/model/timesformer.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "fedda/model/names.hpp"

namespace fedda::model {

using ad::Shape;
using ad::Tensor;
using ad::Var;

BoundWeights::BoundWeights(ad::Tape& tape, const WeightSet& weights, bool trainable) {
  for (const auto& [name, t] : weights) vars_[name] = tape.leaf(t, trainable);
}

const Var& BoundWeights::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw std::out_of_range("no bound weight named " + name);
  return it->second;
}

Tensor patchify(const GatedVolumeSequence& x, const ModelConfig& cfg) {
  cfg.validate();
  if (x.side != cfg.volume_side || x.gates != cfg.gates) {
    throw std::invalid_argument("patchify: volume " + std::to_string(x.side) + "^3 x " +
                                std::to_string(x.gates) + " gates does not match config " +
                                std::to_string(cfg.volume_side) + "^3 x " +
                                std::to_string(cfg.gates));
  }
  if (x.voxels.size() != x.gate_size() * x.gates) {
    throw std::invalid_argument("patchify: voxel buffer has wrong size");
  }
  const std::size_t P = cfg.patch_side, B = cfg.patches_per_axis(), N = cfg.num_patches();
  Tensor out({N * cfg.gates, cfg.patch_voxels()});
  double* dst = out.data().data();
  for (std::size_t t = 0; t < cfg.gates; ++t)
    for (std::size_t bz = 0; bz < B; ++bz)
      for (std::size_t by = 0; by < B; ++by)
        for (std::size_t bx = 0; bx < B; ++bx)
          for (std::size_t z = 0; z < P; ++z)
            for (std::size_t y = 0; y < P; ++y)
              for (std::size_t xx = 0; xx < P; ++xx)
                *dst++ = x.at(t, bz * P + z, by * P + y, bx * P + xx);
  return out;
}

GatedVolumeSequence assemble_patches(const Tensor& patches, const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t P = cfg.patch_side, B = cfg.patches_per_axis(), N = cfg.num_patches();
  if (patches.shape() != Shape{N * cfg.gates, cfg.patch_voxels()}) {
    throw ad::ShapeError("assemble_patches: got " + ad::to_string(patches.shape()) +
                         ", expected " +
                         ad::to_string(Shape{N * cfg.gates, cfg.patch_voxels()}));
  }
  GatedVolumeSequence x(cfg.volume_side, cfg.gates);
  const double* src = patches.data().data();
  for (std::size_t t = 0; t < cfg.gates; ++t)
    for (std::size_t bz = 0; bz < B; ++bz)
      for (std::size_t by = 0; by < B; ++by)
        for (std::size_t bx = 0; bx < B; ++bx)
          for (std::size_t z = 0; z < P; ++z)
            for (std::size_t y = 0; y < P; ++y)
              for (std::size_t xx = 0; xx < P; ++xx)
                x.at(t, bz * P + z, by * P + y, bx * P + xx) = static_cast<float>(*src++);
  return x;
}

TimeSformer::TimeSformer(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t N = cfg_.num_patches(), T = cfg_.gates, R = cfg_.tokens();
  auto row = [&](std::size_t p, std::size_t t) {
    return static_cast<std::uint32_t>(token_row(cfg_, p, t));
  };

  // Temporal queries are patch-major so the weights reshape to [N, T, T+1].
  auto time = std::make_shared<ad::KeyTable>();
  time->keys_per_query = T + 1;
  for (std::size_t p = 0; p < N; ++p) {
    for (std::size_t t = 0; t < T; ++t) {
      time->query_rows.push_back(row(p, t));
      time->keys.push_back(0);
      for (std::size_t t2 = 0; t2 < T; ++t2) time->keys.push_back(row(p, t2));
    }
  }

  // Spatial queries are gate-major so the weights reshape to [T, N, N+1].
  auto space = std::make_shared<ad::KeyTable>();
  auto space_values = std::make_shared<ad::KeyTable>();
  space->keys_per_query = N + 1;
  space_values->keys_per_query = N;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t p = 0; p < N; ++p) {
      space->query_rows.push_back(row(p, t));
      space_values->query_rows.push_back(row(p, t));
      space->keys.push_back(0);
      for (std::size_t p2 = 0; p2 < N; ++p2) {
        space->keys.push_back(row(p2, t));
        space_values->keys.push_back(row(p2, t));
      }
    }
  }

  auto cls = std::make_shared<ad::KeyTable>();
  cls->query_rows = {0};
  cls->keys_per_query = R;
  for (std::size_t r = 0; r < R; ++r) cls->keys.push_back(static_cast<std::uint32_t>(r));

  time_keys_ = std::move(time);
  space_keys_ = std::move(space);
  space_values_ = std::move(space_values);
  cls_keys_ = std::move(cls);
}

Var TimeSformer::embed(const Var& patches, const BoundWeights& w) const {
  const Shape expected{cfg_.patch_tokens(), cfg_.patch_voxels()};
  if (patches.shape() != expected) {
    throw ad::ShapeError("embed: patches " + ad::to_string(patches.shape()) + ", expected " +
                         ad::to_string(expected));
  }
  const Var tokens = ad::linear(patches, w[names::kEmbedProj]);
  const Var cls = ad::reshape(w[names::kEmbedCls], {1, cfg_.embed_dim});
  const Var rows[] = {cls, tokens};
  return ad::add(ad::concat(rows, 0), w[names::kEmbedPos]);
}

QKV TimeSformer::qkv_project(const Var& z_prev, const BoundWeights& w, std::size_t block,
                             std::size_t head) const {
  if (head >= cfg_.heads) {
    throw std::out_of_range("qkv_project: head " + std::to_string(head) + " >= " +
                            std::to_string(cfg_.heads));
  }
  if (block >= cfg_.blocks) {
    throw std::out_of_range("qkv_project: block " + std::to_string(block) + " >= " +
                            std::to_string(cfg_.blocks));
  }
  const BlockNames b(block);
  const Var h = ad::layer_norm(z_prev, w[b.ln1_gamma], w[b.ln1_beta], cfg_.layer_norm_eps);
  const std::size_t lo = head * cfg_.head_dim(), hi = lo + cfg_.head_dim();
  return {ad::linear(h, ad::slice(w[b.wq], 0, lo, hi)),
          ad::linear(h, ad::slice(w[b.wk], 0, lo, hi)),
          ad::linear(h, ad::slice(w[b.wv], 0, lo, hi))};
}

HeadAttention TimeSformer::divided_attention(const QKV& qkv) const {
  const Shape expected{cfg_.tokens(), cfg_.head_dim()};
  if (qkv.q.shape() != expected || qkv.k.shape() != expected || qkv.v.shape() != expected) {
    throw ad::ShapeError("divided_attention: q/k/v must be " + ad::to_string(expected));
  }
  const std::size_t N = cfg_.num_patches(), T = cfg_.gates;
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim()));

  const Var tw = ad::attention_weights(qkv.q, qkv.k, time_keys_, scale);
  const Var sw = ad::attention_weights(qkv.q, qkv.k, space_keys_, scale);
  const Var cw = ad::attention_weights(qkv.q, qkv.k, cls_keys_, scale);

  // Temporal term carries the CLS contribution; the spatial CLS column only
  // normalizes the spatial softmax.
  const Var s_time = ad::attention_combine(tw, qkv.v, time_keys_);
  const Var s_space = ad::attention_combine(ad::slice(sw, 1, 1, N + 1), qkv.v, space_values_);
  const Var s_cls = ad::attention_combine(cw, qkv.v, cls_keys_);

  return {ad::add(ad::add(s_time, s_space), s_cls), ad::reshape(tw, {N, T, T + 1}),
          ad::reshape(sw, {T, N, N + 1})};
}

BlockOutput TimeSformer::block_forward(const Var& z_prev, const BoundWeights& w,
                                       std::size_t block) const {
  const Shape expected{cfg_.tokens(), cfg_.embed_dim};
  if (z_prev.shape() != expected) {
    throw ad::ShapeError("block_forward: tokens " + ad::to_string(z_prev.shape()) +
                         ", expected " + ad::to_string(expected));
  }
  const BlockNames b(block);
  const std::size_t N = cfg_.num_patches(), T = cfg_.gates, Dh = cfg_.head_dim();

  const Var h = ad::layer_norm(z_prev, w[b.ln1_gamma], w[b.ln1_beta], cfg_.layer_norm_eps);
  const Var q = ad::linear(h, w[b.wq]);
  const Var k = ad::linear(h, w[b.wk]);
  const Var v = ad::linear(h, w[b.wv]);

  std::vector<Var> heads, time_maps, space_maps;
  for (std::size_t a = 0; a < cfg_.heads; ++a) {
    const std::size_t lo = a * Dh, hi = lo + Dh;
    const HeadAttention out = divided_attention(
        {ad::slice(q, 1, lo, hi), ad::slice(k, 1, lo, hi), ad::slice(v, 1, lo, hi)});
    heads.push_back(out.s);
    time_maps.push_back(ad::reshape(out.time, {1, N, T, T + 1}));
    space_maps.push_back(ad::reshape(out.space, {1, T, N, N + 1}));
  }
  const Var s = heads.size() == 1 ? heads[0] : ad::concat(heads, 1);
  const Var z_mid = ad::add(ad::linear(s, w[b.wo]), z_prev);

  const Var h2 = ad::layer_norm(z_mid, w[b.ln2_gamma], w[b.ln2_beta], cfg_.layer_norm_eps);
  const Var hidden = ad::gelu(ad::linear(h2, w[b.mlp_w1], w[b.mlp_b1]));
  const Var mlp = ad::linear(hidden, w[b.mlp_w2], w[b.mlp_b2]);
  // The MLP residual is taken from the block input.
  const Var z = ad::add(mlp, z_prev);

  AttentionMapVars maps{
      time_maps.size() == 1 ? time_maps[0] : ad::concat(time_maps, 0),
      space_maps.size() == 1 ? space_maps[0] : ad::concat(space_maps, 0)};
  return {z, maps};
}

Encoding TimeSformer::encode(const Var& patches, const BoundWeights& w) const {
  Var z = embed(patches, w);
  AttentionMapVars maps;
  for (std::size_t l = 0; l < cfg_.blocks; ++l) {
    BlockOutput out = block_forward(z, w, l);
    z = out.tokens;
    maps = out.maps;
  }
  const Var features = ad::slice(z, 0, 1, cfg_.tokens());
  return {z, features, maps};
}

Var TimeSformer::segment_head(const Var& cls, const BoundWeights& w) const {
  if (cls.size() != cfg_.embed_dim) {
    throw ad::ShapeError("segment_head: CLS " + ad::to_string(cls.shape()) +
                         " does not have embed_dim " + std::to_string(cfg_.embed_dim) +
                         " elements");
  }
  const Var x = ad::reshape(cls, {1, cfg_.embed_dim});
  const Var h = ad::layer_norm(x, w[names::kHeadLnGamma], w[names::kHeadLnBeta],
                               cfg_.layer_norm_eps);
  const Var hidden = ad::gelu(ad::linear(h, w[names::kHeadW1], w[names::kHeadB1]));
  const Var logits = ad::linear(hidden, w[names::kHeadW2], w[names::kHeadB2]);
  const std::size_t V = cfg_.volume_side;
  return ad::reshape(ad::sigmoid(logits), {V, V, V});
}

ForwardVars TimeSformer::forward(ad::Tape& tape, const GatedVolumeSequence& x,
                                 const BoundWeights& w) const {
  const Var patches = tape.constant(patchify(x, cfg_));
  Encoding enc = encode(patches, w);
  const Var prob = segment_head(ad::slice(enc.tokens, 0, 0, 1), w);
  return {prob, std::move(enc)};
}

SegmentationOutput TimeSformer::predict(const GatedVolumeSequence& x,
                                        const WeightSet& weights) const {
  check_weights(weights, cfg_);
  ad::Tape tape;
  const BoundWeights w(tape, weights, false);
  const ForwardVars out = forward(tape, x, w);
  return {out.prob.value(), out.encoding.features.value(), out.encoding.maps.values()};
}

}  // namespace fedda::model
