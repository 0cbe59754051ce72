#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "fedda/model/names.hpp"
#include "fedda/model/timesformer.hpp"
#include "reference_model.hpp"
#include "test_util.hpp"

namespace fedda::model {
namespace {

using ad::Tensor;
using testing::Mat;
using testing::random_tensor;

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.volume_side = 8;
  cfg.patch_side = 4;
  cfg.gates = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.blocks = 2;
  return cfg;
}

GatedVolumeSequence random_volume(const ModelConfig& cfg, std::mt19937_64& rng) {
  GatedVolumeSequence x(cfg.volume_side, cfg.gates);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  for (auto& v : x.voxels) v = dist(rng);
  return x;
}

// Every array random, including those initialized to zero or one.
WeightSet random_weights(const ModelConfig& cfg, std::mt19937_64& rng, double amp = 0.5) {
  WeightSet w;
  for (const auto& [name, shape] : weight_schema(cfg)) w.set(name, random_tensor(shape, rng, -amp, amp));
  return w;
}

void expect_near_all(std::span<const double> a, std::span<const double> b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], tol) << "index " << i;
}

TEST(Patchify, CountsAndLength) {
  ModelConfig cfg;
  cfg.volume_side = 4;
  cfg.patch_side = 2;
  cfg.gates = 2;
  cfg.embed_dim = 4;
  cfg.heads = 1;
  std::mt19937_64 rng(1);
  const Tensor p = patchify(random_volume(cfg, rng), cfg);
  EXPECT_EQ(cfg.num_patches(), 8u);
  EXPECT_EQ(p.shape(), (ad::Shape{16, 8}));
}

TEST(Patchify, WholeGatePatch) {
  ModelConfig cfg;
  cfg.volume_side = 4;
  cfg.patch_side = 4;
  cfg.gates = 2;
  cfg.embed_dim = 4;
  cfg.heads = 1;
  std::mt19937_64 rng(2);
  const auto x = random_volume(cfg, rng);
  const Tensor p = patchify(x, cfg);
  ASSERT_EQ(p.shape(), (ad::Shape{2, 64}));
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < 64; ++i)
      EXPECT_EQ(p[t * 64 + i], static_cast<double>(x.voxels[t * 64 + i]));
}

TEST(Patchify, BlockOrderIsLexicographic) {
  ModelConfig cfg = small_config();
  GatedVolumeSequence x(8, 2);
  // Tag each voxel with its patch id so the row order is visible.
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t z = 0; z < 8; ++z)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t xx = 0; xx < 8; ++xx)
          x.at(t, z, y, xx) = static_cast<float>(100 * t + (z / 4) * 4 + (y / 4) * 2 + xx / 4);
  const Tensor p = patchify(x, cfg);
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t i = 0; i < 64; ++i)
      ASSERT_EQ(p[r * 64 + i], 100.0 * (r / 8) + r % 8);
}

TEST(Patchify, RoundTripIsExact) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(3);
  const auto x = random_volume(cfg, rng);
  EXPECT_EQ(assemble_patches(patchify(x, cfg), cfg).voxels, x.voxels);
}

TEST(Patchify, IndivisibleRejected) {
  ModelConfig cfg = small_config();
  cfg.patch_side = 3;
  GatedVolumeSequence x(8, 2);
  EXPECT_THROW(patchify(x, cfg), std::invalid_argument);
}

TEST(Embed, ZeroWeightsGiveZeroPatchTokens) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(4);
  WeightSet w = init_weights(cfg, 1);
  w.set(names::kEmbedProj, Tensor(w.at(names::kEmbedProj).shape()));
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, w, false);
  const auto z = model.embed(tape.constant(patchify(random_volume(cfg, rng), cfg)), bw);
  for (double v : z.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Embed, ZeroInputGivesPositions) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(5);
  const WeightSet w = random_weights(cfg, rng);
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, w, false);
  const auto z = model.embed(tape.constant(Tensor({cfg.patch_tokens(), cfg.patch_voxels()})), bw);
  const auto& pos = w.at(names::kEmbedPos);
  for (std::size_t i = cfg.embed_dim; i < pos.size(); ++i) EXPECT_EQ(z.value()[i], pos[i]);
}

TEST(Embed, MatchesMatvecOracle) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(6);
  const WeightSet w = random_weights(cfg, rng);
  const Tensor patches = patchify(random_volume(cfg, rng), cfg);
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, w, false);
  const auto z = model.embed(tape.constant(patches), bw);
  expect_near_all(z.value().data(), testing::ref_embed(Mat::of(patches), w).v, 1e-12);
}

TEST(Embed, WrongPatchShapeRejected) {
  const ModelConfig cfg = small_config();
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, init_weights(cfg, 1), false);
  EXPECT_THROW(model.embed(tape.constant(Tensor({3, 64})), bw), ad::ShapeError);
}

TEST(QkvProject, ConstantRowsGiveZeroQuery) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(7);
  WeightSet w = random_weights(cfg, rng);
  const BlockNames b(0);
  w.set(b.ln1_beta, Tensor({cfg.embed_dim}));
  Tensor z({cfg.tokens(), cfg.embed_dim});
  for (std::size_t r = 0; r < cfg.tokens(); ++r)
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) z[r * cfg.embed_dim + c] = 0.1 * r;
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, w, false);
  const QKV qkv = model.qkv_project(tape.constant(z), bw, 0, 1);
  for (double v : qkv.q.value().data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(QkvProject, MatchesOracle) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(8);
  const WeightSet w = random_weights(cfg, rng);
  const Tensor z = random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, w, false);
  const std::size_t head = 1, Dh = cfg.head_dim();
  const QKV qkv = model.qkv_project(tape.constant(z), bw, 1, head);
  const BlockNames b(1);
  const Mat h = testing::ref_layer_norm(Mat::of(z), w.at(b.ln1_gamma), w.at(b.ln1_beta),
                                        cfg.layer_norm_eps);
  const Mat q_full = testing::ref_linear(h, w.at(b.wq));
  for (std::size_t r = 0; r < cfg.tokens(); ++r)
    for (std::size_t c = 0; c < Dh; ++c)
      EXPECT_NEAR(qkv.q.value()[r * Dh + c], q_full(r, head * Dh + c), 1e-12);
}

TEST(QkvProject, HeadOutOfRangeRejected) {
  const ModelConfig cfg = small_config();
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, init_weights(cfg, 1), false);
  const auto z = tape.constant(Tensor({cfg.tokens(), cfg.embed_dim}));
  EXPECT_THROW(model.qkv_project(z, bw, 0, cfg.heads), std::out_of_range);
}

ModelConfig single_patch_config() {
  ModelConfig cfg;
  cfg.volume_side = 2;
  cfg.patch_side = 2;
  cfg.gates = 1;
  cfg.embed_dim = 2;
  cfg.heads = 1;
  cfg.blocks = 1;
  return cfg;
}

TEST(DividedAttention, UniformSinglePatchSingleGate) {
  // T=1, N=1, all scores zero: temporal weights (1/2, 1/2) over {CLS, patch};
  // spatial weights (1/2, 1/2) over {CLS, patch} of which only the patch
  // column aggregates values. s = 0.5*v_cls + 0.5*v_p + 0.5*v_p.
  const ModelConfig cfg = single_patch_config();
  TimeSformer model(cfg);
  ad::Tape tape;
  const auto zeros = tape.constant(Tensor({2, 2}));
  const auto v = tape.constant(Tensor::from({2, 2}, {2.0, -4.0, 1.0, 3.0}));
  const HeadAttention out = model.divided_attention({zeros, zeros, v});
  EXPECT_NEAR(out.s.value().at({1, 0}), 0.5 * 2.0 + 1.0, 1e-15);
  EXPECT_NEAR(out.s.value().at({1, 1}), 0.5 * -4.0 + 3.0, 1e-15);
  for (double a : out.time.value().data()) EXPECT_DOUBLE_EQ(a, 0.5);
  for (double a : out.space.value().data()) EXPECT_DOUBLE_EQ(a, 0.5);
}

TEST(DividedAttention, IdenticalValuesWeightSum) {
  // With every value row equal to u, a patch query yields
  // alpha_cls*u + (1 - alpha_cls)*u + (1 - beta_cls)*u, where beta_cls is the
  // spatial CLS weight that does not aggregate a value.
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(9);
  const std::size_t R = cfg.tokens(), Dh = cfg.head_dim();
  const Tensor u = random_tensor({Dh}, rng);
  Tensor v({R, Dh});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < Dh; ++c) v[r * Dh + c] = u[c];
  TimeSformer model(cfg);
  ad::Tape tape;
  const auto q = tape.constant(random_tensor({R, Dh}, rng));
  const auto k = tape.constant(random_tensor({R, Dh}, rng));
  const HeadAttention out = model.divided_attention({q, k, tape.constant(v)});
  const std::size_t N = cfg.num_patches();
  for (std::size_t t = 0; t < cfg.gates; ++t)
    for (std::size_t p = 0; p < N; ++p) {
      const double beta_cls = out.space.value().at({t, p, 0});
      for (std::size_t c = 0; c < Dh; ++c)
        EXPECT_NEAR(out.s.value()[token_row(cfg, p, t) * Dh + c], (2.0 - beta_cls) * u[c], 1e-12);
    }
  // The CLS query's weights sum to one over all tokens.
  for (std::size_t c = 0; c < Dh; ++c) EXPECT_NEAR(out.s.value()[c], u[c], 1e-12);
}

TEST(DividedAttention, MatchesStraightLineOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ModelConfig cfg = small_config();
    cfg.gates = 1 + seed % 3;
    std::mt19937_64 rng(seed);
    const std::size_t R = cfg.tokens(), Dh = cfg.head_dim();
    const Tensor q = random_tensor({R, Dh}, rng, -2, 2);
    const Tensor k = random_tensor({R, Dh}, rng, -2, 2);
    const Tensor v = random_tensor({R, Dh}, rng);
    TimeSformer model(cfg);
    ad::Tape tape;
    const HeadAttention out =
        model.divided_attention({tape.constant(q), tape.constant(k), tape.constant(v)});
    const auto ref = testing::ref_divided_attention(Mat::of(q), Mat::of(k), Mat::of(v), cfg);
    expect_near_all(out.s.value().data(), ref.s.v, 1e-12);
    const std::size_t N = cfg.num_patches(), T = cfg.gates;
    for (std::size_t p = 0; p < N; ++p)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j <= T; ++j)
          ASSERT_NEAR(out.time.value().at({p, t, j}), ref.time[p * T + t][j], 1e-12);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < N; ++p)
        for (std::size_t j = 0; j <= N; ++j)
          ASSERT_NEAR(out.space.value().at({t, p, j}), ref.space[t * N + p][j], 1e-12);
  }
}

TEST(BlockForward, ZeroProjectionAndMlpIsIdentity) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(10);
  WeightSet w = random_weights(cfg, rng);
  const BlockNames b(0);
  for (const auto& name : {b.wo, b.mlp_w1, b.mlp_b1, b.mlp_w2, b.mlp_b2})
    w.set(name, Tensor(w.at(name).shape()));
  const Tensor z = random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, w, false);
  EXPECT_EQ(model.block_forward(tape.constant(z), bw, 0).tokens.value(), z);
}

TEST(BlockForward, MatchesStraightLineOracle) {
  const ModelConfig cfg = small_config();
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(100 + seed);
    const WeightSet w = random_weights(cfg, rng);
    const Tensor z = random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
    TimeSformer model(cfg);
    ad::Tape tape;
    const BoundWeights bw(tape, w, false);
    const auto out = model.block_forward(tape.constant(z), bw, 1);
    expect_near_all(out.tokens.value().data(), testing::ref_block(Mat::of(z), w, cfg, 1).v,
                    1e-10);
  }
}

TEST(Encode, ShapesAndRowSums) {
  ModelConfig cfg = small_config();
  cfg.embed_dim = 12;
  cfg.heads = 3;
  std::mt19937_64 rng(11);
  const WeightSet w = random_weights(cfg, rng);
  TimeSformer model(cfg);
  const auto out = model.predict(random_volume(cfg, rng), w);
  const std::size_t A = 3, N = cfg.num_patches(), T = cfg.gates;
  EXPECT_EQ(out.features.shape(), (ad::Shape{N * T, cfg.embed_dim}));
  EXPECT_EQ(out.maps.time.shape(), (ad::Shape{A, N, T, T + 1}));
  EXPECT_EQ(out.maps.space.shape(), (ad::Shape{A, T, N, N + 1}));
  auto check_rows = [](const Tensor& m) {
    const std::size_t k = m.shape().back();
    for (std::size_t r = 0; r < m.size() / k; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += m[r * k + j];
      ASSERT_NEAR(s, 1.0, 1e-6);
    }
  };
  check_rows(out.maps.time);
  check_rows(out.maps.space);
}

TEST(Encode, ZeroBlocksRejected) {
  ModelConfig cfg = small_config();
  cfg.blocks = 0;
  EXPECT_THROW(TimeSformer{cfg}, std::invalid_argument);
}

TEST(Encode, IncompleteWeightsListed) {
  const ModelConfig cfg = small_config();
  WeightSet w = init_weights(cfg, 1);
  w.tensors().erase("block1.attn.wk");
  w.tensors().erase("head.b2");
  TimeSformer model(cfg);
  GatedVolumeSequence x(8, 2);
  try {
    model.predict(x, w);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("block1.attn.wk"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("head.b2"), std::string::npos);
  }
}

TEST(Forward, PureAndMatchesOracle) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(12);
  const WeightSet w = random_weights(cfg, rng);
  const auto x = random_volume(cfg, rng);
  TimeSformer model(cfg);
  const auto a = model.predict(x, w);
  const auto b = model.predict(x, w);
  EXPECT_EQ(a.prob, b.prob);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.maps.time, b.maps.time);
  expect_near_all(a.prob.data(), testing::ref_forward(Mat::of(patchify(x, cfg)), w, cfg),
                  1e-10);
  for (double p : a.prob.data()) {
    EXPECT_GT(p, 0.0);
    EXPECT_LT(p, 1.0);
  }
}

TEST(Forward, GateOrderMatters) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(13);
  const WeightSet w = random_weights(cfg, rng);
  const auto x = random_volume(cfg, rng);
  TimeSformer model(cfg);
  const auto swapped = cyclic_window(x, 1, 2);
  EXPECT_NE(model.predict(x, w).prob, model.predict(swapped, w).prob);
}

TEST(Forward, NeverMaterializesJointAttention) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(14);
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, random_weights(cfg, rng), false);
  model.forward(tape, random_volume(cfg, rng), bw);
  const std::size_t joint = cfg.patch_tokens() * cfg.patch_tokens();
  EXPECT_GT(tape.peak_attention_buffer(), 0u);
  EXPECT_LT(tape.peak_attention_buffer(), joint);
}

TEST(SegmentHead, ZeroWeightsGiveHalf) {
  const ModelConfig cfg = small_config();
  WeightSet w = init_weights(cfg, 1);
  for (const char* name : {names::kHeadW1, names::kHeadW2}) w.set(name, Tensor(w.at(name).shape()));
  TimeSformer model(cfg);
  ad::Tape tape;
  const BoundWeights bw(tape, w, false);
  std::mt19937_64 rng(15);
  const auto p = model.segment_head(tape.constant(random_tensor({cfg.embed_dim}, rng)), bw);
  EXPECT_EQ(p.shape(), (ad::Shape{8, 8, 8}));
  for (double v : p.value().data()) EXPECT_EQ(v, 0.5);
}

TEST(SegmentHead, DefaultOutputCount) {
  const ModelConfig cfg;
  EXPECT_EQ(weight_schema(cfg).at(names::kHeadB2), (ad::Shape{32768}));
}

TEST(SegmentHead, BiasIsMonotone) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(16);
  WeightSet w = random_weights(cfg, rng);
  TimeSformer model(cfg);
  const auto cls = random_tensor({cfg.embed_dim}, rng);
  auto prob_at = [&](const WeightSet& ws, std::size_t i) {
    ad::Tape tape;
    const BoundWeights bw(tape, ws, false);
    return model.segment_head(tape.constant(cls), bw).value()[i];
  };
  const double before = prob_at(w, 37);
  w.at(names::kHeadB2)[37] += 0.25;
  EXPECT_GT(prob_at(w, 37), before);
}

// Independent count: embedding, per-block attention/LN/MLP, head.
std::size_t expected_parameters(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, n = c.num_patches() * c.gates + 1;
  const std::size_t p3 = c.patch_side * c.patch_side * c.patch_side;
  const std::size_t v3 = c.volume_side * c.volume_side * c.volume_side;
  const std::size_t embed = d * p3 + n * d + d;
  const std::size_t block = 4 * d * d + 4 * d + (4 * d * d + 4 * d) + (4 * d * d + d);
  const std::size_t head = 2 * d + (4 * d * d + 4 * d) + (v3 * 4 * d + v3);
  return embed + c.blocks * block + head;
}

TEST(Weights, ParameterCountGolden) {
  const ModelConfig cfg;
  EXPECT_EQ(init_weights(cfg, 0).parameter_count(), 8678144u);
  EXPECT_EQ(expected_parameters(cfg), 8678144u);
  const ModelConfig small = small_config();
  EXPECT_EQ(init_weights(small, 0).parameter_count(), expected_parameters(small));
}

TEST(Weights, InitIsDeterministicAndStructured) {
  const ModelConfig cfg = small_config();
  const WeightSet a = init_weights(cfg, 42);
  EXPECT_EQ(a, init_weights(cfg, 42));
  EXPECT_NE(a.checksum(), init_weights(cfg, 43).checksum());
  EXPECT_EQ(a.schema_hash(), init_weights(cfg, 43).schema_hash());
  for (double v : a.at(names::kEmbedPos).data()) EXPECT_EQ(v, 0.0);
  for (double v : a.at("block0.ln1.gamma").data()) EXPECT_EQ(v, 1.0);
  const double limit = std::sqrt(6.0 / (8.0 + 8.0));
  for (double v : a.at("block0.attn.wq").data()) EXPECT_LE(std::abs(v), limit);
  // Names iterate lexicographically.
  std::string prev;
  for (const auto& [name, _] : a) {
    EXPECT_LT(prev, name);
    prev = name;
  }
}

TEST(Weights, EncodeRoundTripIsBitExact) {
  const ModelConfig cfg = small_config();
  std::mt19937_64 rng(17);
  const WeightSet w = random_weights(cfg, rng);
  const Bytes bytes = encode_weights(w);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FDWT");
  EXPECT_EQ(decode_weights(bytes), w);

  const auto path = std::filesystem::temp_directory_path() / "fedda_weights_test.bin";
  save_weights(w, path);
  EXPECT_EQ(load_weights(path).checksum(), w.checksum());
  std::filesystem::remove(path);
}

TEST(Weights, CorruptPayloadsRejected) {
  const WeightSet w = init_weights(small_config(), 3);
  Bytes bytes = encode_weights(w);
  Bytes truncated(bytes.begin(), bytes.end() - 3);
  EXPECT_THROW(decode_weights(truncated), FormatError);
  Bytes bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_weights(bad_magic), FormatError);
  Bytes bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_THROW(decode_weights(bad_version), FormatError);
}

TEST(ModelConfig, ValidationNamesField) {
  ModelConfig cfg;
  cfg.embed_dim = 10;
  cfg.heads = 4;
  try {
    cfg.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("embed_dim"), std::string::npos);
  }
}

}  // namespace
}  // namespace fedda::model
