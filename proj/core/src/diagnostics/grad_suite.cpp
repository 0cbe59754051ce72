#include "fedda/diagnostics/grad_suite.hpp"

#include <cmath>
#include <functional>
#include <random>

#include "fedda/autodiff/grad_check.hpp"
#include "fedda/autodiff/ops.hpp"
#include "fedda/data/phantom.hpp"
#include "fedda/losses/losses.hpp"
#include "fedda/model/timesformer.hpp"

namespace fedda::diag {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = d(rng);
  return t;
}

Tensor away_from_zero(Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

GradCaseResult run_case(const std::string& name, std::uint64_t seed, const ad::ScalarFn& f,
                        const Tensor& x, double tol) {
  const ad::GradCheckResult r = ad::grad_check(f, x, 1e-5);
  return {name, seed, r.max_rel_error, r.checked, r.finite, tol};
}

// Reduces an op's output to a scalar with a fixed random projection.
ad::ScalarFn projected(std::function<Var(Tape&, const Var&)> op, const Tensor& x,
                       std::mt19937_64& rng) {
  Shape out_shape;
  {
    Tape t;
    out_shape = op(t, t.constant(x)).shape();
  }
  Tensor proj = uniform(out_shape, rng);
  return [op = std::move(op), proj](Tape& t, const Var& v) {
    return ad::sum(ad::mul(op(t, v), t.constant(proj)));
  };
}

}  // namespace

std::vector<GradCaseResult> primitive_grad_suite(std::uint64_t seed) {
  using namespace ad;
  std::mt19937_64 rng(seed);
  const Tensor other = uniform({3, 4}, rng), other_nz = away_from_zero({3, 4}, rng);
  const Tensor col = uniform({3, 1}, rng), right = uniform({4, 2}, rng), left = uniform({2, 3}, rng);
  const Tensor gamma = uniform({4}, rng, 0.5, 1.5), beta = uniform({4}, rng);
  const Tensor wlin = uniform({5, 4}, rng), blin = uniform({5}, rng);

  enum class Domain { kAny, kAwayFromZero, kPositive };
  struct Case {
    const char* name;
    std::function<Var(Tape&, const Var&)> op;
    Domain domain = Domain::kAny;
  };
  const std::vector<Case> cases = {
      {"add", [&](Tape& t, const Var& x) { return add(x, t.constant(other)); }},
      {"add_broadcast", [&](Tape& t, const Var& x) { return add(t.constant(other), reshape(slice(x, 1, 0, 1), {3, 1})); }},
      {"sub", [&](Tape& t, const Var& x) { return sub(t.constant(other), x); }},
      {"mul", [&](Tape& t, const Var& x) { return mul(x, t.constant(other)); }},
      {"mul_broadcast", [&](Tape& t, const Var& x) { return mul(x, t.constant(col)); }},
      {"div_numerator", [&](Tape& t, const Var& x) { return div(x, t.constant(other_nz)); }},
      {"div_denominator", [&](Tape& t, const Var& x) { return div(t.constant(other), x); }, Domain::kAwayFromZero},
      {"scale", [&](Tape&, const Var& x) { return scale(x, -1.7); }},
      {"add_scalar", [&](Tape&, const Var& x) { return add_scalar(x, 0.3); }},
      {"matmul_left", [&](Tape& t, const Var& x) { return matmul(x, t.constant(right)); }},
      {"matmul_right", [&](Tape& t, const Var& x) { return matmul(t.constant(left), x); }},
      {"transpose", [&](Tape&, const Var& x) { return transpose(x); }},
      {"reshape", [&](Tape&, const Var& x) { return reshape(x, {2, 6}); }},
      {"concat", [&](Tape& t, const Var& x) { std::vector<Var> p{x, t.constant(other), x}; return concat(p, 1); }},
      {"slice", [&](Tape&, const Var& x) { return slice(x, 1, 1, 3); }},
      {"sum", [&](Tape&, const Var& x) { return sum(x); }},
      {"mean", [&](Tape&, const Var& x) { return mean(x); }},
      {"relu", [&](Tape&, const Var& x) { return relu(x); }, Domain::kAwayFromZero},
      {"gelu", [&](Tape&, const Var& x) { return gelu(x); }},
      {"sigmoid", [&](Tape&, const Var& x) { return sigmoid(x); }},
      {"exp", [&](Tape&, const Var& x) { return exp(x); }},
      {"log", [&](Tape&, const Var& x) { return log(x); }, Domain::kPositive},
      {"abs", [&](Tape&, const Var& x) { return abs(x); }, Domain::kAwayFromZero},
      {"softmax_axis0", [&](Tape&, const Var& x) { return softmax(x, 0); }},
      {"softmax_axis1", [&](Tape&, const Var& x) { return softmax(x, 1); }},
      {"layer_norm_input", [&](Tape& t, const Var& x) { return layer_norm(x, t.constant(gamma), t.constant(beta), 1e-5); }},
      {"layer_norm_gain", [&](Tape& t, const Var& x) { return layer_norm(t.constant(other), reshape(slice(x, 0, 0, 1), {4}), t.constant(beta), 1e-5); }},
      {"layer_norm_bias", [&](Tape& t, const Var& x) { return layer_norm(t.constant(other), t.constant(gamma), reshape(slice(x, 0, 1, 2), {4}), 1e-5); }},
      {"linear_input", [&](Tape& t, const Var& x) { return linear(x, t.constant(wlin), t.constant(blin)); }},
      {"linear_weight", [&](Tape& t, const Var& x) { return linear(t.constant(other), x); }},
      {"linear_bias", [&](Tape& t, const Var& x) { return linear(t.constant(other), t.constant(wlin), reshape(slice(reshape(x, {12}), 0, 0, 5), {5})); }},
      {"sq_dist_left", [&](Tape& t, const Var& x) { return sq_dist(x, t.constant(other)); }},
      {"sq_dist_right", [&](Tape& t, const Var& x) { return sq_dist(t.constant(other), x); }},
      {"sq_dist_self", [&](Tape&, const Var& x) { return sq_dist(x, x); }},
  };

  std::vector<GradCaseResult> out;
  for (const auto& c : cases) {
    Tensor x = c.domain == Domain::kAwayFromZero ? away_from_zero({3, 4}, rng) : uniform({3, 4}, rng);
    if (c.domain == Domain::kPositive)
      for (auto& v : x.data()) v = std::fabs(v) + 0.2;
    out.push_back(run_case(c.name, seed, projected(c.op, x, rng), x, kPrimitiveTolerance));
  }

  // Sparse attention: 5 rows, 3 queries of 3 keys each.
  auto table = std::make_shared<KeyTable>();
  table->query_rows = {1, 2, 4};
  table->keys_per_query = 3;
  table->keys = {0, 1, 3, 0, 2, 2, 4, 1, 0};
  const Tensor q = uniform({5, 3}, rng), k = uniform({5, 3}, rng), v = uniform({5, 3}, rng);
  const Tensor w = uniform({3, 3}, rng, 0.0, 1.0);
  auto weights_q = [&](Tape& t, const Var& x) { return attention_weights(x, t.constant(k), table, 0.6); };
  auto weights_k = [&](Tape& t, const Var& x) { return attention_weights(t.constant(q), x, table, 0.6); };
  auto combine_w = [&](Tape& t, const Var& x) { return attention_combine(x, t.constant(v), table); };
  auto combine_v = [&](Tape& t, const Var& x) { return attention_combine(t.constant(w), x, table); };
  out.push_back(run_case("attention_weights_query", seed, projected(weights_q, q, rng), q, kPrimitiveTolerance));
  out.push_back(run_case("attention_weights_key", seed, projected(weights_k, k, rng), k, kPrimitiveTolerance));
  out.push_back(run_case("attention_combine_weights", seed, projected(combine_w, w, rng), w, kPrimitiveTolerance));
  out.push_back(run_case("attention_combine_values", seed, projected(combine_v, v, rng), v, kPrimitiveTolerance));

  // Losses.
  const Tensor prob = uniform({2, 3, 2}, rng, 0.05, 0.95);
  Tensor mask({2, 3, 2});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3 == 0) ? 1.0 : 0.0;
  out.push_back(run_case(
      "dice_loss", seed, [&](Tape&, const Var& x) { return losses::dice_loss(x, mask); }, prob,
      kPrimitiveTolerance));

  const Tensor time_t = uniform({1, 2, 2, 3}, rng, 0.0, 1.0);
  const Tensor space_t = uniform({1, 2, 2, 3}, rng, 0.0, 1.0);
  Tensor time_s = uniform({1, 2, 2, 3}, rng, 0.0, 1.0);
  for (std::size_t i = 0; i < time_s.size(); ++i)
    if (std::fabs(time_s[i] - time_t[i]) < 0.05) time_s[i] += 0.1;
  out.push_back(run_case(
      "attention_consistency_loss", seed,
      [&](Tape& t, const Var& x) {
        const model::AttentionMapVars src{x, t.constant(space_t)};
        const model::AttentionMapVars tgt{t.constant(time_t), t.constant(space_t)};
        return losses::attention_consistency_loss(src, tgt).total;
      },
      time_s, kPrimitiveTolerance));

  const Tensor zs = uniform({4, 3}, rng), zt = uniform({5, 3}, rng);
  Tensor ys({4, 2}), yt({5, 2});
  std::uniform_real_distribution<double> u01(0.05, 0.95);
  for (std::size_t i = 0; i < 4; ++i) ys.at({i, 1}) = 1.0 - (ys.at({i, 0}) = u01(rng));
  for (std::size_t i = 0; i < 5; ++i) yt.at({i, 1}) = 1.0 - (yt.at({i, 0}) = u01(rng));
  const auto spec = losses::KernelSpec::from_features(zs);
  out.push_back(run_case(
      "gaussian_kernel", seed,
      projected([&](Tape& t, const Var& x) { return losses::gaussian_kernel(x, t.constant(zt), spec); }, zs, rng),
      zs, kPrimitiveTolerance));
  out.push_back(run_case(
      "lmmd_loss_source", seed,
      [&](Tape& t, const Var& x) { return losses::lmmd_loss(x, ys, t.constant(zt), yt, spec); },
      zs, kPrimitiveTolerance));
  out.push_back(run_case(
      "lmmd_loss_target", seed,
      [&](Tape& t, const Var& x) { return losses::lmmd_loss(t.constant(zs), ys, x, yt, spec); },
      zt, kPrimitiveTolerance));
  return out;
}

model::ModelConfig small_check_config() {
  model::ModelConfig cfg;
  cfg.volume_side = 8;
  cfg.patch_side = 4;
  cfg.gates = 2;
  cfg.embed_dim = 16;
  cfg.heads = 2;
  cfg.blocks = 2;
  return cfg;
}

GradCaseResult model_grad_check(const model::ModelConfig& cfg, std::uint64_t seed,
                                std::size_t coords_per_array) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const model::TimeSformer net(cfg);

  // Perturb init so biases, positions and the CLS vector are not all zero.
  model::WeightSet ws = model::init_weights(cfg, seed);
  for (auto& [name, t] : ws.tensors())
    for (auto& x : t.data()) x += 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);

  auto params = data::PhantomParams::for_side(cfg.volume_side, cfg.gates);
  params.noise_std = 0.05;
  const auto input = data::generate_phantom(params, seed);
  Tensor mask({cfg.volume_side, cfg.volume_side, cfg.volume_side});
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = input.epi[0].values[i];

  // Fixed target-side statistics.
  const auto ref = net.predict(input, model::init_weights(cfg, seed + 1));
  const std::size_t N = cfg.num_patches();
  Tensor zt({N, cfg.embed_dim});
  std::copy_n(ref.features.data().begin(), zt.size(), zt.data().begin());
  Tensor ys({N, 2}), yt({N, 2});
  std::uniform_real_distribution<double> u01(0.05, 0.95);
  for (std::size_t i = 0; i < N; ++i) {
    ys.at({i, 1}) = 1.0 - (ys.at({i, 0}) = u01(rng));
    yt.at({i, 1}) = 1.0 - (yt.at({i, 0}) = u01(rng));
  }
  const auto spec = losses::KernelSpec::from_features(zt);

  // All parameters flattened into one vector, in name order.
  std::vector<std::pair<std::string, ad::Shape>> layout;
  std::size_t total = 0;
  for (const auto& [name, t] : ws) {
    layout.emplace_back(name, t.shape());
    total += t.size();
  }
  Tensor flat({total});
  std::vector<std::size_t> coords;
  std::size_t off = 0;
  for (const auto& [name, t] : ws) {
    std::copy(t.data().begin(), t.data().end(), flat.data().begin() + off);
    std::uniform_int_distribution<std::size_t> pick(0, t.size() - 1);
    for (std::size_t i = 0; i < std::min(coords_per_array, t.size()); ++i) coords.push_back(off + pick(rng));
    off += t.size();
  }

  const losses::LossWeights lw{0.01, 1.0};
  auto f = [&](Tape& tape, const Var& x) {
    model::BoundWeights bw;
    std::size_t o = 0;
    for (const auto& [name, shape] : layout) {
      const std::size_t n = ad::numel(shape);
      bw.set(name, ad::reshape(ad::slice(x, 0, o, o + n), shape));
      o += n;
    }
    const model::ForwardVars out = net.forward(tape, input, bw);
    const Var dice = losses::dice_loss(out.prob, mask);
    const model::AttentionMapVars tgt{tape.constant(ref.maps.time), tape.constant(ref.maps.space)};
    const Var att = losses::attention_consistency_loss(out.encoding.maps, tgt).total;
    const Var lmmd = losses::lmmd_loss(ad::slice(out.encoding.features, 0, 0, N), ys,
                                       tape.constant(zt), yt, spec);
    return losses::total_loss(dice, att, lmmd, lw);
  };
  const ad::GradCheckResult r = ad::grad_check(f, flat, 1e-5, coords);
  return {"model_end_to_end", seed, r.max_rel_error, r.checked, r.finite, kModelTolerance};
}

}  // namespace fedda::diag
