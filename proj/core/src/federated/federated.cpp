#include "fedda/federated/federated.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <random>

#include "fedda/autodiff/adam.hpp"

namespace fedda::fed {

using ad::Tensor;
using ad::Var;
using model::WeightSet;

void TrainConfig::validate() const {
  model.validate();
  loss.validate();
  auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
  if (batch_size == 0) fail("batch_size must be positive");
  if (stats_batch == 0) fail("stats_batch must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    fail("learning_rate must be positive and finite");
  }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 finalizer over a running combination.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  h = mix(h ^ a);
  h = mix(h ^ b);
  return mix(h ^ c);
}

std::vector<WindowRef> all_windows(const data::SiteDataset& site) {
  std::vector<WindowRef> out;
  for (std::size_t s = 0; s < site.subjects.size(); ++s) {
    for (std::size_t g = 0; g < site.subjects[s].sequence.gates; ++g) out.push_back({s, g});
  }
  return out;
}

model::GatedVolumeSequence window_input(const data::Subject& subject, std::size_t start,
                                        std::size_t gates) {
  model::GatedVolumeSequence w = model::cyclic_window(subject.sequence, start, gates);
  w.endo.clear();
  w.epi.clear();
  return w;
}

const model::Mask& window_label(const data::Subject& subject, std::size_t start,
                                model::Structure structure) {
  const auto& masks = structure == model::Structure::kEndo ? subject.sequence.endo
                                                           : subject.sequence.epi;
  if (start >= masks.size()) {
    throw std::invalid_argument("subject " + subject.id + " has no " +
                                model::to_string(structure) + " mask for gate " +
                                std::to_string(start));
  }
  return masks[start];
}

Tensor patch_class_mass(const Tensor& volume, const model::ModelConfig& cfg) {
  const std::size_t V = cfg.volume_side, P = cfg.patch_side, n = cfg.patches_per_axis();
  if (volume.size() != V * V * V) throw ad::ShapeError("patch_class_mass: volume size mismatch");
  Tensor out({cfg.num_patches(), 2});
  const double inv = 1.0 / static_cast<double>(cfg.patch_voxels());
  std::size_t p = 0;
  for (std::size_t bz = 0; bz < n; ++bz)
    for (std::size_t by = 0; by < n; ++by)
      for (std::size_t bx = 0; bx < n; ++bx, ++p) {
        double s = 0.0;
        for (std::size_t z = bz * P; z < (bz + 1) * P; ++z)
          for (std::size_t y = by * P; y < (by + 1) * P; ++y)
            for (std::size_t x = bx * P; x < (bx + 1) * P; ++x) s += volume[(z * V + y) * V + x];
        const double m = s * inv;
        out[2 * p] = 1.0 - m;
        out[2 * p + 1] = m;
      }
  return out;
}

WeightSet fedavg_aggregate(std::span<const ClientUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg_aggregate: no updates");
  const WeightSet& first = updates.front().weights;
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.sample_count == 0) throw std::invalid_argument("fedavg_aggregate: zero sample count");
    total += static_cast<double>(u.sample_count);
    if (u.weights.size() != first.size()) {
      throw SchemaError("fedavg_aggregate: updates hold different array counts");
    }
    auto a = first.begin();
    for (auto b = u.weights.begin(); b != u.weights.end(); ++a, ++b) {
      if (a->first != b->first) throw SchemaError("fedavg_aggregate: array " + b->first + " not in every update");
      if (a->second.shape() != b->second.shape()) {
        throw SchemaError("fedavg_aggregate: array " + a->first + " has mismatched shape " +
                          ad::to_string(b->second.shape()));
      }
    }
  }
  WeightSet out;
  for (const auto& [name, t] : first) out.set(name, Tensor(t.shape()));
  for (const auto& u : updates) {
    const double w = static_cast<double>(u.sample_count) / total;
    auto dst = out.tensors().begin();
    for (auto src = u.weights.begin(); src != u.weights.end(); ++src, ++dst) {
      auto d = dst->second.data();
      const auto s = src->second.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += w * s[i];
    }
  }
  return out;
}

namespace {

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: nothing to join");
  const std::size_t cols = parts.front().dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) rows += p.dim(0);
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + off);
    off += p.size();
  }
  return out;
}

Tensor mask_tensor(const model::Mask& m) {
  Tensor t({m.dims[0], m.dims[1], m.dims[2]});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m.values[i];
  return t;
}

bool wants_att(const TrainConfig& cfg) {
  return cfg.loss.alpha_att != 0.0 && (cfg.toggles.time_att || cfg.toggles.spatial_att);
}
bool wants_lmmd(const TrainConfig& cfg) { return cfg.loss.beta_lmmd != 0.0 && cfg.toggles.lmmd; }

double grad_norm(const ad::Tape& tape, const Var& term, const model::BoundWeights& w) {
  const ad::Gradients g = tape.backward(term);
  double ss = 0.0;
  for (const auto& [name, v] : w.vars()) {
    const Tensor t = g.of(v);
    for (double x : t.data()) ss += x * x;
  }
  return std::sqrt(ss);
}

struct StepValues {
  double dice = 0.0, att = 0.0, lmmd = 0.0, total = 0.0;
  double gn_dice = 0.0, gn_att = 0.0, gn_lmmd = 0.0;
};

StepValues train_step(const model::TimeSformer& net, WeightSet& weights,
                      ad::OptimizerState& opt, const data::SiteDataset& site,
                      std::span<const WindowRef> batch, const TargetStats& stats,
                      const TrainConfig& cfg, bool track) {
  const auto& mc = net.config();
  const std::size_t N = mc.num_patches();
  ad::Tape tape;
  const model::BoundWeights w(tape, weights, true);

  std::vector<Var> dice_terms, src_features;
  std::vector<model::AttentionMapVars> src_maps;
  std::vector<Tensor> src_labels;
  for (const auto& ref : batch) {
    const auto& subject = site.subjects[ref.subject];
    const auto input = window_input(subject, ref.start, mc.gates);
    const Tensor label = mask_tensor(window_label(subject, ref.start, cfg.structure));
    const model::ForwardVars out = net.forward(tape, input, w);
    dice_terms.push_back(losses::dice_loss(out.prob, label));
    src_maps.push_back(out.encoding.maps);
    src_features.push_back(ad::slice(out.encoding.features, 0, 0, N));
    src_labels.push_back(patch_class_mass(label, mc));
  }
  Var dice = dice_terms.front();
  for (std::size_t i = 1; i < dice_terms.size(); ++i) dice = ad::add(dice, dice_terms[i]);
  dice = ad::scale(dice, 1.0 / static_cast<double>(dice_terms.size()));

  Var att, lmmd;
  if (wants_att(cfg)) {
    const model::AttentionMapVars src = losses::average_maps(src_maps);
    const model::AttentionMapVars tgt{tape.constant(stats.maps.time),
                                      tape.constant(stats.maps.space)};
    const losses::AttentionLoss a = losses::attention_consistency_loss(src, tgt);
    att = cfg.toggles.time_att && cfg.toggles.spatial_att ? a.total
          : cfg.toggles.time_att                          ? a.time
                                                          : a.space;
  }
  if (wants_lmmd(cfg)) {
    const Var z_src = ad::concat(src_features, 0);
    const Var z_tgt = tape.constant(stats.features);
    const auto spec = losses::KernelSpec::from_features(
        concat_rows({z_src.value(), stats.features}));
    lmmd = losses::lmmd_loss(z_src, concat_rows(src_labels), z_tgt, stats.pseudo_labels, spec);
  }
  const Var total = losses::total_loss(dice, att, lmmd, cfg.loss);

  StepValues sv;
  sv.dice = dice.value().item();
  sv.att = att.valid() ? att.value().item() : 0.0;
  sv.lmmd = lmmd.valid() ? lmmd.value().item() : 0.0;
  sv.total = total.value().item();
  if (track) {
    sv.gn_dice = grad_norm(tape, dice, w);
    if (att.valid()) sv.gn_att = cfg.loss.alpha_att * grad_norm(tape, att, w);
    if (lmmd.valid()) sv.gn_lmmd = cfg.loss.beta_lmmd * grad_norm(tape, lmmd, w);
  }

  const ad::Gradients g = tape.backward(total);
  ad::NamedTensors grads;
  for (const auto& [name, v] : w.vars()) grads.emplace(name, g.of(v));
  ad::adam_step(weights.tensors(), grads, opt);
  return sv;
}

std::vector<WindowRef> draw_windows(const data::SiteDataset& site, const TrainConfig& cfg,
                                    std::mt19937_64& rng) {
  if (cfg.windows_per_subject == 0) return all_windows(site);
  std::vector<WindowRef> out;
  for (std::size_t s = 0; s < site.subjects.size(); ++s) {
    std::vector<std::size_t> starts(site.subjects[s].sequence.gates);
    std::iota(starts.begin(), starts.end(), 0);
    std::shuffle(starts.begin(), starts.end(), rng);
    const std::size_t k = std::min(cfg.windows_per_subject, starts.size());
    for (std::size_t i = 0; i < k; ++i) out.push_back({s, starts[i]});
  }
  return out;
}

}  // namespace

TargetStats target_publish_stats(const WeightSet& global, const data::SiteDataset& target,
                                 std::size_t batch, std::uint64_t seed, const TrainConfig& cfg) {
  auto windows = all_windows(target);
  if (windows.empty()) throw std::invalid_argument("target_publish_stats: target site is empty");
  if (batch == 0 || batch > windows.size()) {
    throw std::invalid_argument("target_publish_stats: batch " + std::to_string(batch) +
                                " outside [1, " + std::to_string(windows.size()) + "]");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(windows.begin(), windows.end(), rng);
  windows.resize(batch);

  const model::TimeSformer net(cfg.model);
  const std::size_t N = cfg.model.num_patches(), d = cfg.model.embed_dim;
  std::vector<model::AttentionMaps> maps;
  std::vector<Tensor> features, labels;
  for (const auto& ref : windows) {
    const auto input = window_input(target.subjects[ref.subject], ref.start, cfg.model.gates);
    const model::SegmentationOutput out = net.predict(input, global);
    maps.push_back(out.maps);
    Tensor f({N, d});
    std::copy_n(out.features.data().begin(), N * d, f.data().begin());
    features.push_back(std::move(f));
    labels.push_back(patch_class_mass(out.prob, cfg.model));
  }
  TargetStats s;
  s.maps = losses::average_maps(maps);
  s.features = concat_rows(features);
  s.pseudo_labels = concat_rows(labels);
  s.batch = static_cast<std::uint32_t>(batch);
  return s;
}

LocalResult client_local_train(const WeightSet& global, const data::SiteDataset& local,
                               const TargetStats& stats, const TrainConfig& cfg,
                               std::uint32_t round) {
  if (!local.labeled) {
    throw std::invalid_argument("client_local_train: site " + std::to_string(local.id) +
                                " is unlabeled");
  }
  const model::TimeSformer net(cfg.model);
  std::mt19937_64 rng(derive_seed(cfg.seed, 1, round));
  const std::vector<WindowRef> windows = draw_windows(local, cfg, rng);
  if (windows.empty()) {
    throw std::invalid_argument("client_local_train: site " + std::to_string(local.id) +
                                " has no windows");
  }

  LocalResult result;
  result.update.weights = global;
  result.update.sample_count = static_cast<std::uint32_t>(windows.size());
  result.update.round = round;
  ad::OptimizerState opt;
  opt.options.learning_rate = cfg.learning_rate;
  LossBreakdown& lb = result.losses;

  std::vector<WindowRef> order = windows;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      const bool track = cfg.track_term_gradients && lb.steps == 0;
      StepValues sv;
      try {
        sv = train_step(net, result.update.weights, opt, local,
                        std::span(order).subspan(b, e - b), stats, cfg, track);
      } catch (const std::domain_error& err) {
        throw ClientFailure("site " + std::to_string(local.id) + ", round " +
                            std::to_string(round) + ", epoch " + std::to_string(epoch) +
                            ", step " + std::to_string(lb.steps) + ": " + err.what());
      }
      if (track) {
        lb.grad_norm_dice = sv.gn_dice;
        lb.grad_norm_att = sv.gn_att;
        lb.grad_norm_lmmd = sv.gn_lmmd;
      }
      lb.dice += sv.dice;
      lb.att += sv.att;
      lb.lmmd += sv.lmmd;
      lb.total += sv.total;
      ++lb.steps;
    }
  }
  if (lb.steps > 0) {
    const double n = static_cast<double>(lb.steps);
    lb.dice /= n;
    lb.att /= n;
    lb.lmmd /= n;
    lb.total /= n;
  }
  return result;
}

FederatedRun run_federated_training(const std::vector<data::SiteDataset>& sites,
                                    std::size_t target_id, std::size_t rounds,
                                    const TrainConfig& cfg, Transport* transport,
                                    const WeightSet* initial) {
  cfg.validate();
  const data::SiteDataset* target = nullptr;
  std::vector<const data::SiteDataset*> sources;
  for (const auto& s : sites) {
    if (s.id == target_id) {
      if (target) throw std::invalid_argument("run_federated_training: target site listed twice");
      target = &s;
    } else {
      if (!s.labeled) {
        throw std::invalid_argument("run_federated_training: source site " +
                                    std::to_string(s.id) + " is unlabeled");
      }
      sources.push_back(&s);
    }
  }
  if (!target) {
    throw std::invalid_argument("run_federated_training: no site with id " +
                                std::to_string(target_id));
  }
  if (sources.empty()) throw std::invalid_argument("run_federated_training: no source sites");

  InProcessTransport local_transport;
  Transport& net = transport ? *transport : local_transport;

  FederatedRun run;
  if (initial) {
    check_weights(*initial, cfg.model);
    run.weights = *initial;
  } else {
    run.weights = model::init_weights(cfg.model, cfg.seed);
  }

  for (std::size_t r = 0; r < rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto round = static_cast<std::uint32_t>(r);
    RoundLog log;
    log.round = round;

    TargetStats published = target_publish_stats(run.weights, *target, cfg.stats_batch,
                                                 derive_seed(cfg.seed, 2, r), cfg);
    published.round = round;
    net.send(message_name(round, target->id), serialize_stats(published));
    const TargetStats stats = deserialize_stats(net.receive(message_name(round, target->id)));

    auto train_one = [&](const data::SiteDataset* site) {
      return client_local_train(run.weights, *site, stats, cfg, round);
    };
    std::vector<std::optional<LocalResult>> results(sources.size());
    std::vector<std::string> errors(sources.size());
    if (cfg.parallel_clients && sources.size() > 1) {
      std::vector<std::future<LocalResult>> futures;
      for (const auto* s : sources) futures.push_back(std::async(std::launch::async, train_one, s));
      for (std::size_t i = 0; i < sources.size(); ++i) {
        try {
          results[i] = futures[i].get();
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    } else {
      for (std::size_t i = 0; i < sources.size(); ++i) {
        try {
          results[i] = train_one(sources[i]);
        } catch (const std::exception& e) {
          errors[i] = e.what();
        }
      }
    }

    std::vector<ClientUpdate> updates;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      ClientLog cl;
      cl.site = sources[i]->id;
      if (results[i]) {
        const std::string name = message_name(round, cl.site);
        net.send(name, serialize_update(results[i]->update));
        updates.push_back(deserialize_update(net.receive(name)));
        cl.sample_count = results[i]->update.sample_count;
        cl.losses = results[i]->losses;
      } else {
        cl.ok = false;
        cl.error = errors[i];
      }
      log.clients.push_back(std::move(cl));
    }
    if (!updates.empty()) run.weights = fedavg_aggregate(updates);
    log.checksum = run.weights.checksum();
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    run.logs.push_back(std::move(log));
  }
  return run;
}

data::SiteDataset pool_sites(std::span<const data::SiteDataset> sites, std::size_t id) {
  data::SiteDataset out;
  out.id = id;
  out.labeled = true;
  for (const auto& s : sites) {
    if (!s.labeled) throw std::invalid_argument("pool_sites: site " + std::to_string(s.id) + " is unlabeled");
    out.subjects.insert(out.subjects.end(), s.subjects.begin(), s.subjects.end());
  }
  return out;
}

metrics::MetricsReport evaluate_site(const WeightSet& weights, const data::SiteDataset& site,
                                     const TrainConfig& cfg) {
  const model::TimeSformer net(cfg.model);
  std::vector<metrics::CaseMetrics> cases;
  for (const auto& ref : all_windows(site)) {
    const auto& subject = site.subjects[ref.subject];
    const auto out = net.predict(window_input(subject, ref.start, cfg.model.gates), weights);
    const model::Mask& gt = window_label(subject, ref.start, cfg.structure);
    model::Mask pred(gt.dims);
    for (std::size_t i = 0; i < pred.size(); ++i) pred.values[i] = out.prob[i] > 0.5 ? 1 : 0;
    cases.push_back(metrics::evaluate_case(subject.id, ref.start, cfg.structure, pred, gt));
  }
  return metrics::metrics_report(std::move(cases));
}

double mean_dsc(const metrics::MetricsReport& report) {
  if (report.cases.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : report.cases) s += c.overlap.dsc;
  return s / static_cast<double>(report.cases.size());
}

}  // namespace fedda::fed
