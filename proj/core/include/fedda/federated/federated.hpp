#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedda/data/dataset.hpp"
#include "fedda/federated/protocol.hpp"
#include "fedda/losses/losses.hpp"
#include "fedda/metrics/metrics.hpp"
#include "fedda/model/timesformer.hpp"

namespace fedda::fed {

struct TrainConfig {
  model::ModelConfig model;
  model::Structure structure = model::Structure::kEpi;
  losses::LossWeights loss;
  losses::LossToggles toggles;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 4;
  // Training windows drawn per subject each round; 0 uses every start gate.
  std::size_t windows_per_subject = 0;
  // Target windows behind each round's TargetStats.
  std::size_t stats_batch = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  // Run source clients on separate threads. Results do not depend on it.
  bool parallel_clients = false;
  // Also backpropagate each weighted loss term on its own and record the
  // gradient norms (costs one extra backward pass per present term).
  bool track_term_gradients = false;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Deterministic per-purpose seed stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

// A training sample: `model.gates` consecutive gates starting at `start`
// (wrapping around the cycle); the label is the mask of gate `start`.
struct WindowRef {
  std::size_t subject = 0;
  std::size_t start = 0;

  friend bool operator==(const WindowRef&, const WindowRef&) = default;
};

std::vector<WindowRef> all_windows(const data::SiteDataset& site);
// Voxels only; masks are never copied into model inputs.
model::GatedVolumeSequence window_input(const data::Subject& subject, std::size_t start,
                                        std::size_t gates);
const model::Mask& window_label(const data::Subject& subject, std::size_t start,
                                model::Structure structure);

// Per-patch class mass of a [V, V, V] map (probabilities or a 0/1 mask):
// [N, 2] rows (1 - m, m) with m the patch mean, patches in patchify order.
ad::Tensor patch_class_mass(const ad::Tensor& volume, const model::ModelConfig& cfg);

// Weighted mean per named array with weights S_i / sum S. Throws SchemaError
// naming the array when schemas differ, std::invalid_argument when empty.
model::WeightSet fedavg_aggregate(std::span<const ClientUpdate> updates);

// Runs the global model on `batch` target windows drawn without replacement
// by `seed`. Reads voxels only.
TargetStats target_publish_stats(const model::WeightSet& global, const data::SiteDataset& target,
                                 std::size_t batch, std::uint64_t seed, const TrainConfig& cfg);

struct LossBreakdown {
  double dice = 0.0;
  double att = 0.0;   // unweighted attention term
  double lmmd = 0.0;  // unweighted
  double total = 0.0;
  std::size_t steps = 0;
  // Filled when track_term_gradients is set: L2 norm over all parameters of
  // the gradient of each weighted term, from the first step of the round.
  double grad_norm_dice = 0.0;
  double grad_norm_att = 0.0;
  double grad_norm_lmmd = 0.0;
};

struct LocalResult {
  ClientUpdate update;
  LossBreakdown losses;
};

// Thrown when a client cannot finish its round (non-finite loss and the
// like). The message names the site, round and step.
class ClientFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Copies `global`, runs local_epochs of minibatch Adam (fresh state) on the
// labeled site and returns the new weights. With alpha = beta = 0 the stats
// are ignored.
LocalResult client_local_train(const model::WeightSet& global, const data::SiteDataset& local,
                               const TargetStats& stats, const TrainConfig& cfg,
                               std::uint32_t round);

struct ClientLog {
  std::size_t site = 0;
  bool ok = true;
  std::string error;
  std::uint32_t sample_count = 0;
  LossBreakdown losses;
};

struct RoundLog {
  std::uint32_t round = 0;
  std::vector<ClientLog> clients;
  std::uint64_t checksum = 0;  // aggregated weights
  double wall_seconds = 0.0;
};

struct FederatedRun {
  model::WeightSet weights;
  std::vector<RoundLog> logs;
};

// Rounds of broadcast, target stats, local training on every other site and
// FedAvg. Weights start from init_weights(cfg.model, cfg.seed) unless
// `initial` is given. Every message passes through `transport` (in-process
// when null). A failed client is left out of that round and logged; when
// all fail the global weights carry over.
FederatedRun run_federated_training(const std::vector<data::SiteDataset>& sites,
                                    std::size_t target_id, std::size_t rounds,
                                    const TrainConfig& cfg, Transport* transport = nullptr,
                                    const model::WeightSet* initial = nullptr);

// Merges the subjects of `sites` into one labeled site with id `id`.
data::SiteDataset pool_sites(std::span<const data::SiteDataset> sites, std::size_t id);

// Scores every (subject, gate) of a site whose subjects carry masks; the
// prediction is the probability map thresholded at 0.5.
metrics::MetricsReport evaluate_site(const model::WeightSet& weights,
                                     const data::SiteDataset& site, const TrainConfig& cfg);

// Mean DSC of a report (all cases).
double mean_dsc(const metrics::MetricsReport& report);

}  // namespace fedda::fed
