#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "fedda/diagnostics/grad_suite.hpp"
#include "fedda/federated/federated.hpp"
#include "fedda_cli/config.hpp"

namespace fedda::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

// Synthesizes the configured sites, or loads cfg.data when set. The target
// site is marked unlabeled.
std::vector<data::SiteDataset> prepare_sites(const RunConfig& cfg);

// Federated training, or pooled single-client training in centralized mode.
fed::FederatedRun train_sites(const RunConfig& cfg, const std::vector<data::SiteDataset>& sites,
                              fed::Transport* transport = nullptr);

struct SweepRow {
  double alpha = 0.0, beta = 0.0;
  metrics::StructureAggregate target;
};

struct AblationRow {
  losses::LossToggles toggles;
  double dsc = 0.0;
  // Largest per-term gradient norm seen across rounds and clients.
  double grad_dice = 0.0, grad_att = 0.0, grad_lmmd = 0.0;
  std::string active_terms;  // terms with a nonzero gradient, ';'-separated
};

// The eight on/off combinations of (time_att, spatial_att, lmmd), all off first.
std::vector<losses::LossToggles> ablation_grid();

std::string rounds_csv(const std::vector<fed::RoundLog>& logs);
std::string sweep_header();
std::string sweep_csv_row(const SweepRow& row);
std::string ablation_header();
std::string ablation_csv_row(const AblationRow& row);
std::string gradcheck_csv(const std::vector<diag::GradCaseResult>& results);

// Each command writes its artifacts under cfg.out and a short summary to
// `log`, and returns an exit code. Module errors propagate as exceptions.
int cmd_generate(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_evaluate(const RunConfig& cfg, std::ostream& log);
int cmd_gradcheck(const RunConfig& cfg, std::ostream& log);
int cmd_sweep(const RunConfig& cfg, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, std::ostream& log);

std::vector<std::string> command_names();

// Dispatches by name and maps exceptions to exit codes: ConfigError and
// unknown commands give kExitUsage, anything else kExitRuntime.
int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log,
                std::ostream& err);

}  // namespace fedda::cli
