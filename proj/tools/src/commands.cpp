#include "fedda_cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>

#include "fedda/model/weights.hpp"

namespace fedda::cli {
namespace {

namespace fs = std::filesystem;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

const data::SiteDataset& find_site(const std::vector<data::SiteDataset>& sites, std::size_t id) {
  for (const auto& s : sites)
    if (s.id == id) return s;
  throw ConfigError("target_site", "no site with id " + std::to_string(id));
}

const metrics::StructureAggregate& aggregate_for(const metrics::MetricsReport& report,
                                                 model::Structure structure) {
  for (const auto& a : report.aggregates)
    if (a.structure == structure) return a;
  throw std::runtime_error(std::string("no cases scored for ") + model::to_string(structure));
}

metrics::MetricsReport evaluate_target(const RunConfig& cfg, const std::vector<data::SiteDataset>& sites,
                                       const model::WeightSet& weights) {
  return fed::evaluate_site(weights, find_site(sites, cfg.target_site), cfg.train);
}

void log_rounds(const fed::FederatedRun& run, std::ostream& log) {
  for (const auto& r : run.logs) {
    std::size_t ok = 0;
    for (const auto& c : r.clients) {
      if (c.ok) {
        ++ok;
      } else {
        log << "round " << r.round << ": site " << c.site << " failed: " << c.error << '\n';
      }
    }
    log << "round " << r.round << ": " << ok << "/" << r.clients.size() << " clients, checksum "
        << hex(r.checksum) << ", " << num(r.wall_seconds) << " s\n";
  }
}

std::string toggle_text(bool b) { return b ? "1" : "0"; }

}  // namespace

std::vector<data::SiteDataset> prepare_sites(const RunConfig& cfg) {
  cfg.validate();
  std::vector<data::SiteDataset> sites;
  if (cfg.data.empty()) {
    std::vector<std::size_t> sizes;
    std::vector<data::SiteShift> shifts;
    for (const auto& s : cfg.sites) {
      sizes.push_back(s.subjects);
      shifts.push_back(s.shift);
    }
    const auto base = data::PhantomParams::for_side(cfg.train.model.volume_side, cfg.subject_gates);
    sites = data::build_sites(sizes, shifts, base, cfg.train.seed);
  } else {
    sites = data::load_dataset(cfg.data / "manifest.tsv");
    for (const auto& site : sites) {
      for (const auto& subj : site.subjects) {
        if (subj.sequence.side != cfg.train.model.volume_side)
          throw ConfigError("volume_side", "dataset subject " + subj.id + " has side " +
                                               std::to_string(subj.sequence.side));
        if (subj.sequence.gates < cfg.train.model.gates)
          throw ConfigError("gates", "dataset subject " + subj.id + " has only " +
                                         std::to_string(subj.sequence.gates) + " gates");
      }
    }
  }
  bool found = false;
  for (auto& s : sites) {
    if (s.id == cfg.target_site) {
      s.labeled = false;
      found = true;
    }
  }
  if (!found) throw ConfigError("target_site", "no site with id " + std::to_string(cfg.target_site));
  return sites;
}

fed::FederatedRun train_sites(const RunConfig& cfg, const std::vector<data::SiteDataset>& sites,
                              fed::Transport* transport) {
  if (cfg.mode == TrainMode::kFederated)
    return fed::run_federated_training(sites, cfg.target_site, cfg.rounds, cfg.train, transport);

  std::vector<data::SiteDataset> sources;
  std::size_t next_id = 0;
  for (const auto& s : sites) {
    next_id = std::max(next_id, s.id + 1);
    if (s.id != cfg.target_site) sources.push_back(s);
  }
  std::vector<data::SiteDataset> pooled{fed::pool_sites(sources, next_id), find_site(sites, cfg.target_site)};
  return fed::run_federated_training(pooled, cfg.target_site, cfg.rounds, cfg.train, transport);
}

std::vector<losses::LossToggles> ablation_grid() {
  std::vector<losses::LossToggles> grid;
  for (int mask = 0; mask < 8; ++mask)
    grid.push_back({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0});
  return grid;
}

std::string rounds_csv(const std::vector<fed::RoundLog>& logs) {
  std::ostringstream out;
  out << "round,site,status,samples,dice,att,lmmd,total,checksum\n";
  for (const auto& r : logs) {
    for (const auto& c : r.clients) {
      out << r.round << ',' << c.site << ',' << (c.ok ? "ok" : "failed") << ',' << c.sample_count << ','
          << num(c.losses.dice) << ',' << num(c.losses.att) << ',' << num(c.losses.lmmd) << ','
          << num(c.losses.total) << ',' << hex(r.checksum) << '\n';
    }
  }
  return out.str();
}

std::string sweep_header() { return "alpha,beta,dsc_mean,dsc_std,hd_mean,asd_mean,sn_mean,sp_mean\n"; }

std::string sweep_csv_row(const SweepRow& row) {
  const auto& a = row.target;
  return num(row.alpha) + ',' + num(row.beta) + ',' + num(a.dsc.mean) + ',' + num(a.dsc.std) + ',' +
         num(a.hd.mean) + ',' + num(a.asd.mean) + ',' + num(a.sn.mean) + ',' + num(a.sp.mean) + '\n';
}

std::string ablation_header() {
  return "time_att,spatial_att,lmmd,dsc,grad_dice,grad_att,grad_lmmd,active_terms\n";
}

std::string ablation_csv_row(const AblationRow& row) {
  const auto& t = row.toggles;
  return toggle_text(t.time_att) + ',' + toggle_text(t.spatial_att) + ',' + toggle_text(t.lmmd) + ',' +
         num(row.dsc) + ',' + num(row.grad_dice) + ',' + num(row.grad_att) + ',' + num(row.grad_lmmd) + ',' +
         row.active_terms + '\n';
}

std::string gradcheck_csv(const std::vector<diag::GradCaseResult>& results) {
  std::ostringstream out;
  out << "case,seed,max_rel_error,checked,tolerance,status\n";
  for (const auto& r : results) {
    out << r.name << ',' << r.seed << ',' << num(r.max_rel_error) << ',' << r.checked << ','
        << num(r.tolerance) << ',' << (r.passed() ? "pass" : "FAIL") << '\n';
  }
  return out.str();
}

int cmd_generate(const RunConfig& cfg, std::ostream& log) {
  const auto sites = prepare_sites(cfg);
  const auto dir = cfg.out / "data";
  data::save_dataset(sites, dir);
  write_text(cfg.out / "config.txt", cfg.to_text());
  std::size_t subjects = 0;
  for (const auto& s : sites) subjects += s.subjects.size();
  log << "wrote " << subjects << " subjects in " << sites.size() << " sites to " << dir.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const auto sites = prepare_sites(cfg);
  std::unique_ptr<fed::Transport> transport;
  if (cfg.spool) transport = std::make_unique<fed::SpoolTransport>(cfg.out / "spool");
  const auto run = train_sites(cfg, sites, transport.get());
  log_rounds(run, log);
  fs::create_directories(cfg.out);
  model::save_weights(run.weights, cfg.out / "weights.fdwt");
  write_text(cfg.out / "rounds.csv", rounds_csv(run.logs));
  write_text(cfg.out / "config.txt", cfg.to_text());
  log << "weights checksum " << hex(run.weights.checksum()) << ", written to "
      << (cfg.out / "weights.fdwt").string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  const auto sites = prepare_sites(cfg);
  const auto path = cfg.weights.empty() ? cfg.out / "weights.fdwt" : cfg.weights;
  const auto weights = model::load_weights(path);
  const auto report = evaluate_target(cfg, sites, weights);
  write_text(cfg.out / "metrics.csv", metrics::to_csv(report));
  const auto& a = aggregate_for(report, cfg.train.structure);
  log << "site " << cfg.target_site << " " << model::to_string(cfg.train.structure) << ": DSC "
      << num(a.dsc.mean) << " +- " << num(a.dsc.std) << " over " << a.dsc.count << " cases, HD "
      << num(a.hd.mean) << ", ASD " << num(a.asd.mean) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  std::vector<diag::GradCaseResult> results;
  for (std::uint64_t seed = 0; seed < cfg.gradcheck_seeds; ++seed) {
    auto r = diag::primitive_grad_suite(seed);
    results.insert(results.end(), r.begin(), r.end());
    results.push_back(diag::model_grad_check(diag::small_check_config(), seed));
  }
  write_text(cfg.out / "gradcheck.csv", gradcheck_csv(results));

  // Worst case per check across seeds, in first-seen order.
  std::vector<std::string> order;
  std::map<std::string, diag::GradCaseResult> worst;
  for (const auto& r : results) {
    auto [it, inserted] = worst.emplace(r.name, r);
    if (inserted) order.push_back(r.name);
    else if (!r.passed() || (it->second.passed() && r.max_rel_error > it->second.max_rel_error)) it->second = r;
  }
  std::size_t failed = 0;
  for (const auto& name : order) {
    const auto& r = worst.at(name);
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %12.3e  tol %.0e  %s\n", name.c_str(), r.max_rel_error,
                  r.tolerance, r.passed() ? "pass" : "FAIL");
    log << line;
    if (!r.passed()) ++failed;
  }
  log << order.size() - failed << "/" << order.size() << " checks passed over " << cfg.gradcheck_seeds
      << " seeds\n";
  return failed == 0 ? kExitOk : kExitRuntime;
}

int cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  const auto sites = prepare_sites(cfg);
  fs::create_directories(cfg.out);
  const auto path = cfg.out / "sweep.csv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << sweep_header() << std::flush;
  for (double alpha : cfg.sweep_alphas) {
    for (double beta : cfg.sweep_betas) {
      RunConfig cell = cfg;
      cell.train.loss.alpha_att = alpha;
      cell.train.loss.beta_lmmd = beta;
      const auto run = train_sites(cell, sites);
      const auto report = evaluate_target(cell, sites, run.weights);
      SweepRow row{alpha, beta, aggregate_for(report, cfg.train.structure)};
      out << sweep_csv_row(row) << std::flush;
      log << "alpha " << num(alpha) << " beta " << num(beta) << ": DSC " << num(row.target.dsc.mean) << '\n';
    }
  }
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const auto sites = prepare_sites(cfg);
  fs::create_directories(cfg.out);
  const auto path = cfg.out / "ablation.csv";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << ablation_header() << std::flush;
  for (const auto& toggles : ablation_grid()) {
    RunConfig cell = cfg;
    cell.train.toggles = toggles;
    cell.train.track_term_gradients = true;
    const auto run = train_sites(cell, sites);
    AblationRow row;
    row.toggles = toggles;
    row.dsc = fed::mean_dsc(evaluate_target(cell, sites, run.weights));
    for (const auto& r : run.logs) {
      for (const auto& c : r.clients) {
        if (!c.ok) continue;
        row.grad_dice = std::max(row.grad_dice, c.losses.grad_norm_dice);
        row.grad_att = std::max(row.grad_att, c.losses.grad_norm_att);
        row.grad_lmmd = std::max(row.grad_lmmd, c.losses.grad_norm_lmmd);
      }
    }
    std::vector<std::string> terms;
    if (row.grad_dice > 0) terms.push_back("dice");
    if (row.grad_att > 0 && toggles.time_att) terms.push_back("att_time");
    if (row.grad_att > 0 && toggles.spatial_att) terms.push_back("att_space");
    if (row.grad_lmmd > 0) terms.push_back("lmmd");
    for (std::size_t i = 0; i < terms.size(); ++i) row.active_terms += (i ? ";" : "") + terms[i];
    out << ablation_csv_row(row) << std::flush;
    log << "time_att=" << toggles.time_att << " spatial_att=" << toggles.spatial_att
        << " lmmd=" << toggles.lmmd << ": DSC " << num(row.dsc) << ", gradients from " << row.active_terms
        << '\n';
  }
  return kExitOk;
}

std::vector<std::string> command_names() {
  return {"generate", "train", "evaluate", "gradcheck", "sweep", "ablate"};
}

int run_command(const std::string& name, const RunConfig& cfg, std::ostream& log, std::ostream& err) {
  try {
    if (name == "generate") return cmd_generate(cfg, log);
    if (name == "train") return cmd_train(cfg, log);
    if (name == "evaluate") return cmd_evaluate(cfg, log);
    if (name == "gradcheck") return cmd_gradcheck(cfg, log);
    if (name == "sweep") return cmd_sweep(cfg, log);
    if (name == "ablate") return cmd_ablate(cfg, log);
    err << "unknown command '" << name << "'\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << name << " failed: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace fedda::cli
