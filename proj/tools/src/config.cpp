#include "fedda_cli/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "fedda/common/bytes.hpp"

namespace fedda::cli {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(std::string_view(s).substr(start, pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "expected a number, got '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(out);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& part : split(v, ',')) out.push_back(parse_double(key, part));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + f(xs[i]);
  return out;
}

std::string format_shift(const data::SiteShift& s) {
  return fmt(s.gain) + ":" + fmt(s.offset) + ":" + std::to_string(s.blur_radius) + ":" +
         fmt(s.noise_multiplier);
}

data::SiteShift parse_shift(const std::string& key, const std::string& v) {
  const auto parts = split(v, ':');
  if (parts.size() != 4) {
    throw ConfigError(key, "expected gain:offset:blur:noise, got '" + v + "'");
  }
  return {parse_double(key, parts[0]), parse_double(key, parts[1]), parse_size(key, parts[2]),
          parse_double(key, parts[3])};
}

// Site sizes and shifts arrive as separate keys and are combined after all
// assignments.
struct PendingSites {
  std::vector<std::size_t> sizes;
  std::vector<data::SiteShift> shifts;
  bool sizes_set = false, shifts_set = false;
};

struct Key {
  std::function<void(RunConfig&, PendingSites&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, Key>>& key_table() {
  using P = PendingSites;
  static const std::vector<std::pair<std::string, Key>> table = [] {
    std::vector<std::pair<std::string, Key>> t;
    auto sz = [&](const char* name, auto member) {
      t.push_back({name, {[=](RunConfig& c, P&, const std::string& v) { member(c) = parse_size(name, v); },
                          [=](const RunConfig& c) { return std::to_string(member(const_cast<RunConfig&>(c))); }}});
    };
    auto real_key = [&](const char* name, auto member) {
      t.push_back({name, {[=](RunConfig& c, P&, const std::string& v) { member(c) = parse_double(name, v); },
                          [=](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }}});
    };
    auto bool_key = [&](const char* name, auto member) {
      t.push_back({name, {[=](RunConfig& c, P&, const std::string& v) { member(c) = parse_bool(name, v); },
                          [=](const RunConfig& c) { return fmt(member(const_cast<RunConfig&>(c))); }}});
    };

    sz("volume_side", [](RunConfig& c) -> std::size_t& { return c.train.model.volume_side; });
    sz("patch_side", [](RunConfig& c) -> std::size_t& { return c.train.model.patch_side; });
    sz("gates", [](RunConfig& c) -> std::size_t& { return c.train.model.gates; });
    sz("embed_dim", [](RunConfig& c) -> std::size_t& { return c.train.model.embed_dim; });
    sz("heads", [](RunConfig& c) -> std::size_t& { return c.train.model.heads; });
    sz("blocks", [](RunConfig& c) -> std::size_t& { return c.train.model.blocks; });
    real_key("layer_norm_eps", [](RunConfig& c) -> double& { return c.train.model.layer_norm_eps; });
    t.push_back({"structure",
                 {[](RunConfig& c, P&, const std::string& v) {
                    try {
                      c.train.structure = model::parse_structure(v);
                    } catch (const std::invalid_argument& e) {
                      throw ConfigError("structure", e.what());
                    }
                  },
                  [](const RunConfig& c) { return std::string(model::to_string(c.train.structure)); }}});
    real_key("alpha_att", [](RunConfig& c) -> double& { return c.train.loss.alpha_att; });
    real_key("beta_lmmd", [](RunConfig& c) -> double& { return c.train.loss.beta_lmmd; });
    bool_key("time_att", [](RunConfig& c) -> bool& { return c.train.toggles.time_att; });
    bool_key("spatial_att", [](RunConfig& c) -> bool& { return c.train.toggles.spatial_att; });
    bool_key("lmmd", [](RunConfig& c) -> bool& { return c.train.toggles.lmmd; });
    sz("rounds", [](RunConfig& c) -> std::size_t& { return c.rounds; });
    sz("local_epochs", [](RunConfig& c) -> std::size_t& { return c.train.local_epochs; });
    sz("batch_size", [](RunConfig& c) -> std::size_t& { return c.train.batch_size; });
    sz("windows_per_subject", [](RunConfig& c) -> std::size_t& { return c.train.windows_per_subject; });
    sz("stats_batch", [](RunConfig& c) -> std::size_t& { return c.train.stats_batch; });
    real_key("learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    t.push_back({"seed", {[](RunConfig& c, P&, const std::string& v) { c.train.seed = parse_size("seed", v); },
                          [](const RunConfig& c) { return std::to_string(c.train.seed); }}});
    bool_key("parallel_clients", [](RunConfig& c) -> bool& { return c.train.parallel_clients; });
    bool_key("spool", [](RunConfig& c) -> bool& { return c.spool; });
    sz("subject_gates", [](RunConfig& c) -> std::size_t& { return c.subject_gates; });
    t.push_back({"site_sizes",
                 {[](RunConfig&, P& p, const std::string& v) {
                    p.sizes.clear();
                    for (const auto& s : split(v, ',')) p.sizes.push_back(parse_size("site_sizes", s));
                    p.sizes_set = true;
                  },
                  [](const RunConfig& c) {
                    return join<SiteSpec>(c.sites, [](const SiteSpec& s) { return std::to_string(s.subjects); });
                  }}});
    t.push_back({"site_shifts",
                 {[](RunConfig&, P& p, const std::string& v) {
                    p.shifts.clear();
                    for (const auto& s : split(v, ',')) p.shifts.push_back(parse_shift("site_shifts", s));
                    p.shifts_set = true;
                  },
                  [](const RunConfig& c) {
                    return join<SiteSpec>(c.sites, [](const SiteSpec& s) { return format_shift(s.shift); });
                  }}});
    sz("target_site", [](RunConfig& c) -> std::size_t& { return c.target_site; });
    t.push_back({"mode",
                 {[](RunConfig& c, P&, const std::string& v) {
                    if (v == "federated") c.mode = TrainMode::kFederated;
                    else if (v == "centralized") c.mode = TrainMode::kCentralized;
                    else throw ConfigError("mode", "expected federated or centralized, got '" + v + "'");
                  },
                  [](const RunConfig& c) {
                    return std::string(c.mode == TrainMode::kFederated ? "federated" : "centralized");
                  }}});
    t.push_back({"out", {[](RunConfig& c, P&, const std::string& v) { c.out = v; },
                         [](const RunConfig& c) { return c.out.string(); }}});
    t.push_back({"data", {[](RunConfig& c, P&, const std::string& v) { c.data = v; },
                          [](const RunConfig& c) { return c.data.string(); }}});
    t.push_back({"weights", {[](RunConfig& c, P&, const std::string& v) { c.weights = v; },
                             [](const RunConfig& c) { return c.weights.string(); }}});
    t.push_back({"sweep_alphas",
                 {[](RunConfig& c, P&, const std::string& v) { c.sweep_alphas = parse_doubles("sweep_alphas", v); },
                  [](const RunConfig& c) { return join<double>(c.sweep_alphas, [](const double& x) { return fmt(x); }); }}});
    t.push_back({"sweep_betas",
                 {[](RunConfig& c, P&, const std::string& v) { c.sweep_betas = parse_doubles("sweep_betas", v); },
                  [](const RunConfig& c) { return join<double>(c.sweep_betas, [](const double& x) { return fmt(x); }); }}});
    sz("gradcheck_seeds", [](RunConfig& c) -> std::size_t& { return c.gradcheck_seeds; });
    return t;
  }();
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& [k, v] : key_table())
    if (k == name) return &v;
  return nullptr;
}

}  // namespace

RunConfig::RunConfig() {
  auto& m = train.model;
  m.volume_side = 16;
  m.patch_side = 4;
  m.gates = 2;
  m.embed_dim = 64;
  m.heads = 4;
  m.blocks = 2;
  train.windows_per_subject = 2;
  sites = {{12, {1.0, 0.0, 0, 0.0}}, {5, {1.1, 0.02, 0, 1.5}}, {8, {0.9, -0.02, 1, 0.0}}};
  target_site = 1;
}

void RunConfig::validate() const {
  const auto& m = train.model;
  auto fail = [](const char* key, const std::string& msg) { throw ConfigError(key, msg); };
  if (m.volume_side == 0) fail("volume_side", "must be positive");
  if (m.patch_side == 0) fail("patch_side", "must be positive");
  if (m.volume_side % m.patch_side != 0) fail("patch_side", "must divide volume_side");
  if (m.gates == 0) fail("gates", "must be at least 1");
  if (m.gates > subject_gates) fail("gates", "window longer than the subject_gates cycle");
  if (m.embed_dim == 0) fail("embed_dim", "must be positive");
  if (m.heads == 0) fail("heads", "must be positive");
  if (m.embed_dim % m.heads != 0) fail("heads", "must divide embed_dim");
  if (m.blocks == 0) fail("blocks", "must be at least 1");
  if (!(m.layer_norm_eps > 0.0)) fail("layer_norm_eps", "must be positive");
  if (!(train.loss.alpha_att >= 0.0) || !std::isfinite(train.loss.alpha_att)) {
    fail("alpha_att", "must be finite and non-negative");
  }
  if (!(train.loss.beta_lmmd >= 0.0) || !std::isfinite(train.loss.beta_lmmd)) {
    fail("beta_lmmd", "must be finite and non-negative");
  }
  if (train.batch_size == 0) fail("batch_size", "must be positive");
  if (train.stats_batch == 0) fail("stats_batch", "must be positive");
  if (!(train.learning_rate > 0.0) || !std::isfinite(train.learning_rate)) {
    fail("learning_rate", "must be positive and finite");
  }
  if (subject_gates == 0) fail("subject_gates", "must be positive");
  if (sites.size() < 2) fail("site_sizes", "need at least two sites (one target, one source)");
  for (const auto& s : sites) {
    if (s.subjects == 0) fail("site_sizes", "every site needs at least one subject");
    try {
      s.shift.validate();
    } catch (const std::invalid_argument& e) {
      fail("site_shifts", e.what());
    }
  }
  if (target_site >= sites.size()) fail("target_site", "no such site");
  if (train.stats_batch > sites[target_site].subjects * subject_gates) {
    fail("stats_batch", "exceeds the number of target windows");
  }
  if (sweep_alphas.empty()) fail("sweep_alphas", "must not be empty");
  if (sweep_betas.empty()) fail("sweep_betas", "must not be empty");
  for (double a : sweep_alphas)
    if (!(a >= 0.0) || !std::isfinite(a)) fail("sweep_alphas", "values must be finite and non-negative");
  for (double b : sweep_betas)
    if (!(b >= 0.0) || !std::isfinite(b)) fail("sweep_betas", "values must be finite and non-negative");
  if (gradcheck_seeds == 0) fail("gradcheck_seeds", "must be positive");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, key] : key_table()) out += k + "=" + key.get(*this) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : key_table()) out.push_back(k);
  return out;
}

RunConfig parse_config(std::string_view text, const Overrides& overrides) {
  RunConfig cfg;
  PendingSites pending;
  auto assign = [&](const std::string& k, const std::string& v) {
    const Key* key = find_key(k);
    if (!key) throw ConfigError(k, "unknown key");
    key->set(cfg, pending, v);
  };

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key=value, got '" + body + "'");
    }
    assign(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
  }
  for (const auto& [k, v] : overrides) assign(k, v);

  if (pending.sizes_set || pending.shifts_set) {
    std::vector<SiteSpec> sites = cfg.sites;
    if (pending.sizes_set) {
      sites.resize(pending.sizes.size());
      for (std::size_t i = 0; i < sites.size(); ++i) sites[i].subjects = pending.sizes[i];
    }
    if (pending.shifts_set) {
      if (pending.shifts.size() != sites.size()) {
        throw ConfigError("site_shifts", "expected " + std::to_string(sites.size()) +
                                             " entries, one per site");
      }
      for (std::size_t i = 0; i < sites.size(); ++i) sites[i].shift = pending.shifts[i];
    }
    cfg.sites = std::move(sites);
  }
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides) {
  Bytes bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("config", e.what());
  }
  return parse_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                      overrides);
}

}  // namespace fedda::cli
