#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedda/data/phantom.hpp"
#include "fedda/federated/federated.hpp"

namespace fedda::cli {

// Rejected configuration; key() names the offending setting.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct SiteSpec {
  std::size_t subjects = 1;
  data::SiteShift shift;
};

enum class TrainMode { kFederated, kCentralized };

struct RunConfig {
  fed::TrainConfig train;
  std::size_t rounds = 30;
  std::size_t subject_gates = 8;
  std::vector<SiteSpec> sites;
  std::size_t target_site = 1;
  TrainMode mode = TrainMode::kFederated;
  std::filesystem::path out = "out";
  std::filesystem::path data;     // dataset directory with manifest.tsv; empty = synthesize
  std::filesystem::path weights;  // input weights for evaluate
  bool spool = false;             // exchange messages as files under out/spool
  std::vector<double> sweep_alphas{1e-4, 1e-2, 1.0, 100.0, 1e4};
  std::vector<double> sweep_betas{1e-4, 1e-2, 1.0, 100.0, 1e4};
  std::size_t gradcheck_seeds = 10;

  // Desk-scale defaults: V=16, P=4, T=2, L=2, d=64, sites of 12/5/8.
  RunConfig();

  // Throws ConfigError naming the first offending key.
  void validate() const;
  // key=value lines accepted by parse_config, in a fixed order.
  std::string to_text() const;
};

using Overrides = std::vector<std::pair<std::string, std::string>>;

// Flat "key=value" lines; '#' starts a comment; blank lines are skipped.
// Overrides are applied afterwards in order. Unknown keys, unparsable values
// and invariant violations throw ConfigError.
RunConfig parse_config(std::string_view text, const Overrides& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const Overrides& overrides = {});

// Every recognised key.
std::vector<std::string> config_keys();

}  // namespace fedda::cli
