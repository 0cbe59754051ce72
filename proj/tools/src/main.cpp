#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedda_cli/commands.hpp"

namespace {

using fedda::cli::Overrides;

// Turns leftover "--key=value" / "--key value" arguments into overrides.
// Dashes in key names are accepted as underscores.
Overrides collect_overrides(const std::vector<std::string>& extras) {
  Overrides out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0) throw fedda::cli::ConfigError(arg, "expected --key=value");
    std::string body = arg.substr(2);
    std::string key, value;
    if (auto eq = body.find('='); eq != std::string::npos) {
      key = body.substr(0, eq);
      value = body.substr(eq + 1);
    } else if (i + 1 < extras.size() && extras[i + 1].rfind("--", 0) != 0) {
      key = body;
      value = extras[++i];
    } else {
      throw fedda::cli::ConfigError(body, "missing value");
    }
    for (char& c : key)
      if (c == '-') c = '_';
    out.emplace_back(key, value);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated cardiac segmentation with attention consistency and LMMD"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<CLI::App*> subs;
  for (const auto& name : fedda::cli::command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->allow_extras();
    sub->add_option("--config", config_path, "key=value config file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "master seed");
    sub->footer("Any config key can be overridden with --key=value.");
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : fedda::cli::kExitUsage;
  }

  for (auto* sub : subs) {
    if (!sub->parsed()) continue;
    fedda::cli::RunConfig cfg;
    try {
      Overrides overrides = collect_overrides(sub->remaining());
      if (!out_dir.empty()) overrides.emplace_back("out", out_dir);
      if (seed) overrides.emplace_back("seed", std::to_string(*seed));
      cfg = config_path.empty() ? fedda::cli::parse_config("", overrides)
                                : fedda::cli::load_config(config_path, overrides);
    } catch (const std::exception& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return fedda::cli::kExitUsage;
    }
    return fedda::cli::run_command(sub->get_name(), cfg, std::cout, std::cerr);
  }
  return fedda::cli::kExitUsage;
}
