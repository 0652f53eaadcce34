#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "urbanpulse/cli/pipeline.hpp"

namespace {

using Stage = std::function<void(const urbanpulse::cli::RunConfig&)>;

const std::map<std::string, std::pair<Stage, const char*>>& stages() {
  using namespace urbanpulse::cli;
  static const std::map<std::string, std::pair<Stage, const char*>> table{
      {"synth", {stage_synth, "generate the source and target synthetic cities"}},
      {"ingest", {stage_ingest, "clean traces and build per-interval flow snapshots"}},
      {"pretrain", {stage_pretrain, "train the forecaster on the source city"}},
      {"coldstart", {stage_coldstart, "fine-tune unfrozen layers on the target city"}},
      {"rl-finetune", {stage_rl_finetune, "adapt the output head with PPO"}},
      {"evaluate", {stage_evaluate, "score checkpoints on the held-out test splits"}},
      {"report", {stage_report, "render SVG plots from the stage CSVs"}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"urbanpulse: origin-destination flow forecasting with transfer and RL head adaptation"};
  app.fallthrough();
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "run configuration (JSON)")->required();
  app.add_option("--seed", seed, "override the configuration seed");
  app.add_option("--out", out_dir, "override the run directory");
  for (const auto& [name, entry] : stages()) app.add_subcommand(name, entry.second);

  // CLI11 reports a stray word as a missing subcommand; name it instead.
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" || a == "--seed" || a == "--out") {
      ++i;
      continue;
    }
    if (a.empty() || a[0] == '-') continue;
    if (!stages().count(a)) {
      std::cerr << "error: usage: unknown subcommand '" << a << "'\n" << app.help();
      return 2;
    }
    break;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n" << app.help();
    return 2;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    auto cfg = urbanpulse::cli::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    stages().at(name).first(cfg);
  } catch (const urbanpulse::cli::StageError& e) {
    std::cerr << "error: " << e.stage() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << name << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
