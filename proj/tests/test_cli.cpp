#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "test_support.hpp"
#include "urbanpulse/cli/pipeline.hpp"

using namespace urbanpulse;
using namespace urbanpulse::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = URBANPULSE_CLI;
const fs::path kSmoke = fs::path(URBANPULSE_SOURCE_DIR) / "configs" / "smoke.json";

struct Run {
  int code;
  std::string err;
};

Run invoke(const std::string& args, const fs::path& scratch) {
  const auto err = scratch / "stderr.txt";
  const std::string cmd = kCli.string() + " " + args + " 2> " + err.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, test::slurp(err)};
}

Run stage(const std::string& name, const fs::path& out) {
  return invoke(name + " --config " + kSmoke.string() + " --out " + out.string(), out.parent_path());
}

}  // namespace

TEST(Config, DefaultsAndOverrides) {
  auto c = config_from_json(json::parse(R"({"seed": 9, "train": {"epochs": 2, "target_mode": "all_steps",
                                            "freeze": {"embedding": false}}, "rl": {"ppo": {"blocks": 16}}})"));
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.train.epochs, 2u);
  EXPECT_EQ(c.train.target_mode, mobility::TargetMode::AllSteps);
  EXPECT_FALSE(c.freeze.embedding);
  EXPECT_EQ(c.freeze.conv_layers, 1u);
  EXPECT_EQ(c.rl.ppo.blocks, 16u);
  EXPECT_EQ(c.rl.smoothing_window, 100u);
  EXPECT_EQ(c.source_city.interval_s, 900);
  EXPECT_EQ(c.train_config().seed, 9u);
  EXPECT_EQ(c.resolve("reports"), fs::path("runs/default/reports"));
  EXPECT_EQ(c.resolve("/abs/x"), fs::path("/abs/x"));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(config_from_json(json::parse(R"({"sed": 1})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"train": {"epoch": 1}})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"train": {"target_mode": "last"}})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"source_city": {"interval_s": 0}})")), std::invalid_argument);
  EXPECT_THROW(config_from_json(json::parse(R"({"rl": {"ppo": {"clip": 1.5}}})")), std::invalid_argument);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"smoke.json", "desk.json"}) {
    const auto c = load_config(fs::path(URBANPULSE_SOURCE_DIR) / "configs" / name);
    EXPECT_EQ(c.encoder.edge_dim, 256u) << name;
    EXPECT_EQ(c.rl.smoothing_window, 100u) << name;
  }
  const auto desk = load_config(fs::path(URBANPULSE_SOURCE_DIR) / "configs" / "desk.json");
  EXPECT_EQ(desk.source_city.n_pois, 50u);
  EXPECT_EQ(desk.source_city.n_agents, 500u);
  EXPECT_EQ(desk.source_city.n_intervals, 288u);
  EXPECT_EQ(desk.source_city.seed, 7u);
}

TEST(Svg, LogScaleAxisAndGaps) {
  const auto svg = render_svg({"t", "x", "y", true}, {{"a", {0, 1, 2, 3}, {1, 0, 10, 100}}});
  EXPECT_NE(svg.find(">1e0<"), std::string::npos);
  EXPECT_NE(svg.find(">1e2<"), std::string::npos);
  // The zero count splits the line into two polylines.
  std::size_t lines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
  EXPECT_EQ(lines, 2u);
  EXPECT_EQ(svg, render_svg({"t", "x", "y", true}, {{"a", {0, 1, 2, 3}, {1, 0, 10, 100}}}));
  EXPECT_THROW(render_svg({}, {{"bad", {0, 1}, {1}}}), std::invalid_argument);
}

TEST(Stages, MissingInputsAreNamed) {
  RunConfig c;
  c.out = test::scratch_dir("cli_missing");
  try {
    stage_report(c);
    FAIL() << "report ran without inputs";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "report");
    EXPECT_NE(std::string(e.what()).find("eval_source_outcomes.csv"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("pretrain_epochs.csv"), std::string::npos);
  }
  EXPECT_THROW(stage_coldstart(c), StageError);
}

TEST(Cli, UnknownSubcommandExitsTwo) {
  const auto dir = test::scratch_dir("cli_usage");
  auto r = invoke("frobnicate --config " + kSmoke.string(), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown subcommand 'frobnicate'"), std::string::npos);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(invoke("", dir).code, 2);
  EXPECT_EQ(invoke("--help", dir).code, 0);
}

TEST(Cli, StageErrorIsOneParsableLine) {
  const auto dir = test::scratch_dir("cli_error");
  auto r = stage("evaluate", dir / "run");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: evaluate: missing input: ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  r = invoke("synth --config " + (dir / "absent.json").string(), dir);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: synth: cannot open config", 0), 0u) << r.err;
}

TEST(Cli, IngestIsByteIdenticalAcrossRuns) {
  const auto dir = test::scratch_dir("cli_ingest");
  ASSERT_EQ(stage("synth", dir / "run").code, 0);
  ASSERT_EQ(stage("ingest", dir / "run").code, 0);
  const auto first = test::slurp(dir / "run" / "source" / "snapshots.jsonl");
  const auto first_target = test::slurp(dir / "run" / "target" / "snapshots.jsonl");
  ASSERT_FALSE(first.empty());
  ASSERT_EQ(stage("ingest", dir / "run").code, 0);
  EXPECT_EQ(test::slurp(dir / "run" / "source" / "snapshots.jsonl"), first);
  EXPECT_EQ(test::slurp(dir / "run" / "target" / "snapshots.jsonl"), first_target);
}

TEST(Cli, EvaluateOnPretrainEmitsOutcomeCsv) {
  const auto dir = test::scratch_dir("cli_eval");
  const auto run = dir / "run";
  for (const char* s : {"synth", "ingest", "pretrain", "evaluate", "report"}) ASSERT_EQ(stage(s, run).code, 0) << s;
  const auto rows = transfer::read_table(run / "reports" / "eval_source_outcomes.csv", transfer::kOutcomeHeader);
  EXPECT_FALSE(rows.empty());
  const auto csv = test::slurp(run / "reports" / "eval_source_outcomes.csv");
  EXPECT_NE(csv.find("\nt,correct,over,under\n"), std::string::npos);
  EXPECT_EQ(csv.rfind("# urbanpulse-csv v1 ", 0), 0u);
  EXPECT_TRUE(fs::exists(run / "reports" / "source_outcomes.svg"));
  EXPECT_FALSE(fs::exists(run / "reports" / "target_outcomes.svg"));
  const auto svg = test::slurp(run / "reports" / "source_outcomes.svg");
  EXPECT_NE(svg.find("log scale"), std::string::npos);
  EXPECT_NE(svg.find(">1e0<"), std::string::npos);
}

TEST(Cli, FullPipelineEmitsEveryArtifact) {
  const auto dir = test::scratch_dir("cli_full");
  const auto run = dir / "run";
  for (const char* s : {"synth", "ingest", "pretrain", "coldstart", "rl-finetune", "evaluate", "report"})
    ASSERT_EQ(stage(s, run).code, 0) << s;
  for (const char* f : {"checkpoints/pretrain.upck", "checkpoints/coldstart.upck", "checkpoints/rl_policy.json",
                        "reports/pretrain_epochs.csv", "reports/pretrain_steps.csv", "reports/coldstart_epochs.csv",
                        "reports/rl_rewards.csv", "reports/rl.json", "reports/metrics.json", "reports/eval_target_outcomes.csv",
                        "reports/pretrain_loss.svg", "reports/coldstart_loss.svg", "reports/target_outcomes.svg",
                        "reports/rl_rewards.svg"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  const auto rewards = transfer::read_table(run / "reports" / "rl_rewards.csv", kRewardHeader);
  std::vector<double> raw, smoothed;
  for (const auto& r : rewards) {
    raw.push_back(r[1]);
    smoothed.push_back(r[2]);
  }
  EXPECT_EQ(smoothed, rl::smooth_rewards(raw, 100));
  const auto pre = transfer::load_checkpoint(run / "checkpoints" / "pretrain.upck");
  const auto cs = transfer::load_checkpoint(run / "checkpoints" / "coldstart.upck");
  EXPECT_EQ(transfer::frozen_hash(pre.model, {}), transfer::frozen_hash(cs.model, {}));
  EXPECT_EQ(cs.stats.flow_max, pre.stats.flow_max);
  EXPECT_NE(cs.stats.lat, pre.stats.lat);
}
