#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "urbanpulse/cli/config.hpp"
#include "urbanpulse/cli/svg.hpp"
#include "urbanpulse/mobility.hpp"

// Pipeline stages. Each stage reads its inputs from files under the run
// directory and writes its artifacts back there; the in-memory helpers are
// shared with the acceptance harness.
namespace urbanpulse::cli {

namespace fs = std::filesystem;

// Stage failure carrying the stage name for the one-line error report.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& msg) : std::runtime_error(msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

inline void log(const std::string& stage, const std::string& msg) { std::cerr << "[" << stage << "] " << msg << '\n'; }

inline void require_files(const std::string& stage, const std::vector<fs::path>& files) {
  std::string missing;
  for (const auto& f : files)
    if (!fs::exists(f)) missing += (missing.empty() ? "" : ", ") + f.string();
  if (!missing.empty()) throw StageError(stage, "missing input: " + missing);
}

// ---------------------------------------------------------------- city data

struct CityData {
  std::vector<mobility::Poi> pois;
  mobility::TypeMap types;
  std::vector<mobility::WeatherRecord> weather;  // one record per snapshot interval
  std::vector<mobility::Snapshot> snapshots;

  std::span<const mobility::Snapshot> range(const transfer::Range& r) const {
    return std::span<const mobility::Snapshot>(snapshots).subspan(r.begin, r.size());
  }
};

inline fs::path traces_file(const fs::path& dir) { return dir / "traces.csv"; }
inline fs::path pois_file(const fs::path& dir) { return dir / "pois.csv"; }
inline fs::path weather_file(const fs::path& dir) { return dir / "weather.csv"; }
inline fs::path snapshots_file(const fs::path& dir) { return dir / "snapshots.jsonl"; }
inline fs::path types_file(const fs::path& dir) { return dir / "types.json"; }

// In-memory synthetic city, run through the same cleaning and snapshot code as ingested data.
inline CityData synthesize_city(const synthetic::CityConfig& cc, const IngestConfig& ic) {
  CityData d;
  auto city = synthetic::generate_city(cc);
  d.pois = city.pois;
  d.types = city.types;
  const auto traces = mobility::clean_traces(synthetic::simulate_traces(cc, city), ic.max_speed_kmh);
  d.snapshots = mobility::build_snapshots(traces, d.pois, {cc.start_time, cc.interval_s, static_cast<std::int64_t>(cc.n_intervals)},
                                          {ic.max_dist_km, ic.max_speed_kmh});
  d.weather = mobility::align_weather(synthetic::generate_weather(cc), d.snapshots.size());
  return d;
}

inline CityData load_city(const std::string& stage, const fs::path& dir) {
  require_files(stage, {types_file(dir), pois_file(dir), weather_file(dir), snapshots_file(dir)});
  CityData d;
  d.types = mobility::read_type_map(types_file(dir));
  const auto known = d.types.size();
  d.pois = mobility::read_poi_csv(pois_file(dir), d.types);
  if (d.types.size() != known) throw StageError(stage, pois_file(dir).string() + ": POI type not listed in " + types_file(dir).string());
  d.snapshots = mobility::read_snapshots(snapshots_file(dir));
  if (d.snapshots.empty()) throw StageError(stage, snapshots_file(dir).string() + ": no snapshots");
  d.weather = mobility::align_weather(mobility::read_weather_csv(weather_file(dir)), d.snapshots.size());
  return d;
}

// --------------------------------------------------------- prepared datasets

struct SourceData {
  transfer::Split split;
  mobility::NormStats stats;
  transfer::WindowSet train, val, test;
};

inline SourceData prepare_source(const CityData& city, const transfer::TrainConfig& tc) {
  SourceData s;
  s.split = transfer::split_dataset(city.snapshots.size(), transfer::SplitScheme::Source, tc.window);
  s.stats = mobility::compute_norm_stats(city.pois, city.range(s.split.first), city.weather);
  auto set = [&](const transfer::Range& r) {
    return transfer::make_window_set(city.range(r), city.pois, city.weather, s.stats, tc.window, tc.stride);
  };
  s.train = set(s.split.first);
  s.val = set(s.split.second);
  s.test = set(s.split.third);
  return s;
}

// Target city: cold-start split (80/20 train/val holdout), RL split and
// evaluation split. Node statistics come from the cold-start train part; the
// flow scale is inherited from the source model.
struct TargetData {
  transfer::Split split;
  transfer::Range coldstart_train, coldstart_val;
  mobility::NormStats stats;
  transfer::WindowSet train, val, test;  // stride from the train config
  transfer::WindowSet rl, rl_eval;      // stride from the PPO config
};

inline TargetData prepare_target(const CityData& city, const transfer::TrainConfig& tc, double inherited_flow_max,
                                 std::size_t rl_stride) {
  TargetData t;
  t.split = transfer::split_dataset(city.snapshots.size(), transfer::SplitScheme::Target, tc.window);
  std::tie(t.coldstart_train, t.coldstart_val) = transfer::holdout(t.split.first, 0.8);
  t.stats = mobility::compute_norm_stats(city.pois, city.range(t.coldstart_train), city.weather);
  t.stats.flow_max = inherited_flow_max;
  auto set = [&](const transfer::Range& r, std::size_t stride) {
    return transfer::make_window_set(city.range(r), city.pois, city.weather, t.stats, tc.window, stride);
  };
  t.train = set(t.coldstart_train, tc.stride);
  t.val = set(t.coldstart_val, tc.stride);
  t.test = set(t.split.third, tc.stride);
  t.rl = set(t.split.second, rl_stride);
  t.rl_eval = set(t.split.third, rl_stride);
  return t;
}

// ------------------------------------------------------------ RL experiment

struct RlOutcome {
  double reward_unperturbed = 0.0;  // zero action, cold-start head, evaluation split
  double reward_start = 0.0;        // zero action, head after scaling
  double reward_policy = 0.0;       // deterministic policy
  rl::RlTrainResult training;

  // Share of the scaling-induced gap closed by the policy; 0 when there is no gap.
  double recovery() const {
    const double gap = reward_unperturbed - reward_start;
    return gap != 0.0 ? (reward_policy - reward_start) / gap : 0.0;
  }

  // Means of the smoothed reward over the first, middle and last third of training.
  std::vector<double> thirds() const {
    const auto& s = training.smoothed_rewards;
    std::vector<double> sum(3, 0.0), count(3, 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
      sum[i * 3 / s.size()] += s[i];
      count[i * 3 / s.size()] += 1.0;
    }
    for (std::size_t k = 0; k < 3; ++k) sum[k] = count[k] > 0 ? sum[k] / count[k] : 0.0;
    return sum;
  }
};

// Trains a PPO agent that adapts the (optionally scaled) head of `coldstart`.
inline RlOutcome rl_experiment(const model::FlowModel& coldstart, const TargetData& target, const RlRunConfig& rc,
                               mobility::TargetMode mode, std::uint64_t seed, rl::PpoAgent* agent_out = nullptr) {
  const rl::GroupingMatrix grouping(rc.ppo.blocks);
  rl::HeadEnvironment env(coldstart, target.rl, mode, grouping), eval(coldstart, target.rl_eval, mode, grouping);
  const std::size_t K = rc.ppo.episode_length;
  if (eval.episode_count(K) == 0) throw std::invalid_argument("evaluation split too short for one episode of length " + std::to_string(K));
  RlOutcome out;
  rl::RunningStandardizer unused;
  const auto zero = rl::zero_actor(grouping.action_dim());
  out.reward_unperturbed = rl::mean_episode_reward(eval, K, zero, unused, rc.reward);
  auto weight = env.base_weight();
  for (auto& w : weight) w *= rc.head_scale;
  env.set_base_head(weight, env.base_bias());
  eval.set_base_head(weight, eval.base_bias());
  out.reward_start = rl::mean_episode_reward(eval, K, zero, unused, rc.reward);

  rl::PpoAgent agent(rl::kStateDim, grouping.action_dim(), rc.ppo, seed);
  out.training = rl::train_ppo(env, agent, rc.episodes, rc.reward, seed, rc.smoothing_window);
  out.reward_policy = rl::mean_episode_reward(eval, K, agent.actor(false), agent.standardizer(), rc.reward);
  if (agent_out) *agent_out = std::move(agent);
  return out;
}

// ------------------------------------------------------------------- stages

inline constexpr const char* kRewardHeader = "episode,raw_reward,smoothed_reward";

inline fs::path pretrain_checkpoint(const RunConfig& c) { return c.checkpoint_dir() / "pretrain.upck"; }
inline fs::path coldstart_checkpoint(const RunConfig& c) { return c.checkpoint_dir() / "coldstart.upck"; }

namespace stage_detail {

inline std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

inline std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

inline void write_json(const fs::path& path, const json& j) {
  auto out = mobility::io_detail::open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

inline json read_json(const fs::path& path) {
  auto in = mobility::io_detail::open_in(path);
  return json::parse(in);
}

inline void check_types(const std::string& stage, const CityData& d, const model::EncoderConfig& enc) {
  if (d.types.size() > enc.n_types)
    throw StageError(stage, std::to_string(d.types.size()) + " POI types but the encoder embeds only " + std::to_string(enc.n_types));
}

inline transfer::TrainConfig with_progress(transfer::TrainConfig tc, const std::string& stage) {
  tc.on_epoch = [stage](const transfer::EpochRecord& e) {
    log(stage, "epoch " + std::to_string(e.epoch) + " train " + fixed(e.train_loss) + " val " + fixed(e.val_loss));
  };
  return tc;
}

inline void write_outcome_csv(const fs::path& path, const transfer::EvalReport& r) { transfer::write_outcomes(path, r); }

inline json report_json(const transfer::EvalReport& r) {
  return {{"mse", r.mse}, {"mae", r.mae}, {"slots", r.slots}, {"correct", r.totals.correct}, {"over", r.totals.over},
          {"under", r.totals.under}, {"accuracy", r.accuracy()}};
}

}  // namespace stage_detail

// synth: both cities as raw traces, POIs and weather.
inline void stage_synth(const RunConfig& c) {
  for (const auto& [cc, dir] : {std::pair{c.source_city, c.source_dir()}, std::pair{c.target_city, c.target_dir()}}) {
    const auto city = synthetic::generate_city(cc);
    const auto traces = synthetic::simulate_traces(cc, city);
    fs::create_directories(dir);
    mobility::write_poi_csv(pois_file(dir), city.pois, city.types);
    mobility::write_gps_csv(traces_file(dir), traces);
    mobility::write_weather_csv(weather_file(dir), synthetic::generate_weather(cc));
    log("synth", dir.string() + ": " + std::to_string(city.pois.size()) + " POIs, " + std::to_string(traces.size()) + " fixes");
  }
}

// ingest: traces to snapshots, one file per city. POI type indices are shared
// across cities (source types first) so both embed through the same table.
inline void stage_ingest(const RunConfig& c) {
  mobility::TypeMap types;
  std::vector<std::pair<fs::path, std::vector<mobility::Poi>>> cities;
  for (const auto& dir : {c.source_dir(), c.target_dir()}) {
    require_files("ingest", {pois_file(dir), traces_file(dir), weather_file(dir)});
    cities.emplace_back(dir, mobility::read_poi_csv(pois_file(dir), types));
  }
  if (types.size() > c.encoder.n_types)
    throw StageError("ingest", std::to_string(types.size()) + " POI types exceed the encoder's n_types " + std::to_string(c.encoder.n_types));
  const synthetic::CityConfig* grids[] = {&c.source_city, &c.target_city};
  for (std::size_t k = 0; k < cities.size(); ++k) {
    const auto& [dir, pois] = cities[k];
    mobility::ReadStats rs;
    mobility::CleanStats cs;
    auto traces = mobility::clean_traces(mobility::read_gps_csv(traces_file(dir), &rs), c.ingest.max_speed_kmh, &cs);
    const auto& g = *grids[k];
    const auto snaps = mobility::build_snapshots(traces, pois, {g.start_time, g.interval_s, static_cast<std::int64_t>(g.n_intervals)},
                                                 {c.ingest.max_dist_km, c.ingest.max_speed_kmh});
    mobility::write_snapshots(snapshots_file(dir), snaps);
    mobility::write_type_map(types_file(dir), types);
    std::size_t edges = 0;
    for (const auto& s : snaps) edges += s.edges.size();
    log("ingest", dir.string() + ": " + std::to_string(snaps.size()) + " snapshots, " + std::to_string(edges) + " edges, " +
                      std::to_string(rs.malformed) + " malformed rows, " + std::to_string(cs.dropped_speed) + " speed outliers");
  }
}

inline void stage_pretrain(const RunConfig& c) {
  const auto city = load_city("pretrain", c.source_dir());
  stage_detail::check_types("pretrain", city, c.encoder);
  const auto tc = c.train_config();
  const auto data = prepare_source(city, tc);
  log("pretrain", std::to_string(data.train.size()) + "/" + std::to_string(data.val.size()) + "/" + std::to_string(data.test.size()) +
                      " train/val/test windows");
  transfer::Checkpoint start{model::FlowModel::create(c.encoder, c.decoder, c.seed), data.stats};
  const auto r = transfer::pretrain(start, data.train, data.val, stage_detail::with_progress(tc, "pretrain"));
  fs::create_directories(c.checkpoint_dir());
  fs::create_directories(c.report_dir());
  transfer::save_checkpoint(pretrain_checkpoint(c), r.best);
  transfer::write_step_curve(c.report_dir() / "pretrain_steps.csv", r.step_losses);
  transfer::write_epoch_curve(c.report_dir() / "pretrain_epochs.csv", r.epochs);
  log("pretrain", "best epoch " + std::to_string(r.best.epoch) + ", val " + stage_detail::fixed(r.best.best_val_loss));
}

inline void stage_coldstart(const RunConfig& c) {
  require_files("coldstart", {pretrain_checkpoint(c)});
  const auto pre = transfer::load_checkpoint(pretrain_checkpoint(c));
  const auto city = load_city("coldstart", c.target_dir());
  stage_detail::check_types("coldstart", city, pre.model.encoder_config);
  const auto tc = c.coldstart_config();
  const auto data = prepare_target(city, tc, pre.stats.flow_max, c.rl.ppo.stride);
  transfer::Checkpoint start = transfer::clone(pre);
  start.stats = data.stats;
  start.best_val_loss = std::numeric_limits<double>::infinity();
  start.epoch = 0;
  const auto before = transfer::frozen_hash(start.model, c.freeze);
  const auto r = transfer::coldstart_finetune(start, data.train, data.val, c.freeze, stage_detail::with_progress(tc, "coldstart"));
  const auto after = transfer::frozen_hash(r.best.model, c.freeze);
  if (before != after) throw StageError("coldstart", "frozen parameters changed during fine-tuning");
  fs::create_directories(c.checkpoint_dir());
  fs::create_directories(c.report_dir());
  transfer::save_checkpoint(coldstart_checkpoint(c), r.best);
  transfer::write_step_curve(c.report_dir() / "coldstart_steps.csv", r.step_losses);
  transfer::write_epoch_curve(c.report_dir() / "coldstart_epochs.csv", r.epochs);
  stage_detail::write_json(c.report_dir() / "coldstart.json",
                           {{"frozen_hash", stage_detail::hex(after)}, {"best_epoch", r.best.epoch},
                            {"train_windows", data.train.size()}, {"val_windows", data.val.size()}});
  log("coldstart", "frozen hash " + stage_detail::hex(after) + " unchanged, best epoch " + std::to_string(r.best.epoch));
}

inline void stage_rl_finetune(const RunConfig& c) {
  require_files("rl-finetune", {pretrain_checkpoint(c), coldstart_checkpoint(c)});
  const auto cs = transfer::load_checkpoint(coldstart_checkpoint(c));
  const auto city = load_city("rl-finetune", c.target_dir());
  const auto data = prepare_target(city, c.coldstart_config(), cs.stats.flow_max, c.rl.ppo.stride);
  rl::PpoAgent agent(rl::kStateDim, rl::GroupingMatrix(c.rl.ppo.blocks).action_dim(), c.rl.ppo, c.seed);
  const auto out = rl_experiment(cs.model, data, c.rl, c.train.target_mode, c.seed, &agent);

  fs::create_directories(c.report_dir());
  transfer::Table rows;
  for (std::size_t i = 0; i < out.training.raw_rewards.size(); ++i)
    rows.push_back({static_cast<double>(i + 1), out.training.raw_rewards[i], out.training.smoothed_rewards[i]});
  transfer::write_table(c.report_dir() / "rl_rewards.csv", "rl_rewards", kRewardHeader, rows);

  json policy = json::object();
  agent.for_each_parameter([&](const std::string& k, num::Tensor& t) { policy[k] = t.vec(); });
  json standardizer = {{"count", agent.standardizer().count()}, {"mean", agent.standardizer().mean()}};
  std::vector<double> var(agent.standardizer().dim());
  for (std::size_t i = 0; i < var.size(); ++i) var[i] = agent.standardizer().variance(i);
  standardizer["variance"] = var;
  fs::create_directories(c.checkpoint_dir());
  stage_detail::write_json(c.checkpoint_dir() / "rl_policy.json", {{"parameters", policy}, {"standardizer", standardizer}});

  const auto thirds = out.thirds();
  stage_detail::write_json(c.report_dir() / "rl.json", {{"episodes", c.rl.episodes},
                                                         {"head_scale", c.rl.head_scale},
                                                         {"reward_unperturbed", out.reward_unperturbed},
                                                         {"reward_start", out.reward_start},
                                                         {"reward_policy", out.reward_policy},
                                                         {"recovery", out.recovery()},
                                                         {"smoothed_thirds", thirds}});
  log("rl-finetune", "eval reward " + stage_detail::fixed(out.reward_start) + " -> " + stage_detail::fixed(out.reward_policy) +
                         " (unscaled head " + stage_detail::fixed(out.reward_unperturbed) + ")");
}

// evaluate: source test split with the pretrained model; target test split
// zero-shot and after cold-start fine-tuning when that checkpoint exists.
inline void stage_evaluate(const RunConfig& c) {
  require_files("evaluate", {pretrain_checkpoint(c)});
  const auto pre = transfer::load_checkpoint(pretrain_checkpoint(c));
  const auto mode = c.train.target_mode;
  const auto source = prepare_source(load_city("evaluate", c.source_dir()), c.train_config());
  const auto src = transfer::evaluate(pre.model, source.test, mode);
  const double mean = transfer::target_mean(source.train, mode);
  json metrics = {{"source", {{"pretrained", stage_detail::report_json(src)},
                              {"train_mean_baseline", stage_detail::report_json(transfer::evaluate_constant(source.test, mode, mean))}}}};
  fs::create_directories(c.report_dir());
  stage_detail::write_outcome_csv(c.report_dir() / "eval_source_outcomes.csv", src);
  log("evaluate", "source test mse " + stage_detail::fixed(src.mse) + ", accuracy " + stage_detail::fixed(src.accuracy()));
  if (fs::exists(coldstart_checkpoint(c))) {
    const auto cs = transfer::load_checkpoint(coldstart_checkpoint(c));
    const auto target = prepare_target(load_city("evaluate", c.target_dir()), c.coldstart_config(), cs.stats.flow_max, c.rl.ppo.stride);
    const auto zero_shot = transfer::evaluate(pre.model, target.test, mode);
    const auto tuned = transfer::evaluate(cs.model, target.test, mode);
    metrics["target"] = {{"zero_shot", stage_detail::report_json(zero_shot)}, {"coldstart", stage_detail::report_json(tuned)}};
    stage_detail::write_outcome_csv(c.report_dir() / "eval_target_outcomes.csv", tuned);
    log("evaluate", "target test mse zero-shot " + stage_detail::fixed(zero_shot.mse) + ", fine-tuned " + stage_detail::fixed(tuned.mse));
  }
  stage_detail::write_json(c.report_dir() / "metrics.json", metrics);
}

// report: SVG plots over the CSV artifacts of the earlier stages.
inline void stage_report(const RunConfig& c) {
  const auto dir = c.report_dir();
  require_files("report", {dir / "pretrain_epochs.csv", dir / "eval_source_outcomes.csv"});
  auto epochs = [](const fs::path& p) {
    Series train{"train", {}, {}}, val{"validation", {}, {}};
    for (const auto& row : transfer::read_table(p, transfer::kEpochHeader)) {
      train.x.push_back(row[0]);
      train.y.push_back(row[1]);
      val.x.push_back(row[0]);
      val.y.push_back(row[2]);
    }
    return std::vector<Series>{train, val};
  };
  auto outcomes = [](const fs::path& p) {
    Series correct{"correct", {}, {}}, over{"over", {}, {}}, under{"under", {}, {}};
    const auto rows = transfer::read_table(p, transfer::kOutcomeHeader);
    if (rows.empty()) throw StageError("report", p.string() + ": evaluation has no rows");
    for (const auto& row : rows) {
      for (auto* s : {&correct, &over, &under}) s->x.push_back(row[0]);
      correct.y.push_back(row[1]);
      over.y.push_back(row[2]);
      under.y.push_back(row[3]);
    }
    return std::vector<Series>{correct, over, under};
  };
  write_svg(dir / "pretrain_loss.svg", {"Pretraining loss", "epoch", "masked MSE", false}, epochs(dir / "pretrain_epochs.csv"));
  write_svg(dir / "source_outcomes.svg", {"Source test outcomes per interval", "interval", "edges (log scale)", true},
            outcomes(dir / "eval_source_outcomes.csv"));
  if (fs::exists(dir / "coldstart_epochs.csv"))
    write_svg(dir / "coldstart_loss.svg", {"Cold-start fine-tuning loss", "epoch", "masked MSE", false}, epochs(dir / "coldstart_epochs.csv"));
  if (fs::exists(dir / "eval_target_outcomes.csv"))
    write_svg(dir / "target_outcomes.svg", {"Target test outcomes per interval", "interval", "edges (log scale)", true},
              outcomes(dir / "eval_target_outcomes.csv"));
  if (fs::exists(dir / "rl_rewards.csv")) {
    Series raw{"raw", {}, {}}, smooth{"moving average (" + std::to_string(c.rl.smoothing_window) + ")", {}, {}};
    for (const auto& row : transfer::read_table(dir / "rl_rewards.csv", kRewardHeader)) {
      raw.x.push_back(row[0]);
      raw.y.push_back(row[1]);
      smooth.x.push_back(row[0]);
      smooth.y.push_back(row[2]);
    }
    write_svg(dir / "rl_rewards.svg", {"PPO episode reward", "episode", "reward", false}, {raw, smooth});
  }
  log("report", "plots written to " + dir.string());
}

}  // namespace urbanpulse::cli
