// quadmtl: collect -> train -> eval -> rollout/switch.
// Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure (including a
// rollout that does not survive).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "quadmtl/config.hpp"
#include "quadmtl/dataset.hpp"
#include "quadmtl/eval.hpp"
#include "quadmtl/mtl_net.hpp"
#include "quadmtl/weights_io.hpp"

namespace fs = std::filesystem;
using namespace quadmtl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code(const Error& e) {
  switch (e.category()) {
    case Error::Category::kUsage: return kExitUsage;
    case Error::Category::kData: return kExitData;
    case Error::Category::kNumeric: return kExitNumeric;
  }
  return kExitNumeric;
}

std::string train_file(const std::string& dir, GaitKind g) {
  return (fs::path(dir) / (std::string(gait_name(g)) + "_train.qgd")).string();
}
std::string holdout_file(const std::string& dir, GaitKind g) {
  return (fs::path(dir) / (std::string(gait_name(g)) + "_holdout.qgd")).string();
}

std::ofstream open_out(const std::string& path) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  return os;
}

std::vector<std::vector<DemoRecord>> read_split(const std::string& dir,
                                                const std::vector<GaitKind>& gaits, bool train) {
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir);
  std::vector<std::vector<DemoRecord>> groups;
  for (GaitKind g : gaits) {
    Dataset d = read_dataset(train ? train_file(dir, g) : holdout_file(dir, g));
    groups.push_back(std::move(d.records));
  }
  return groups;
}

std::string model_label(const std::string& path) { return fs::path(path).stem().string(); }

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string gaits;
  bool print_config = false;
};

RunConfig build_config(const Options& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const std::string& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.gaits.empty()) c.data_gaits = parse_gait_list(o.gaits, "--gaits");
  finalize_config(c);
  return c;
}

// ---------------------------------------------------------------------------

int cmd_collect(const RunConfig& c, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const CollectionPlan plan = c.collection_plan();
  const SimContext ctx = c.sim_context();
  CollectionResult res;
  int code = kExitOk;
  std::string failure;
  try {
    res = collect(plan, ctx);
  } catch (const CollectionFailed& e) {
    failure = e.what();
    code = kExitNumeric;
  }

  std::ofstream rep = open_out((fs::path(out_dir) / "collection_report.txt").string());
  rep << std::setprecision(6);
  rep << "seed " << c.seed << "  data seed " << plan.seed << '\n';
  rep << "standing check: " << (res.standing.passed ? "passed" : "failed")
      << "  max height error " << res.standing.max_height_error << " m over "
      << res.standing.duration << " s\n";
  for (const CellReport& cell : res.cells) {
    rep << cell.gait << ' ' << cell.split << " cmd (" << cell.cmd.vx << ", " << cell.cmd.vy << ", "
        << cell.cmd.wz << ") " << (cell.kept ? "kept" : "discarded")
        << "  clamped_steps " << cell.clamped_steps << "  ik_clamps " << cell.ik_clamps
        << "  max_roundtrip_error " << cell.max_roundtrip_error;
    if (!cell.reason.empty()) rep << "  reason: " << cell.reason;
    rep << '\n';
  }
  if (code != kExitOk) {
    rep << "FAILED: " << failure << '\n';
    std::cerr << failure << '\n';
    return code;
  }

  DatasetMeta meta;
  for (const GaitSpec& g : plan.gaits) meta.task_names.emplace_back(gait_name(g.kind));
  meta.sample_rate_hz = static_cast<float>(1.0 / c.sim.dt);
  for (std::size_t k = 0; k < plan.gaits.size(); ++k) {
    write_dataset(train_file(out_dir, plan.gaits[k].kind), res.train[k], meta);
    write_dataset(holdout_file(out_dir, plan.gaits[k].kind), res.holdout[k], meta);
    std::cout << meta.task_names[k] << ": " << res.train[k].size() << " train, "
              << res.holdout[k].size() << " holdout records\n";
  }
  return kExitOk;
}

int cmd_train(const RunConfig& c, const std::string& data_dir, const std::string& out,
              std::string curves_path) {
  const auto groups = read_split(data_dir, c.data_gaits, true);
  const auto names = c.gait_table().names();
  const TrainResult tr = train(groups, c.arch_spec(), c.train_config(), [&](const EpochLoss& e) {
    std::cerr << "epoch " << e.epoch;
    for (std::size_t k = 0; k < e.val.size(); ++k)
      std::cerr << "  " << names[k] << " train " << e.train[k] << " val " << e.val[k];
    std::cerr << '\n';
  });
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_weights(tr.net, out);
  if (curves_path.empty()) curves_path = (fs::path(out).parent_path() / "curves.csv").string();
  std::ofstream cv = open_out(curves_path);
  write_curves(cv, names, tr.curve);
  std::cout << "best epoch " << tr.best_epoch << " of " << tr.curve.size() << ", "
            << tr.net.arch().num_heads() << " head(s), weights " << out << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& c, const std::string& model_path, const std::string& baseline_path,
             const std::string& data_dir, const std::string& out_dir) {
  const MtlNetwork net = load_weights(model_path);
  std::optional<MtlNetwork> base;
  if (!baseline_path.empty()) base = load_weights(baseline_path);
  const auto groups = read_split(data_dir, c.data_gaits, false);
  const auto names = c.gait_table().names();

  std::vector<TaskPrediction> preds, base_preds;
  const auto rows = evaluate_model(net, groups, names, &preds);
  std::vector<TaskMetrics> base_rows;
  if (base) base_rows = evaluate_model(*base, groups, names, &base_preds);

  fs::create_directories(out_dir);
  std::ofstream mf = open_out((fs::path(out_dir) / "metrics.csv").string());
  write_metrics_header(mf);
  write_metrics_rows(mf, model_label(model_path), rows);
  if (base) write_metrics_rows(mf, model_label(baseline_path), base_rows);

  std::ofstream jf = open_out((fs::path(out_dir) / "metrics_joints.csv").string());
  write_joint_metrics_header(jf);
  write_joint_metrics_rows(jf, model_label(model_path), rows);
  if (base) write_joint_metrics_rows(jf, model_label(baseline_path), base_rows);

  std::ofstream tf = open_out((fs::path(out_dir) / "traj_fl.csv").string());
  write_traj_fl(tf, names, preds, 1.0 / c.sim.dt, c.eval.traj_samples, base ? &base_preds : nullptr);

  std::cout << std::setprecision(6);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::cout << rows[k].task << "  mse " << rows[k].pooled.mse << "  mae " << rows[k].pooled.mae
              << "  r2 " << rows[k].pooled.r2;
    if (base) std::cout << "   baseline r2 " << base_rows[k].pooled.r2;
    std::cout << '\n';
  }
  return kExitOk;
}

int run_scenario(const RunConfig& c, const SwitchScenario& sc, const std::string& model_path,
                 bool use_expert, const std::string& log_path) {
  const SimContext ctx = c.sim_context();
  const GaitTable table = c.gait_table();
  std::optional<MtlNetwork> net;
  Policy policy;
  if (use_expert) {
    policy = expert_policy(ctx, table, sc);
  } else {
    if (model_path.empty()) throw ConfigError("--model or --expert is required");
    net = load_weights(model_path);
    policy = network_policy(*net, table, sc);
  }
  std::unique_ptr<std::ofstream> log;
  if (!log_path.empty()) log = std::make_unique<std::ofstream>(open_out(log_path));
  const RolloutSummary r = run_switch_scenario(sc, ctx, policy, log.get());
  write_rollout_summary(std::cout, r);
  return r.survived ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task quadruped gait imitation workbench"};
  app.fallthrough();
  app.require_subcommand(0, 1);
  Options opt;
  app.add_option("-c,--config", opt.config_path, "Config file (section.key = value)");
  app.add_option("--set", opt.overrides, "Override a config key: key=value (repeatable)");
  app.add_option("--seed", opt.seed, "Master seed (overrides config)");
  app.add_flag("--print-config", opt.print_config, "Print the effective config and exit");

  auto* collect_cmd = app.add_subcommand("collect", "Run the expert and write datasets");
  std::string out_dir;
  collect_cmd->add_option("--gaits", opt.gaits, "Comma-separated gaits");
  collect_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train a network on collected data");
  std::string data_dir, model_out, curves_path, arch;
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", model_out, "Weights file to write")->required();
  train_cmd->add_option("--arch", arch, "mtl or single")->check(CLI::IsMember({"mtl", "single"}));
  train_cmd->add_option("--gaits", opt.gaits, "Comma-separated gaits (task order)");
  train_cmd->add_option("--curves", curves_path, "Loss curve CSV (default: curves.csv beside weights)");

  auto* eval_cmd = app.add_subcommand("eval", "Held-out metrics and joint trajectories");
  std::string model_path, baseline_path;
  eval_cmd->add_option("--model", model_path, "Weights file")->required();
  eval_cmd->add_option("--baseline", baseline_path, "Second weights file for paired rows");
  eval_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();
  eval_cmd->add_option("--gaits", opt.gaits, "Comma-separated gaits (task order)");

  auto* rollout_cmd = app.add_subcommand("rollout", "Closed-loop rollout of one gait");
  bool use_expert = false;
  std::string gait = "trot", log_path;
  double vx = 0, vy = 0, wz = 0;
  std::optional<double> duration;
  rollout_cmd->add_option("--model", model_path, "Weights file");
  rollout_cmd->add_flag("--expert", use_expert, "Run the scripted expert instead of a network");
  rollout_cmd->add_option("--gait", gait, "Gait name");
  rollout_cmd->add_option("--vx", vx, "Forward velocity command (m/s)");
  rollout_cmd->add_option("--vy", vy, "Lateral velocity command (m/s)");
  rollout_cmd->add_option("--wz", wz, "Yaw-rate command (rad/s)");
  rollout_cmd->add_option("--duration", duration, "Seconds (default eval.rollout_duration)");
  rollout_cmd->add_option("--log", log_path, "Rollout CSV");
  rollout_cmd->add_option("--gaits", opt.gaits, "Comma-separated gaits (task order)");

  auto* switch_cmd = app.add_subcommand("switch", "Scripted gait-switch scenario");
  std::string scenario_path;
  switch_cmd->add_option("--model", model_path, "Weights file");
  switch_cmd->add_flag("--expert", use_expert, "Run the scripted expert instead of a network");
  switch_cmd->add_option("--scenario", scenario_path, "Scenario file: 't gait vx vy wz' lines")->required();
  switch_cmd->add_option("--duration", duration, "Seconds")->required();
  switch_cmd->add_option("--log", log_path, "Rollout CSV");
  switch_cmd->add_option("--gaits", opt.gaits, "Comma-separated gaits (task order)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    RunConfig cfg = build_config(opt);
    if (!arch.empty()) {
      set_config_value(cfg, "train.arch", arch);
      cfg.validate();
    }
    if (opt.print_config) {
      print_config(std::cout, cfg);
      return kExitOk;
    }
    if (*collect_cmd) return cmd_collect(cfg, out_dir);
    if (*train_cmd) return cmd_train(cfg, data_dir, model_out, curves_path);
    if (*eval_cmd) return cmd_eval(cfg, model_path, baseline_path, data_dir, out_dir);
    if (*rollout_cmd) {
      SwitchScenario sc;
      sc.events.push_back({0.0, gait, {vx, vy, wz}});
      sc.duration = duration.value_or(cfg.eval.rollout_duration);
      return run_scenario(cfg, sc, model_path, use_expert, log_path);
    }
    if (*switch_cmd) {
      std::ifstream is(scenario_path);
      if (!is) throw IoError("cannot open scenario " + scenario_path);
      return run_scenario(cfg, parse_scenario(is, *duration), model_path, use_expert, log_path);
    }
    std::cout << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << e.what() << '\n';
    return kExitData;
  }
}
