#include <gtest/gtest.h>

#include <sstream>

#include "quadmtl/eval.hpp"

using namespace quadmtl;

namespace {

GaitTable default_table() {
  return {{default_gait(GaitKind::kTrot), default_gait(GaitKind::kBound), default_gait(GaitKind::kJump)}};
}

SwitchScenario single_event(const std::string& gait, VelocityCommand cmd, double duration) {
  SwitchScenario sc;
  sc.events.push_back({0.0, gait, cmd});
  sc.duration = duration;
  return sc;
}

// Oracle: explicit scalar sums.
Metrics metrics_oracle(const Eigen::MatrixXd& p, const Eigen::MatrixXd& t) {
  double n = 0, se = 0, ae = 0, sum = 0;
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) {
      se += (p(i, j) - t(i, j)) * (p(i, j) - t(i, j));
      ae += std::abs(p(i, j) - t(i, j));
      sum += t(i, j);
      ++n;
    }
  const double mean = sum / n;
  double tot = 0;
  for (Eigen::Index i = 0; i < t.rows(); ++i)
    for (Eigen::Index j = 0; j < t.cols(); ++j) tot += (t(i, j) - mean) * (t(i, j) - mean);
  return {se / n, ae / n, 1.0 - se / tot};
}

}  // namespace

TEST(Metrics, WorkedExample) {
  Eigen::MatrixXd truth(3, 1), pred(3, 1);
  truth << 1, 2, 3;
  pred << 1, 2, 2;
  const Metrics m = compute_metrics(pred, truth);
  EXPECT_NEAR(m.mse, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.mae, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.r2, 0.5, 1e-15);
}

TEST(Metrics, PerfectAndMeanPredictors) {
  Rng rng(1);
  Eigen::MatrixXd truth(50, 12);
  for (Eigen::Index i = 0; i < truth.size(); ++i) truth(i) = rng.normal();
  const Metrics perfect = compute_metrics(truth, truth);
  EXPECT_EQ(perfect.mse, 0.0);
  EXPECT_EQ(perfect.r2, 1.0);
  const Eigen::MatrixXd mean = Eigen::MatrixXd::Constant(50, 12, truth.mean());
  EXPECT_NEAR(compute_metrics(mean, truth).r2, 0.0, 1e-12);
}

TEST(Metrics, MatchesScalarOracle) {
  Rng rng(2);
  Eigen::MatrixXd truth(40, 12), pred(40, 12);
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    truth(i) = rng.normal();
    pred(i) = truth(i) + 0.3 * rng.normal();
  }
  const Metrics m = compute_metrics(pred, truth), o = metrics_oracle(pred, truth);
  EXPECT_NEAR(m.mse, o.mse, 1e-14);
  EXPECT_NEAR(m.mae, o.mae, 1e-14);
  EXPECT_NEAR(m.r2, o.r2, 1e-12);
}

TEST(Metrics, RowPermutationInvariant) {
  Rng rng(3);
  Eigen::MatrixXd truth(30, 12), pred(30, 12);
  for (Eigen::Index i = 0; i < truth.size(); ++i) {
    truth(i) = rng.normal();
    pred(i) = rng.normal();
  }
  std::vector<int> perm(30);
  for (int i = 0; i < 30; ++i) perm[i] = i;
  rng.shuffle(perm);
  Eigen::MatrixXd tp(30, 12), pp(30, 12);
  for (int i = 0; i < 30; ++i) {
    tp.row(i) = truth.row(perm[i]);
    pp.row(i) = pred.row(perm[i]);
  }
  const Metrics a = compute_metrics(pred, truth), b = compute_metrics(pp, tp);
  EXPECT_NEAR(a.mse, b.mse, 1e-14);
  EXPECT_NEAR(a.r2, b.r2, 1e-12);
}

TEST(Metrics, DegenerateAndMismatchedInputs) {
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(10, 12, 0.4);
  EXPECT_THROW(compute_metrics(flat, flat), DegenerateTruth);
  EXPECT_THROW(compute_metrics(Eigen::MatrixXd::Zero(10, 12), Eigen::MatrixXd::Zero(10, 11)), ShapeMismatch);
  EXPECT_THROW(compute_metrics(Eigen::MatrixXd::Zero(1, 12), Eigen::MatrixXd::Ones(1, 12)), ShapeMismatch);

  Eigen::MatrixXd truth = Eigen::MatrixXd::Zero(4, 2);
  truth.col(0) << 1, 2, 3, 4;
  const auto cols = per_column_metrics(truth, truth);
  EXPECT_EQ(cols[0].r2, 1.0);
  EXPECT_TRUE(std::isnan(cols[1].r2));
}

TEST(Evaluate, ConstantNetworkScoresNearZero) {
  // Output bias at the flattened truth mean, all weights zero.
  Rng rng(4);
  std::vector<std::vector<DemoRecord>> groups(1, std::vector<DemoRecord>(200));
  double sum = 0.0;
  for (DemoRecord& r : groups[0])
    for (float& a : r.act) {
      a = static_cast<float>(rng.normal());
      sum += a;
    }
  ArchSpec arch;
  arch.hidden = 8;
  arch.num_tasks = 1;
  MtlNetwork net(arch);
  net.bias(MtlNetwork::head_out_layer(0)).setConstant(sum / (200.0 * kActDim));
  const auto m = evaluate_model(net, groups, {"trot"});
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].count, 200u);
  EXPECT_EQ(m[0].joints.size(), 12u);
  EXPECT_NEAR(m[0].pooled.r2, 0.0, 1e-9);
  EXPECT_THROW(evaluate_model(net, groups, {"trot", "bound"}), ShapeMismatch);
}

TEST(Evaluate, CsvWriters) {
  std::vector<TaskMetrics> rows(1);
  rows[0].task = "bound";
  rows[0].pooled = {0.25, 0.5, 0.75};
  rows[0].joints.assign(12, Metrics{0.1, 0.2, 0.3});
  std::ostringstream os;
  write_metrics_header(os);
  write_metrics_rows(os, "mtl", rows);
  EXPECT_EQ(os.str(), "model,task,split,mse,mae,r2\nmtl,bound,holdout,0.25,0.5,0.75\n");

  std::ostringstream js;
  write_joint_metrics_header(js);
  write_joint_metrics_rows(js, "mtl", rows);
  const std::string joints = js.str();
  EXPECT_EQ(std::count(joints.begin(), joints.end(), '\n'), 13);

  TaskPrediction tp{Eigen::MatrixXd::Ones(5, 12), Eigen::MatrixXd::Zero(5, 12)};
  std::ostringstream ts;
  write_traj_fl(ts, {"trot"}, {tp}, 1000.0, 3);
  std::istringstream in(ts.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "task,t,joint,expert,predicted");
  std::getline(in, line);
  EXPECT_EQ(line, "trot,0,FL_hip,1,0");
  int n = 1;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 9);
}

TEST(Scenario, ParsesEventsAndComments) {
  std::istringstream is("# switch\n0 trot 0.3 0 0\n\n3.0 bound 0.2 0.0 0.1  # second\n");
  const SwitchScenario sc = parse_scenario(is, 6.0);
  ASSERT_EQ(sc.events.size(), 2u);
  EXPECT_EQ(sc.events[1].gait, "bound");
  EXPECT_EQ(sc.events[1].t, 3.0);
  EXPECT_EQ(sc.events[1].cmd.wz, 0.1);
}

TEST(Scenario, RejectsMalformedInput) {
  auto parse = [](const std::string& text, double duration) {
    std::istringstream is(text);
    return parse_scenario(is, duration);
  };
  EXPECT_THROW(parse("1 trot 0 0 0\n", 5), ConfigError);
  EXPECT_THROW(parse("0 trot 0 0 0\n0 bound 0 0 0\n", 5), ConfigError);
  EXPECT_THROW(parse("0 trot 0 0 0\n", 0), ConfigError);
  EXPECT_THROW(parse("0 trot 2.0 0 0\n", 5), ConfigError);
  EXPECT_THROW(parse("0 trot 0 0\n", 5), ConfigError);
  EXPECT_THROW(parse("x trot 0 0 0\n", 5), ConfigError);
  EXPECT_THROW(parse("", 5), ConfigError);
}

TEST(Scenario, UnknownGaitFailsBeforeRunning) {
  const SimContext ctx;
  ArchSpec arch;
  arch.hidden = 8;
  const MtlNetwork net(arch);
  const SwitchScenario sc = single_event("walk", {}, 1.0);
  EXPECT_THROW(network_policy(net, default_table(), sc), UnknownTask);
  EXPECT_THROW(expert_policy(ctx, default_table(), sc), UnknownTask);
  arch.num_tasks = 2;
  const MtlNetwork two_heads(arch);
  EXPECT_THROW(network_policy(two_heads, default_table(), single_event("jump", {}, 1.0)), UnknownTask);
}

TEST(Rollout, SingleEventMatchesPlainRollout) {
  const SimContext ctx;
  const SwitchScenario sc = single_event("trot", {0.15, 0, 0}, 1.5);
  const Policy p = expert_policy(ctx, default_table(), sc);
  std::ostringstream a, b;
  const RolloutSummary ra = run_switch_scenario(sc, ctx, p, &a);
  const RolloutSummary rb = closed_loop_rollout(ctx, p, "trot", {0.15, 0, 0}, 1.5, &b);
  const std::string log = a.str();
  EXPECT_EQ(log, b.str());
  EXPECT_EQ(ra.tracking_error, rb.tracking_error);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1 + 1500);
}

TEST(Rollout, ExpertTrotTracksCommand) {
  const SimContext ctx;
  const SwitchScenario sc = single_event("trot", {0.3, 0, 0}, 5.0);
  const RolloutSummary r = run_switch_scenario(sc, ctx, expert_policy(ctx, default_table(), sc));
  EXPECT_TRUE(r.survived) << r.failure;
  EXPECT_LT(r.tracking_error, 0.1);
  EXPECT_NEAR(static_cast<double>(r.segments[0].tracked_steps), 4000.0, 1.0);
}

TEST(Rollout, ExpertSwitchSurvivesBothSegments) {
  const SimContext ctx;
  SwitchScenario sc;
  sc.events = {{0.0, "trot", {0.3, 0, 0}}, {3.0, "bound", {0.3, 0, 0}}};
  sc.duration = 6.0;
  const RolloutSummary r = run_switch_scenario(sc, ctx, expert_policy(ctx, default_table(), sc));
  EXPECT_TRUE(r.survived) << r.failure;
  ASSERT_EQ(r.segments.size(), 2u);
  EXPECT_TRUE(r.segments[0].survived);
  EXPECT_TRUE(r.segments[1].survived);
  EXPECT_NEAR(static_cast<double>(r.segments[1].tracked_steps), 2000.0, 1.0);
}

TEST(Rollout, RandomNetworkEndsWithFiniteSummary) {
  const SimContext ctx;
  ArchSpec arch;
  arch.hidden = 16;
  MtlNetwork net(arch);
  init_params(net, 5);
  const SwitchScenario sc = single_event("bound", {0.2, 0, 0}, 3.0);
  const RolloutSummary r = run_switch_scenario(sc, ctx, network_policy(net, default_table(), sc));
  EXPECT_GT(r.survival_time, 0.0);
  EXPECT_LE(r.survival_time, 3.0 + 1e-9);
  EXPECT_EQ(r.survived, r.failure.empty());
}

TEST(Rollout, Deterministic) {
  const SimContext ctx;
  const SwitchScenario sc = single_event("jump", {0.1, 0, 0}, 1.0);
  const Policy p = expert_policy(ctx, default_table(), sc);
  std::ostringstream a, b;
  run_switch_scenario(sc, ctx, p, &a);
  run_switch_scenario(sc, ctx, p, &b);
  EXPECT_EQ(a.str(), b.str());
}
