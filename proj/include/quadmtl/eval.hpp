#pragma once

// Open-loop metrics on held-out records, curve and trajectory export, and
// closed-loop rollouts of a policy (network or expert) through the servo.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "quadmtl/dataset.hpp"
#include "quadmtl/mtl_net.hpp"

namespace quadmtl {

// ---------------------------------------------------------------------------
// Regression metrics

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
};

/// Pooled metrics over every entry of two N x D matrices (one row per
/// record). R^2 uses the mean of the flattened truth.
inline Metrics compute_metrics(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw ShapeMismatch("prediction and truth shapes differ");
  if (truth.rows() < 2 || truth.cols() < 1) throw ShapeMismatch("need at least 2 records");
  const double n = static_cast<double>(truth.size());
  const Eigen::ArrayXXd err = (pred - truth).array();
  Metrics m;
  m.mse = err.square().sum() / n;
  m.mae = err.abs().sum() / n;
  const double ss_tot = (truth.array() - truth.mean()).square().sum();
  if (ss_tot < 1e-12) throw DegenerateTruth("truth has no variance (SS_tot < 1e-12)");
  m.r2 = 1.0 - err.square().sum() / ss_tot;
  return m;
}

/// Per-column metrics; a column without variance reports r2 = NaN.
inline std::vector<Metrics> per_column_metrics(const Eigen::MatrixXd& pred,
                                               const Eigen::MatrixXd& truth) {
  std::vector<Metrics> out;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    try {
      out.push_back(compute_metrics(pred.col(j), truth.col(j)));
    } catch (const DegenerateTruth&) {
      Metrics m;
      const Eigen::ArrayXd e = (pred.col(j) - truth.col(j)).array();
      m.mse = e.square().mean();
      m.mae = e.abs().mean();
      m.r2 = std::numeric_limits<double>::quiet_NaN();
      out.push_back(m);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Open-loop evaluation

struct TaskMetrics {
  std::string task;
  std::string split = "holdout";
  std::size_t count = 0;
  Metrics pooled;
  std::vector<Metrics> joints;  // 12 entries
};

struct TaskPrediction {
  Eigen::MatrixXd truth;  // N x 12
  Eigen::MatrixXd pred;   // N x 12
};

/// Teacher-forced predictions for the records of one task.
inline TaskPrediction predict_records(const MtlNetwork& net, const std::vector<DemoRecord>& recs,
                                      int task) {
  const int head = net.head_of(task);
  const auto n = static_cast<Eigen::Index>(recs.size());
  Eigen::MatrixXd x(kObsDim, n);
  TaskPrediction tp;
  tp.truth.resize(n, kActDim);
  for (Eigen::Index c = 0; c < n; ++c) {
    const DemoRecord& r = recs[static_cast<std::size_t>(c)];
    for (int i = 0; i < kObsDim; ++i) x(i, c) = (r.obs[i] - net.norm().mean[i]) / net.norm().std[i];
    for (int i = 0; i < kActDim; ++i) tp.truth(c, i) = r.act[i];
  }
  tp.pred = net.forward_normalized(x, head).transpose();
  return tp;
}

/// groups[k] holds the held-out records of task k, named names[k].
inline std::vector<TaskMetrics> evaluate_model(const MtlNetwork& net,
                                               const std::vector<std::vector<DemoRecord>>& groups,
                                               const std::vector<std::string>& names,
                                               std::vector<TaskPrediction>* predictions = nullptr) {
  if (names.size() != groups.size()) throw ShapeMismatch("task name count differs from groups");
  std::vector<TaskMetrics> out;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    if (groups[k].empty()) throw EmptyDataset("no held-out records for " + names[k]);
    TaskPrediction tp = predict_records(net, groups[k], static_cast<int>(k));
    TaskMetrics tm;
    tm.task = names[k];
    tm.count = groups[k].size();
    tm.pooled = compute_metrics(tp.pred, tp.truth);
    tm.joints = per_column_metrics(tp.pred, tp.truth);
    out.push_back(std::move(tm));
    if (predictions) predictions->push_back(std::move(tp));
  }
  return out;
}

inline constexpr std::array<const char*, 3> kFrontLeftJointNames = {"FL_hip", "FL_thigh", "FL_knee"};

namespace detail {
inline void set_precision(std::ostream& os) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
}
}  // namespace detail

inline void write_metrics_header(std::ostream& os) { os << "model,task,split,mse,mae,r2\n"; }

inline void write_metrics_rows(std::ostream& os, const std::string& model,
                               const std::vector<TaskMetrics>& rows) {
  detail::set_precision(os);
  for (const TaskMetrics& t : rows)
    os << model << ',' << t.task << ',' << t.split << ',' << t.pooled.mse << ',' << t.pooled.mae
       << ',' << t.pooled.r2 << '\n';
}

inline void write_joint_metrics_header(std::ostream& os) {
  os << "model,task,split,joint,mse,mae,r2\n";
}

inline void write_joint_metrics_rows(std::ostream& os, const std::string& model,
                                     const std::vector<TaskMetrics>& rows) {
  detail::set_precision(os);
  for (const TaskMetrics& t : rows)
    for (std::size_t j = 0; j < t.joints.size(); ++j)
      os << model << ',' << t.task << ',' << t.split << ',' << j << ',' << t.joints[j].mse << ','
         << t.joints[j].mae << ',' << t.joints[j].r2 << '\n';
}

/// Front-left joint trajectories: the first `samples` held-out records of
/// each task. A baseline prediction adds a column.
inline void write_traj_fl(std::ostream& os, const std::vector<std::string>& names,
                          const std::vector<TaskPrediction>& preds, double sample_rate_hz,
                          std::size_t samples,
                          const std::vector<TaskPrediction>* baseline = nullptr) {
  detail::set_precision(os);
  os << "task,t,joint,expert,predicted" << (baseline ? ",baseline" : "") << '\n';
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const auto n = std::min<std::size_t>(samples, static_cast<std::size_t>(preds[k].truth.rows()));
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / sample_rate_hz;
      for (int j = 0; j < 3; ++j) {
        const auto r = static_cast<Eigen::Index>(i);
        os << names[k] << ',' << t << ',' << kFrontLeftJointNames[j] << ',' << preds[k].truth(r, j)
           << ',' << preds[k].pred(r, j);
        if (baseline) os << ',' << (*baseline)[k].pred(r, j);
        os << '\n';
      }
    }
  }
}

inline void write_curves(std::ostream& os, const std::vector<std::string>& names,
                         const std::vector<EpochLoss>& curve) {
  detail::set_precision(os);
  os << "epoch,task,train_loss,val_loss\n";
  for (const EpochLoss& e : curve)
    for (std::size_t k = 0; k < e.val.size(); ++k)
      os << e.epoch << ',' << names[k] << ',' << e.train[k] << ',' << e.val[k] << '\n';
}

// ---------------------------------------------------------------------------
// Closed loop

struct ScenarioEvent {
  double t = 0.0;
  std::string gait;
  VelocityCommand cmd;
};

struct SwitchScenario {
  std::vector<ScenarioEvent> events;
  double duration = 0.0;

  void validate() const {
    if (events.empty()) throw ConfigError("scenario has no events");
    if (events.front().t != 0.0) throw ConfigError("first scenario event must be at t = 0");
    for (std::size_t i = 1; i < events.size(); ++i)
      if (!(events[i].t > events[i - 1].t))
        throw ConfigError("scenario events must have increasing times");
    if (!(duration > events.back().t))
      throw ConfigError("scenario duration must exceed the last event time");
    for (const ScenarioEvent& e : events)
      if (!e.cmd.within_envelope())
        throw ConfigError("scenario command outside the velocity envelope");
  }
};

/// Lines "t gait vx vy wz"; '#' starts a comment.
inline SwitchScenario parse_scenario(std::istream& is, double duration) {
  SwitchScenario sc;
  sc.duration = duration;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    std::istringstream ls(line);
    ScenarioEvent e;
    if (!(ls >> e.t)) {
      std::string rest;
      if (std::istringstream(line) >> rest)
        throw ConfigError("scenario line " + std::to_string(lineno) + ": bad time");
      continue;
    }
    if (!(ls >> e.gait >> e.cmd.vx >> e.cmd.vy >> e.cmd.wz))
      throw ConfigError("scenario line " + std::to_string(lineno) + ": expected 't gait vx vy wz'");
    std::string extra;
    if (ls >> extra) throw ConfigError("scenario line " + std::to_string(lineno) + ": trailing text");
    sc.events.push_back(e);
  }
  sc.validate();
  return sc;
}

/// Gaits a controller can run, in task-id order.
struct GaitTable {
  std::vector<GaitSpec> gaits;

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const GaitSpec& g : gaits) out.emplace_back(gait_name(g.kind));
    return out;
  }

  int task_id(const std::string& name) const {
    for (std::size_t i = 0; i < gaits.size(); ++i)
      if (gait_name(gaits[i].kind) == name) return static_cast<int>(i);
    throw UnknownTask("gait '" + name + "' is not among the trained gaits");
  }
};

/// Maps (state, observation, active event) to joint targets.
using Policy = std::function<JointVec(const SimState&, const ObsVec&, const ScenarioEvent&)>;

/// Network policy. Every scenario gait must resolve to a head before the run.
inline Policy network_policy(const MtlNetwork& net, const GaitTable& table,
                             const SwitchScenario& sc) {
  for (const ScenarioEvent& e : sc.events) net.head_of(table.task_id(e.gait));
  return [&net, table](const SimState&, const ObsVec& obs, const ScenarioEvent& e) {
    return net.forward(obs, table.task_id(e.gait));
  };
}

inline Policy expert_policy(const SimContext& ctx, const GaitTable& table,
                            const SwitchScenario& sc) {
  for (const ScenarioEvent& e : sc.events) table.task_id(e.gait);
  return [&ctx, table](const SimState& s, const ObsVec&, const ScenarioEvent& e) {
    return expert_target(s, ctx, table.gaits[table.task_id(e.gait)], e.cmd);
  };
}

inline constexpr double kTransientTime = 1.0;

struct SegmentSummary {
  ScenarioEvent event;
  double t_end = 0.0;
  bool survived = false;
  double tracking_error = std::numeric_limits<double>::quiet_NaN();  // m/s, after the transient
  std::size_t tracked_steps = 0;
};

struct RolloutSummary {
  bool survived = false;
  double survival_time = 0.0;
  double duration = 0.0;
  double tracking_error = std::numeric_limits<double>::quiet_NaN();
  std::string failure;
  std::vector<SegmentSummary> segments;
};

/// Planar base velocity in the heading frame.
inline Eigen::Vector2d heading_velocity(const SimState& s) {
  const double yaw = base_rpy(s).z();
  const double c = std::cos(yaw), sn = std::sin(yaw);
  const Vec3& v = s.base_lin_vel;
  return {c * v.x() + sn * v.y(), -sn * v.x() + c * v.y()};
}

/// Runs the scenario from the nominal stance at 1 kHz. Tracking error is the
/// mean planar velocity error after the first second of each segment. The
/// log receives one rollout row per tick.
inline RolloutSummary run_switch_scenario(const SwitchScenario& sc, const SimContext& ctx,
                                          const Policy& policy, std::ostream* log = nullptr) {
  sc.validate();
  const RobotModel& m = ctx.model;
  const double dt = ctx.settings.dt;
  const auto steps = static_cast<long>(std::llround(sc.duration / dt));

  RolloutSummary out;
  out.duration = sc.duration;
  for (std::size_t i = 0; i < sc.events.size(); ++i) {
    SegmentSummary seg;
    seg.event = sc.events[i];
    seg.t_end = i + 1 < sc.events.size() ? sc.events[i + 1].t : sc.duration;
    out.segments.push_back(seg);
  }
  std::vector<double> err_sum(sc.events.size(), 0.0);
  double total_err = 0.0;
  std::size_t total_n = 0;

  if (log) {
    detail::set_precision(*log);
    write_rollout_header(*log);
  }
  ObservationBuilder observe(ctx.contact, ctx.settings);
  SimState s = nominal_stance_state(m);
  std::size_t seg = 0;
  bool alive = true;
  try {
    for (long k = 0; k < steps; ++k) {
      while (seg + 1 < sc.events.size() && s.time >= sc.events[seg + 1].t - 0.5 * dt) ++seg;
      const ScenarioEvent& ev = sc.events[seg];
      const ObsVec obs = observe(s);
      const JointVec target = policy(s, obs, ev);
      if (!target.allFinite()) throw Diverged(s.time);
      if (log) write_rollout_row(*log, s, target, contact_flags(s, ctx.contact));
      s = step(s, m, ctx.contact, target, dt, ctx.settings);
      if (!within_survival_band(s, m.nominal_base_height)) {
        std::ostringstream os;
        os << "left survival band at t=" << s.time;
        out.failure = os.str();
        alive = false;
        break;
      }
      if (s.time - ev.t > kTransientTime) {
        const Eigen::Vector2d e = heading_velocity(s) - Eigen::Vector2d(ev.cmd.vx, ev.cmd.vy);
        err_sum[seg] += e.norm();
        ++out.segments[seg].tracked_steps;
        total_err += e.norm();
        ++total_n;
      }
    }
  } catch (const Diverged& e) {
    out.failure = e.what();
    alive = false;
  }
  out.survived = alive;
  out.survival_time = alive ? sc.duration : s.time;
  if (total_n) out.tracking_error = total_err / static_cast<double>(total_n);
  for (std::size_t i = 0; i < out.segments.size(); ++i) {
    SegmentSummary& sg = out.segments[i];
    sg.survived = alive || out.survival_time >= sg.t_end;
    if (sg.tracked_steps) sg.tracking_error = err_sum[i] / static_cast<double>(sg.tracked_steps);
  }
  return out;
}

/// Single-command rollout.
inline RolloutSummary closed_loop_rollout(const SimContext& ctx, const Policy& policy,
                                          const std::string& gait, const VelocityCommand& cmd,
                                          double duration, std::ostream* log = nullptr) {
  SwitchScenario sc;
  sc.events.push_back({0.0, gait, cmd});
  sc.duration = duration;
  return run_switch_scenario(sc, ctx, policy, log);
}

inline void write_rollout_summary(std::ostream& os, const RolloutSummary& r) {
  os << std::setprecision(6);
  os << "survived " << (r.survived ? "yes" : "no") << "  survival_time " << r.survival_time
     << " / " << r.duration << " s  tracking_error " << r.tracking_error << " m/s\n";
  if (!r.failure.empty()) os << "failure: " << r.failure << '\n';
  for (const SegmentSummary& sg : r.segments)
    os << "  segment [" << sg.event.t << ", " << sg.t_end << ") " << sg.event.gait << " cmd ("
       << sg.event.cmd.vx << ", " << sg.event.cmd.vy << ", " << sg.event.cmd.wz << ")  survived "
       << (sg.survived ? "yes" : "no") << "  tracking_error " << sg.tracking_error << '\n';
}

}  // namespace quadmtl
