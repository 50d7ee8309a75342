#pragma once

// Run configuration: line-oriented `section.key = value` text, '#' comments.
// Every key has a default; unknown keys are rejected.

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "quadmtl/dataset.hpp"
#include "quadmtl/eval.hpp"
#include "quadmtl/mtl_net.hpp"

namespace quadmtl {

struct EvalSettings {
  double rollout_duration = 5.0;
  std::size_t traj_samples = 2000;

  void validate() const {
    if (!(rollout_duration > 0)) throw ConfigError("eval: rollout_duration must be > 0");
  }
};

struct RunConfig {
  std::uint64_t seed = 1;
  RobotModel robot = default_robot_model();
  ContactParams contact;
  SimSettings sim;
  ExpertParams expert;
  std::array<GaitSpec, 4> gait{default_gait(GaitKind::kTrot), default_gait(GaitKind::kBound),
                               default_gait(GaitKind::kJump), default_gait(GaitKind::kWalk)};
  std::vector<GaitKind> data_gaits{GaitKind::kTrot, GaitKind::kBound, GaitKind::kJump};
  CollectionPlan plan;  // gaits and seed are filled in by collection_plan()
  ArchKind arch = ArchKind::kMultiTask;
  int hidden = 128;
  TrainConfig train;
  EvalSettings eval;

  const GaitSpec& gait_spec(GaitKind k) const { return gait[static_cast<std::size_t>(k)]; }

  SimContext sim_context() const { return {robot, contact, sim, expert}; }

  GaitTable gait_table() const {
    GaitTable t;
    for (GaitKind k : data_gaits) t.gaits.push_back(gait_spec(k));
    return t;
  }

  CollectionPlan collection_plan() const {
    CollectionPlan p = plan;
    p.gaits = gait_table().gaits;
    p.seed = derive_seed(seed, "data");
    return p;
  }

  ArchSpec arch_spec() const {
    ArchSpec a;
    a.kind = arch;
    a.hidden = hidden;
    a.num_tasks = arch == ArchKind::kMultiTask ? static_cast<int>(data_gaits.size()) : 1;
    a.seed = derive_seed(seed, "train.init");
    return a;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = derive_seed(seed, "train");
    return t;
  }

  void validate() const {
    robot.validate();
    contact.validate();
    sim.validate();
    expert.validate();
    for (const GaitSpec& g : gait) g.validate();
    if (data_gaits.empty()) throw ConfigError("data: gaits must not be empty");
    for (std::size_t i = 0; i < data_gaits.size(); ++i)
      for (std::size_t j = i + 1; j < data_gaits.size(); ++j)
        if (data_gaits[i] == data_gaits[j]) throw ConfigError("data: gaits repeat");
    collection_plan().validate();
    if (hidden < 1) throw ConfigError("train: hidden must be >= 1");
    train.validate();
    eval.validate();
  }
};

// ---------------------------------------------------------------------------
// Value parsing and formatting

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto p = s.find(sep, start);
    out.push_back(trim(s.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, const std::string& key) {
  s = trim(s);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(key + ": cannot parse '" + std::string(s) + "'");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(v)) throw ConfigError(key + ": value must be finite");
  return v;
}

inline std::vector<double> parse_list(std::string_view s, const std::string& key) {
  std::vector<double> out;
  for (auto part : split(s, ',')) out.push_back(parse_number<double>(part, key));
  return out;
}

inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string fmt_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s;
}

inline GaitKind parse_gait(std::string_view s, const std::string& key) {
  const auto k = parse_gait_name(trim(s));
  if (!k) throw ConfigError(key + ": unknown gait '" + std::string(trim(s)) + "'");
  return *k;
}

}  // namespace detail

inline std::vector<GaitKind> parse_gait_list(std::string_view s, const std::string& key = "gaits") {
  std::vector<GaitKind> out;
  for (auto part : detail::split(s, ',')) out.push_back(detail::parse_gait(part, key));
  return out;
}

struct ConfigKey {
  std::string name;
  std::function<void(std::string_view)> set;
  std::function<std::string()> get;
};

/// Every configurable key of c, bound to c.
inline std::vector<ConfigKey> config_keys(RunConfig& c) {
  using detail::fmt;
  using detail::parse_number;
  std::vector<ConfigKey> keys;
  auto num = [&keys](const std::string& name, double& ref) {
    keys.push_back({name, [&ref, name](std::string_view v) { ref = parse_number<double>(v, name); },
                    [&ref] { return fmt(ref); }});
  };
  auto integer = [&keys](const std::string& name, auto& ref) {
    using T = std::remove_reference_t<decltype(ref)>;
    keys.push_back({name, [&ref, name](std::string_view v) { ref = parse_number<T>(v, name); },
                    [&ref] { return std::to_string(ref); }});
  };
  auto list = [&keys](const std::string& name, std::vector<double>& ref) {
    keys.push_back({name, [&ref, name](std::string_view v) { ref = detail::parse_list(v, name); },
                    [&ref] { return detail::fmt_list(ref); }});
  };

  integer("seed", c.seed);

  num("sim.dt", c.sim.dt);
  num("sim.gravity", c.sim.gravity);
  num("sim.max_substep", c.sim.max_substep);

  RobotModel& r = c.robot;
  num("robot.mass", r.mass);
  num("robot.inertia_xx", r.base_inertia.x());
  num("robot.inertia_yy", r.base_inertia.y());
  num("robot.inertia_zz", r.base_inertia.z());
  keys.push_back({"robot.hip_x",
                  [&r](std::string_view v) {
                    const double x = std::abs(parse_number<double>(v, "robot.hip_x"));
                    for (Leg leg : kAllLegs) r.hip_offsets[leg_index(leg)].x() = is_front(leg) ? x : -x;
                  },
                  [&r] { return fmt(r.hip_offsets[0].x()); }});
  keys.push_back({"robot.hip_y",
                  [&r](std::string_view v) {
                    const double y = std::abs(parse_number<double>(v, "robot.hip_y"));
                    for (Leg leg : kAllLegs) r.hip_offsets[leg_index(leg)].y() = side_sign(leg) * y;
                  },
                  [&r] { return fmt(r.hip_offsets[0].y()); }});
  num("robot.l_abd", r.l_abd);
  num("robot.l_thigh", r.l_thigh);
  num("robot.l_calf", r.l_calf);
  num("robot.kp", r.kp);
  num("robot.kd", r.kd);
  num("robot.tau_max", r.tau_max);
  num("robot.rotor_inertia", r.rotor_inertia);
  num("robot.nominal_base_height", r.nominal_base_height);
  const char* joint_names[3] = {"abd", "thigh", "knee"};
  for (int j = 0; j < 3; ++j) {
    for (int side = 0; side < 2; ++side) {
      const std::string name =
          std::string("robot.") + joint_names[j] + (side == 0 ? "_lower" : "_upper");
      JointVec& lim = side == 0 ? r.joint_lower : r.joint_upper;
      keys.push_back({name,
                      [&lim, j, name](std::string_view v) {
                        const double x = parse_number<double>(v, name);
                        for (int leg = 0; leg < kNumLegs; ++leg) lim[3 * leg + j] = x;
                      },
                      [&lim, j] { return fmt(lim[j]); }});
    }
  }

  num("contact.k_n", c.contact.k_n);
  num("contact.c_n", c.contact.c_n);
  num("contact.mu", c.contact.mu);
  num("contact.v_slip", c.contact.v_slip);
  num("contact.force_threshold", c.contact.contact_force_threshold);

  for (GaitKind k : kAllGaitKinds) {
    GaitSpec& g = c.gait[static_cast<std::size_t>(k)];
    const std::string p = "gait." + std::string(gait_name(k)) + ".";
    num(p + "period", g.period);
    num(p + "duty", g.duty);
    num(p + "swing_height", g.swing_height);
    keys.push_back({p + "phase_offset",
                    [&g, name = p + "phase_offset"](std::string_view v) {
                      const auto vals = detail::parse_list(v, name);
                      if (vals.size() != kNumLegs) throw ConfigError(name + ": need 4 values");
                      std::copy(vals.begin(), vals.end(), g.phase_offset.begin());
                    },
                    [&g] {
                      return detail::fmt_list({g.phase_offset.begin(), g.phase_offset.end()});
                    }});
  }

  ExpertParams& e = c.expert;
  num("expert.height_kp", e.height_kp);
  num("expert.height_kd", e.height_kd);
  num("expert.attitude_kp", e.attitude_kp);
  num("expert.attitude_kd", e.attitude_kd);
  num("expert.velocity_kp", e.velocity_kp);
  num("expert.raibert_kv", e.raibert_kv);
  num("expert.swing_kp", e.swing_kp);
  num("expert.swing_kd", e.swing_kd);
  num("expert.friction_mu", e.friction_mu);
  num("expert.moment_weight", e.moment_weight);

  keys.push_back({"data.gaits",
                  [&c](std::string_view v) { c.data_gaits = parse_gait_list(v, "data.gaits"); },
                  [&c] {
                    std::string s;
                    for (std::size_t i = 0; i < c.data_gaits.size(); ++i)
                      s += (i ? ", " : "") + std::string(gait_name(c.data_gaits[i]));
                    return s;
                  }});
  list("data.vx_grid", c.plan.vx_grid);
  list("data.vy_grid", c.plan.vy_grid);
  list("data.wz_grid", c.plan.wz_grid);
  integer("data.cells_per_gait", c.plan.cells_per_gait);
  integer("data.samples_per_traj", c.plan.samples_per_traj);
  num("data.settle_time", c.plan.settle_time);
  num("data.max_diverged_fraction", c.plan.max_diverged_fraction);
  keys.push_back({"data.holdout",
                  [&c](std::string_view v) {
                    std::vector<VelocityCommand> cmds;
                    for (auto part : detail::split(v, ';')) {
                      const auto vals = detail::parse_list(part, "data.holdout");
                      if (vals.size() != 3)
                        throw ConfigError("data.holdout: each command needs 'vx, vy, wz'");
                      cmds.push_back({vals[0], vals[1], vals[2]});
                    }
                    c.plan.holdout = cmds;
                  },
                  [&c] {
                    std::string s;
                    for (std::size_t i = 0; i < c.plan.holdout.size(); ++i) {
                      const auto& h = c.plan.holdout[i];
                      s += (i ? "; " : "") + detail::fmt_list({h.vx, h.vy, h.wz});
                    }
                    return s;
                  }});

  keys.push_back({"train.arch",
                  [&c](std::string_view v) {
                    v = detail::trim(v);
                    if (v == "mtl") c.arch = ArchKind::kMultiTask;
                    else if (v == "single") c.arch = ArchKind::kSingleTask;
                    else throw ConfigError("train.arch: expected mtl or single");
                  },
                  [&c] { return std::string(arch_kind_name(c.arch)); }});
  integer("train.hidden", c.hidden);
  integer("train.epochs", c.train.epochs);
  integer("train.batch_size", c.train.batch_size);
  num("train.learning_rate", c.train.adam.lr);
  num("train.beta1", c.train.adam.beta1);
  num("train.beta2", c.train.adam.beta2);
  num("train.eps", c.train.adam.eps);
  num("train.val_fraction", c.train.val_fraction);
  keys.push_back({"train.lr_schedule",
                  [&c](std::string_view v) {
                    v = detail::trim(v);
                    if (v == "constant") c.train.schedule = LrSchedule::kConstant;
                    else if (v == "cosine") c.train.schedule = LrSchedule::kCosine;
                    else throw ConfigError("train.lr_schedule: expected constant or cosine");
                  },
                  [&c] {
                    return std::string(c.train.schedule == LrSchedule::kCosine ? "cosine" : "constant");
                  }});
  num("train.lr_final_fraction", c.train.lr_final_fraction);

  num("eval.rollout_duration", c.eval.rollout_duration);
  integer("eval.traj_samples", c.eval.traj_samples);
  return keys;
}

/// Applies one `key = value` assignment.
inline void set_config_value(RunConfig& c, std::string_view key, std::string_view value) {
  key = detail::trim(key);
  for (ConfigKey& k : config_keys(c))
    if (k.name == key) {
      k.set(detail::trim(value));
      return;
    }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Applies every assignment in the stream on top of c.
inline void apply_config(RunConfig& c, std::istream& is, const std::string& source = "config") {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string_view body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      set_config_value(c, body.substr(0, eq), body.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

/// Defaults, then the file; geometry edits refresh the nominal stance.
inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  RunConfig c;
  apply_config(c, is, path);
  return c;
}

/// Recomputes derived robot quantities and checks every invariant.
inline void finalize_config(RunConfig& c) {
  if (!(c.robot.l_thigh > 0 && c.robot.l_calf > 0 && c.robot.nominal_base_height > 0))
    throw ConfigError("robot: link lengths and nominal_base_height must be > 0");
  try {
    refresh_nominal_pose(c.robot);
  } catch (const Unreachable& e) {
    throw ConfigError(std::string("robot: nominal stance unreachable: ") + e.what());
  }
  c.validate();
}

inline void print_config(std::ostream& os, RunConfig c) {
  for (const ConfigKey& k : config_keys(c)) os << k.name << " = " << k.get() << '\n';
}

}  // namespace quadmtl
