#pragma once

// Demonstration data: observation assembly, PD-inverted action targets,
// collection campaigns over command grids, normalisation statistics and the
// QGD1 dataset file.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "quadmtl/binary_io.hpp"
#include "quadmtl/errors.hpp"
#include "quadmtl/gait_expert.hpp"
#include "quadmtl/rng.hpp"
#include "quadmtl/robot_model.hpp"
#include "quadmtl/sim.hpp"

namespace quadmtl {

inline constexpr int kObsDim = 34;
inline constexpr int kActDim = 12;

using ObsVec = Eigen::Matrix<double, kObsDim, 1>;

// Observation layout.
inline constexpr int kObsGyro = 0;
inline constexpr int kObsAccel = 3;
inline constexpr int kObsQ = 6;
inline constexpr int kObsV = 18;
inline constexpr int kObsContact = 30;

/// a = q + (tau + kd v) / kp: the joint target that makes the PD servo emit
/// tau at (q, v).
inline JointVec inverse_pd_target(const JointVec& tau, const JointVec& q, const JointVec& v,
                                  double kp, double kd) {
  if (!(kp > 0)) throw ConfigError("inverse_pd_target: kp must be > 0");
  return q + (tau + kd * v) / kp;
}

inline ObsVec build_observation(const ImuSample& imu, const SimState& s,
                                const std::array<bool, kNumLegs>& contacts) {
  ObsVec o;
  o.segment<3>(kObsGyro) = imu.ang_vel;
  o.segment<3>(kObsAccel) = imu.lin_acc;
  o.segment<12>(kObsQ) = s.q;
  o.segment<12>(kObsV) = s.v;
  for (int i = 0; i < kNumLegs; ++i) o[kObsContact + i] = contacts[i] ? 1.0 : 0.0;
  return o;
}

/// Tracks the previous state so each tick can difference the IMU.
class ObservationBuilder {
 public:
  ObservationBuilder(const ContactParams& contact, const SimSettings& settings)
      : contact_(contact), settings_(settings) {}

  ObsVec operator()(const SimState& s) {
    const SimState& prev = has_prev_ ? prev_ : s;
    const ImuSample imu = read_imu(prev, s, settings_.dt, settings_.gravity);
    prev_ = s;
    has_prev_ = true;
    return build_observation(imu, s, contact_flags(s, contact_));
  }

  void reset() { has_prev_ = false; }

 private:
  ContactParams contact_;
  SimSettings settings_;
  SimState prev_;
  bool has_prev_ = false;
};

// ---------------------------------------------------------------------------
// Records and statistics

struct DemoRecord {
  std::uint32_t task = 0;
  std::array<float, kObsDim> obs{};
  std::array<float, kActDim> act{};
};

inline DemoRecord make_record(std::uint32_t task, const ObsVec& obs, const JointVec& act) {
  DemoRecord r;
  r.task = task;
  for (int i = 0; i < kObsDim; ++i) r.obs[i] = static_cast<float>(obs[i]);
  for (int i = 0; i < kActDim; ++i) r.act[i] = static_cast<float>(act[i]);
  return r;
}

struct NormStats {
  ObsVec mean = ObsVec::Zero();
  ObsVec std = ObsVec::Ones();

  ObsVec apply(const ObsVec& o) const { return (o - mean).cwiseQuotient(std); }
};

inline constexpr double kStdFloor = 1e-8;

/// Per-feature mean and population standard deviation (floored).
inline NormStats fit_norm_stats(const std::vector<DemoRecord>& records) {
  if (records.size() < 2) throw EmptyDataset("need at least 2 records for normalisation");
  const double n = static_cast<double>(records.size());
  NormStats st;
  ObsVec sum = ObsVec::Zero();
  for (const DemoRecord& r : records)
    for (int i = 0; i < kObsDim; ++i) sum[i] += r.obs[i];
  st.mean = sum / n;
  ObsVec ss = ObsVec::Zero();
  for (const DemoRecord& r : records)
    for (int i = 0; i < kObsDim; ++i) {
      const double d = r.obs[i] - st.mean[i];
      ss[i] += d * d;
    }
  for (int i = 0; i < kObsDim; ++i) st.std[i] = std::max(std::sqrt(ss[i] / n), kStdFloor);
  return st;
}

// ---------------------------------------------------------------------------
// QGD1 file

struct DatasetMeta {
  std::vector<std::string> task_names;
  float sample_rate_hz = 1000.0f;
};

inline constexpr char kDatasetMagic[4] = {'Q', 'G', 'D', '1'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kRecordBytes = 4 + 4 * (kObsDim + kActDim);

inline std::vector<std::uint8_t> encode_dataset(const std::vector<DemoRecord>& records,
                                                const DatasetMeta& meta) {
  ByteWriter w;
  w.raw(kDatasetMagic, 4);
  w.u32(kDatasetVersion);
  w.u32(kObsDim);
  w.u32(kActDim);
  w.u32(static_cast<std::uint32_t>(meta.task_names.size()));
  w.u64(records.size());
  w.f32(meta.sample_rate_hz);
  for (const std::string& name : meta.task_names) w.str(name);
  for (const DemoRecord& r : records) {
    if (r.task >= meta.task_names.size())
      throw ShapeMismatch("record task id " + std::to_string(r.task) + " >= num_tasks " +
                          std::to_string(meta.task_names.size()));
    w.u32(r.task);
    for (float x : r.obs) w.f32(x);
    for (float x : r.act) w.f32(x);
  }
  w.seal();
  return w.bytes();
}

inline void write_dataset(const std::string& path, const std::vector<DemoRecord>& records,
                          const DatasetMeta& meta) {
  write_file(path, encode_dataset(records, meta));
}

struct Dataset {
  DatasetMeta meta;
  std::vector<DemoRecord> records;
};

inline Dataset decode_dataset(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  char magic[4];
  if (r.size() < 4) throw TruncatedFile("file shorter than magic");
  r.raw(magic, 4);
  if (std::memcmp(magic, kDatasetMagic, 4) != 0) throw BadMagic("not a QGD1 dataset");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion)
    throw VersionMismatch("dataset version " + std::to_string(version) + ", expected " +
                          std::to_string(kDatasetVersion));
  const std::uint32_t obs_dim = r.u32();
  const std::uint32_t act_dim = r.u32();
  const std::uint32_t num_tasks = r.u32();
  const std::uint64_t count = r.u64();
  Dataset ds;
  ds.meta.sample_rate_hz = r.f32();
  if (num_tasks > 1024) throw ShapeMismatch("implausible num_tasks " + std::to_string(num_tasks));
  for (std::uint32_t i = 0; i < num_tasks; ++i) ds.meta.task_names.push_back(r.str());
  if (obs_dim != kObsDim || act_dim != kActDim)
    throw ShapeMismatch("dims " + std::to_string(obs_dim) + "x" + std::to_string(act_dim) +
                        ", expected 34x12");

  if (count > r.size() / kRecordBytes) throw TruncatedFile("record block shorter than header count");
  const std::size_t need = r.pos() + count * kRecordBytes + 4;
  if (r.size() < need) throw TruncatedFile("record block shorter than header count");
  if (r.size() > need) throw ShapeMismatch("trailing bytes after record block");
  r.verify_crc();

  ds.records.resize(count);
  for (DemoRecord& rec : ds.records) {
    rec.task = r.u32();
    if (rec.task >= num_tasks) throw ShapeMismatch("record task id out of range");
    for (float& x : rec.obs) x = r.f32();
    for (float& x : rec.act) x = r.f32();
  }
  return ds;
}

inline Dataset read_dataset(const std::string& path) {
  return decode_dataset(read_file(path));
}

// CSV mirror: task, obs_0..obs_33, act_0..act_11. Floats print with 9
// significant digits, which round-trips binary32 exactly.
inline void write_dataset_csv(std::ostream& os, const std::vector<DemoRecord>& records) {
  os << "task";
  for (int i = 0; i < kObsDim; ++i) os << ",obs_" << i;
  for (int i = 0; i < kActDim; ++i) os << ",act_" << i;
  os << '\n';
  os << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (const DemoRecord& r : records) {
    os << r.task;
    for (float x : r.obs) os << ',' << x;
    for (float x : r.act) os << ',' << x;
    os << '\n';
  }
}

inline std::vector<DemoRecord> read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("task,", 0) != 0)
    throw BadMagic("csv header must start with 'task,'");
  std::vector<DemoRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 1 + kObsDim + kActDim)
      throw ShapeMismatch("csv line " + std::to_string(lineno) + " has " +
                          std::to_string(cells.size()) + " fields");
    DemoRecord r;
    try {
      r.task = static_cast<std::uint32_t>(std::stoul(cells[0]));
      for (int i = 0; i < kObsDim; ++i) r.obs[i] = std::stof(cells[1 + i]);
      for (int i = 0; i < kActDim; ++i) r.act[i] = std::stof(cells[1 + kObsDim + i]);
    } catch (const std::exception&) {
      throw ShapeMismatch("csv line " + std::to_string(lineno) + " has a malformed number");
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Collection

struct CollectionPlan {
  std::vector<GaitSpec> gaits;
  std::vector<double> vx_grid{0.0, 0.15, -0.15, 0.3, -0.3};
  std::vector<double> vy_grid{0.0, 0.1, -0.1};
  std::vector<double> wz_grid{0.0};
  int cells_per_gait = 10;
  int samples_per_traj = 6000;
  double settle_time = 1.0;
  std::vector<VelocityCommand> holdout{{0.22, 0.0, 0.0}, {-0.08, 0.0, 0.0}};
  double max_diverged_fraction = 0.1;
  std::uint64_t seed = 0;

  std::vector<VelocityCommand> grid() const {
    std::vector<VelocityCommand> cells;
    for (double vx : vx_grid)
      for (double vy : vy_grid)
        for (double wz : wz_grid) cells.push_back({vx, vy, wz});
    return cells;
  }

  void validate() const {
    if (gaits.empty()) throw ConfigError("data: no gaits in plan");
    if (cells_per_gait < 1) throw ConfigError("data: cells_per_gait must be >= 1");
    if (samples_per_traj < 1) throw ConfigError("data: samples_per_traj must be >= 1");
    if (!(settle_time >= 0)) throw ConfigError("data: settle_time must be >= 0");
    if (!(max_diverged_fraction >= 0 && max_diverged_fraction <= 1))
      throw ConfigError("data: max_diverged_fraction must be in [0,1]");
    const auto cells = grid();
    if (cells.empty()) throw ConfigError("data: empty command grid");
    for (const auto& c : cells)
      if (!c.within_envelope()) throw ConfigError("data: grid command outside expert envelope");
    for (const auto& h : holdout) {
      if (!h.within_envelope()) throw ConfigError("data: holdout command outside expert envelope");
      for (const auto& c : cells)
        if (c.vx == h.vx && c.vy == h.vy && c.wz == h.wz)
          throw ConfigError("data: holdout command lies on the training grid");
    }
  }
};

/// Training cells for one gait: a seeded subsample of the grid, in grid order.
inline std::vector<VelocityCommand> training_cells(const CollectionPlan& plan, std::size_t gait_index) {
  const auto cells = plan.grid();
  std::vector<std::size_t> idx(cells.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(derive_seed(plan.seed, "collect.cells", gait_index));
  rng.shuffle(idx);
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(plan.cells_per_gait)));
  std::sort(idx.begin(), idx.end());
  std::vector<VelocityCommand> out;
  for (std::size_t i : idx) out.push_back(cells[i]);
  return out;
}

struct SimContext {
  RobotModel model = default_robot_model();
  ContactParams contact;
  SimSettings settings;
  ExpertParams expert;
};

/// Survival band shared by collection and rollouts.
inline bool within_survival_band(const SimState& s, double nominal_height) {
  const double z = s.base_pos.z();
  const Vec3 rpy = base_rpy(s);
  return z >= 0.4 * nominal_height && z <= 1.6 * nominal_height && std::abs(rpy.x()) < 0.6 &&
         std::abs(rpy.y()) < 0.6;
}

/// Expert step through the servo: the target that reproduces the pre-clamp
/// expert torque.
inline JointVec expert_target(const SimState& s, const SimContext& ctx, const GaitSpec& g,
                              const VelocityCommand& cmd, ExpertAction* action_out = nullptr) {
  const ExpertAction a = expert_torques(s, ctx.model, g, cmd, s.time, ctx.expert, ctx.settings.gravity);
  if (action_out) *action_out = a;
  return inverse_pd_target(a.tau_raw, s.q, s.v, ctx.model.kp, ctx.model.kd);
}

struct StandingCheck {
  bool passed = false;
  double max_height_error = 0.0;
  double duration = 0.0;
};

/// Expert holds the nominal stance with all feet loaded.
inline StandingCheck expert_standing_check(const SimContext& ctx, double duration = 5.0,
                                           double tolerance = 0.02) {
  GaitSpec stand = default_gait(GaitKind::kTrot);
  stand.duty = 1.0;
  SimState s = nominal_stance_state(ctx.model);
  StandingCheck out;
  out.duration = duration;
  const int steps = static_cast<int>(std::llround(duration / ctx.settings.dt));
  try {
    for (int k = 0; k < steps; ++k) {
      s = step(s, ctx.model, ctx.contact, expert_target(s, ctx, stand, {}), ctx.settings.dt,
               ctx.settings);
      out.max_height_error =
          std::max(out.max_height_error, std::abs(s.base_pos.z() - ctx.model.nominal_base_height));
    }
  } catch (const Diverged&) {
    out.max_height_error = std::numeric_limits<double>::infinity();
  }
  out.passed = out.max_height_error <= tolerance;
  return out;
}

struct CellReport {
  std::string gait;
  std::string split;
  VelocityCommand cmd;
  bool kept = false;
  std::string reason;        // why a trajectory was discarded
  int clamped_steps = 0;     // steps whose expert torque exceeded tau_max
  int ik_clamps = 0;
  int out_of_band_actions = 0;
  double max_roundtrip_error = 0.0;
};

struct CollectionResult {
  std::vector<std::vector<DemoRecord>> train;    // per gait
  std::vector<std::vector<DemoRecord>> holdout;  // per gait
  std::vector<CellReport> cells;
  StandingCheck standing;
};

inline constexpr double kActionSanityBand = 0.5;

/// Runs one (gait, command) trajectory: settle, then record consecutive
/// (o_t, a_t) pairs at every control tick.
inline std::vector<DemoRecord> collect_trajectory(const SimContext& ctx, const GaitSpec& g,
                                                  const VelocityCommand& cmd, std::uint32_t task,
                                                  int settle_steps, int samples, CellReport& rep) {
  std::vector<DemoRecord> out;
  out.reserve(static_cast<std::size_t>(samples));
  ObservationBuilder observe(ctx.contact, ctx.settings);
  SimState s = nominal_stance_state(ctx.model);
  const RobotModel& m = ctx.model;
  try {
    for (int k = 0; k < settle_steps + samples; ++k) {
      const ObsVec obs = observe(s);
      ExpertAction a;
      const JointVec target = expert_target(s, ctx, g, cmd, &a);
      if (k >= settle_steps) {
        if (a.clamped) ++rep.clamped_steps;
        rep.ik_clamps += a.ik_clamps;
        const int j = k - settle_steps;
        if (j % 100 == 0) {
          const JointVec replay = pd_torque_unclamped(m, target, s.q, s.v);
          rep.max_roundtrip_error =
              std::max(rep.max_roundtrip_error, (replay - a.tau_raw).cwiseAbs().maxCoeff());
        }
        const bool in_band = ((target - m.joint_lower).array() >= -kActionSanityBand).all() &&
                             ((m.joint_upper - target).array() >= -kActionSanityBand).all();
        if (!in_band) ++rep.out_of_band_actions;
        out.push_back(make_record(task, obs, target));
      }
      s = step(s, m, ctx.contact, target, ctx.settings.dt, ctx.settings);
      if (!within_survival_band(s, m.nominal_base_height)) {
        std::ostringstream os;
        os << "left survival band at t=" << s.time;
        rep.reason = os.str();
        return {};
      }
    }
  } catch (const Diverged& e) {
    rep.reason = e.what();
    return {};
  }
  if (rep.out_of_band_actions > 0) {
    rep.reason = std::to_string(rep.out_of_band_actions) + " actions outside joint limits +-0.5 rad";
    return {};
  }
  rep.kept = true;
  return out;
}

/// Task ids follow the order of plan.gaits.
inline CollectionResult collect(const CollectionPlan& plan, const SimContext& ctx) {
  plan.validate();
  ctx.model.validate();
  ctx.contact.validate();
  ctx.settings.validate();
  ctx.expert.validate();
  for (const GaitSpec& g : plan.gaits) g.validate();

  CollectionResult res;
  res.standing = expert_standing_check(ctx);
  if (!res.standing.passed) {
    std::ostringstream os;
    os << "expert standing check failed: max height error " << res.standing.max_height_error
       << " m";
    throw CollectionFailed(os.str());
  }

  const int settle = static_cast<int>(std::llround(plan.settle_time / ctx.settings.dt));
  res.train.resize(plan.gaits.size());
  res.holdout.resize(plan.gaits.size());
  for (std::size_t gi = 0; gi < plan.gaits.size(); ++gi) {
    const GaitSpec& g = plan.gaits[gi];
    const std::string name(gait_name(g.kind));
    const auto task = static_cast<std::uint32_t>(gi);
    int attempted = 0, diverged = 0;
    auto run_split = [&](const std::vector<VelocityCommand>& cmds, const char* split,
                         std::vector<DemoRecord>& sink) {
      for (const VelocityCommand& cmd : cmds) {
        CellReport rep;
        rep.gait = name;
        rep.split = split;
        rep.cmd = cmd;
        auto recs = collect_trajectory(ctx, g, cmd, task, settle, plan.samples_per_traj, rep);
        ++attempted;
        if (!rep.kept) ++diverged;
        sink.insert(sink.end(), recs.begin(), recs.end());
        res.cells.push_back(rep);
      }
    };
    run_split(training_cells(plan, gi), "train", res.train[gi]);
    run_split(plan.holdout, "holdout", res.holdout[gi]);
    if (diverged > plan.max_diverged_fraction * attempted) {
      throw CollectionFailed(name + ": " + std::to_string(diverged) + " of " +
                             std::to_string(attempted) + " trajectories diverged");
    }
  }
  return res;
}

}  // namespace quadmtl
