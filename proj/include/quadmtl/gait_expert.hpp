#pragma once

// Scripted demonstration controller. Legs follow a clocked gait table; stance
// legs realise a desired base wrench through least-squares force allocation
// and Jacobian-transpose torques, swing legs track a Raibert-placed foot
// trajectory through IK and a joint PD loop. The controller is stateless:
// its output depends only on (state, time, command, gait).

#include <Eigen/Eigenvalues>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quadmtl/errors.hpp"
#include "quadmtl/robot_model.hpp"
#include "quadmtl/sim.hpp"

namespace quadmtl {

enum class GaitKind { kTrot, kBound, kJump, kWalk };

inline constexpr std::array<GaitKind, 4> kAllGaitKinds = {GaitKind::kTrot, GaitKind::kBound,
                                                          GaitKind::kJump, GaitKind::kWalk};

inline constexpr std::string_view gait_name(GaitKind kind) {
  switch (kind) {
    case GaitKind::kTrot: return "trot";
    case GaitKind::kBound: return "bound";
    case GaitKind::kJump: return "jump";
    case GaitKind::kWalk: return "walk";
  }
  return "?";
}

inline std::optional<GaitKind> parse_gait_name(std::string_view name) {
  for (GaitKind k : kAllGaitKinds)
    if (gait_name(k) == name) return k;
  return std::nullopt;
}

struct GaitSpec {
  GaitKind kind = GaitKind::kTrot;
  double period = 0.5;
  double duty = 0.5;
  std::array<double, kNumLegs> phase_offset{0.0, 0.5, 0.5, 0.0};
  double swing_height = 0.08;

  double stance_time() const { return duty * period; }
  double swing_time() const { return (1.0 - duty) * period; }

  void validate() const {
    const std::string n(gait_name(kind));
    if (!(period > 0)) throw ConfigError("gait." + n + ": period must be > 0");
    if (!(duty > 0 && duty <= 1)) throw ConfigError("gait." + n + ": duty must be in (0,1]");
    for (double o : phase_offset)
      if (!(o >= 0 && o < 1)) throw ConfigError("gait." + n + ": phase offsets must be in [0,1)");
    if (!(swing_height >= 0)) throw ConfigError("gait." + n + ": swing_height must be >= 0");
  }
};

inline GaitSpec default_gait(GaitKind kind) {
  GaitSpec g;
  g.kind = kind;
  switch (kind) {
    case GaitKind::kTrot:
      g.phase_offset = {0.0, 0.5, 0.5, 0.0};
      break;
    case GaitKind::kBound:
      g.period = 0.3;
      g.phase_offset = {0.0, 0.0, 0.5, 0.5};
      break;
    case GaitKind::kJump:
      g.period = 0.3;
      g.phase_offset = {0.0, 0.0, 0.0, 0.0};
      break;
    case GaitKind::kWalk:
      g.period = 0.8;
      g.duty = 0.75;
      g.phase_offset = {0.0, 0.5, 0.75, 0.25};
      break;
  }
  return g;
}

struct VelocityCommand {
  double vx = 0.0;
  double vy = 0.0;
  double wz = 0.0;

  bool within_envelope() const {
    return std::abs(vx) <= 1.0 && std::abs(vy) <= 0.5 && std::abs(wz) <= 1.5;
  }
};

struct ExpertParams {
  double height_kp = 600.0;
  double height_kd = 80.0;
  double attitude_kp = 60.0;
  double attitude_kd = 8.0;
  double velocity_kp = 120.0;
  double raibert_kv = 0.1;
  double swing_kp = 40.0;
  double swing_kd = 0.5;
  double friction_mu = 0.6;  // allocation cone, tighter than the ground's
  double moment_weight = 6.0;  // allocation weight of the torque rows

  void validate() const {
    if (!(height_kp >= 0 && height_kd >= 0 && attitude_kp >= 0 && attitude_kd >= 0 &&
          velocity_kp >= 0 && raibert_kv >= 0 && swing_kp > 0 && swing_kd >= 0 &&
          friction_mu >= 0 && moment_weight > 0))
      throw ConfigError("expert: gains must be non-negative (swing_kp > 0)");
  }
};

struct ExpertAction {
  JointVec tau = JointVec::Zero();      // applied, clamped to +-tau_max
  JointVec tau_raw = JointVec::Zero();  // before the actuator clamp
  double phase = 0.0;                   // diagnostic only
  bool clamped = false;
  int ik_clamps = 0;
  bool allocation_fallback = false;
};

// ---------------------------------------------------------------------------

struct GaitPhase {
  std::array<double, kNumLegs> leg_phase{};
  std::array<bool, kNumLegs> in_stance{};
};

inline double frac(double x) { return x - std::floor(x); }

inline GaitPhase gait_phase(const GaitSpec& g, double t) {
  GaitPhase p;
  const double base = t / g.period;
  for (int i = 0; i < kNumLegs; ++i) {
    p.leg_phase[i] = frac(base + g.phase_offset[i]);
    p.in_stance[i] = p.leg_phase[i] < g.duty;
  }
  return p;
}

/// Swing foot path: smoothstep in x,y, a sine arch of height swing_height on
/// top of the linear z blend. Endpoints are exact.
inline Vec3 swing_trajectory(const GaitSpec& g, const Vec3& start, const Vec3& target, double s) {
  if (s <= 0.0) return start;
  if (s >= 1.0) return target;
  const double blend = s * s * (3.0 - 2.0 * s);
  Vec3 p;
  p.head<2>() = start.head<2>() + blend * (target.head<2>() - start.head<2>());
  p.z() = start.z() + s * (target.z() - start.z());
  p.z() += g.swing_height * std::sin(M_PI * s);
  return p;
}

/// Landing point: hip ground projection + (T_stance/2) v_cmd + k_v (v - v_cmd).
inline Vec3 raibert_target(const Vec3& v_cmd, const GaitSpec& g, const Vec3& hip_world,
                           const Vec3& v_actual, double k_v = 0.03) {
  Vec3 p{hip_world.x(), hip_world.y(), 0.0};
  p.head<2>() += 0.5 * g.stance_time() * v_cmd.head<2>() +
                 k_v * (v_actual.head<2>() - v_cmd.head<2>());
  return p;
}

inline Vec3 raibert_target(const VelocityCommand& cmd, const GaitSpec& g, const Vec3& hip_world,
                           const Vec3& v_actual, double k_v = 0.03) {
  return raibert_target(Vec3{cmd.vx, cmd.vy, 0.0}, g, hip_world, v_actual, k_v);
}

// ---------------------------------------------------------------------------
// Stance force allocation

struct Wrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

struct ForceAllocation {
  std::vector<Vec3> forces;          // after friction-cone projection
  std::vector<Vec3> raw_forces;      // minimum-norm solution
  double residual = 0.0;             // |G F_raw - w|, before projection
  int rank = 0;
};

inline Mat3 skew(const Vec3& r) {
  Mat3 s;
  s << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
  return s;
}

/// Structural rank of the grasp matrix for ns point contacts in general
/// position. Two points can never resist a moment about the line joining them.
inline int expected_grasp_rank(int ns) { return ns >= 3 ? 6 : (ns == 2 ? 5 : 3 * ns); }

/// Minimum-norm contact forces reproducing `wrench` about the origin of the
/// frame in which `feet` are expressed, then projected onto the friction cone
/// around +z. Solved on the 6x6 normal equations with Tikhonov lambda and
/// iterative refinement; wrench components outside the grasp range are
/// dropped (least-squares). `moment_weight` scales the torque rows of that
/// least-squares fit. Throws RankDeficient when the stance has lower rank
/// than its structural rank.
inline ForceAllocation allocate_stance_forces(const Wrench& wrench, const std::vector<Vec3>& feet,
                                              double mu, double lambda = 1e-9,
                                              double moment_weight = 1.0) {
  const int ns = static_cast<int>(feet.size());
  if (ns < 1) throw RankDeficient("no stance feet");

  Eigen::Matrix<double, 6, Eigen::Dynamic> grasp(6, 3 * ns);
  for (int i = 0; i < ns; ++i) {
    grasp.block<3, 3>(0, 3 * i).setIdentity();
    grasp.block<3, 3>(3, 3 * i) = moment_weight * skew(feet[i]);
  }
  Eigen::Matrix<double, 6, 1> w;
  w << wrench.force, moment_weight * wrench.torque;

  using Mat6 = Eigen::Matrix<double, 6, 6>;
  const Mat6 normal = grasp * grasp.transpose() + lambda * Mat6::Identity();
  Eigen::SelfAdjointEigenSolver<Mat6> eig(normal);
  const auto& evals = eig.eigenvalues();
  const auto& evecs = eig.eigenvectors();
  const double tol = 1e-6 * std::max(1.0, evals.maxCoeff());

  ForceAllocation out;
  Eigen::Matrix<double, 6, 1> inv_diag = Eigen::Matrix<double, 6, 1>::Zero();
  for (int j = 0; j < 6; ++j) {
    if (evals[j] > tol) {
      inv_diag[j] = 1.0 / evals[j];
      ++out.rank;
    }
  }
  if (out.rank < expected_grasp_rank(ns)) {
    throw RankDeficient("grasp rank " + std::to_string(out.rank) + " < " +
                        std::to_string(expected_grasp_rank(ns)) + " for " + std::to_string(ns) +
                        " feet");
  }

  // Range projector of the grasp matrix; the residual is only refined there.
  auto solve = [&](const Eigen::Matrix<double, 6, 1>& rhs) {
    const Eigen::Matrix<double, 6, 1> y =
        evecs * (inv_diag.asDiagonal() * (evecs.transpose() * rhs));
    return Eigen::VectorXd(grasp.transpose() * y);
  };
  Eigen::Matrix<double, 6, 6> range_proj = Mat6::Zero();
  for (int j = 0; j < 6; ++j)
    if (inv_diag[j] != 0.0) range_proj += evecs.col(j) * evecs.col(j).transpose();

  const Eigen::Matrix<double, 6, 1> w_range = range_proj * w;
  Eigen::VectorXd f = solve(w_range);
  for (int it = 0; it < 3; ++it) {
    const Eigen::Matrix<double, 6, 1> r = range_proj * (w_range - grasp * f);
    f += solve(r);
  }
  Eigen::Matrix<double, 6, 1> r = grasp * f - w;
  r.tail<3>() /= moment_weight;
  out.residual = r.norm();

  out.raw_forces.resize(ns);
  out.forces.resize(ns);
  for (int i = 0; i < ns; ++i) {
    Vec3 fi = f.segment<3>(3 * i);
    out.raw_forces[i] = fi;
    fi.z() = std::max(0.0, fi.z());
    const double lim = mu * fi.z();
    const double t = fi.head<2>().norm();
    if (t > lim) fi.head<2>() *= (t > 0.0 ? lim / t : 0.0);
    out.forces[i] = fi;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Expert controller

namespace detail {

inline Mat3 yaw_rotation(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

// Nominal foot point below the abduction pivot, body frame.
inline Vec3 nominal_foot_body(const RobotModel& m, Leg leg) {
  return m.hip_offsets[leg_index(leg)] + Vec3{0.0, side_sign(leg) * m.l_abd, 0.0};
}

// Vertical reference of a synchronous jump: half-sine stance force with the
// impulse of one full period, so that flight lasts the swing time.
struct JumpReference {
  double accel;
  double vel;
  double offset;  // height relative to touchdown
};

inline JumpReference jump_reference(const GaitSpec& g, double s, double gravity) {
  const double t_st = g.stance_time();
  const double v0 = 0.5 * gravity * g.swing_time();
  JumpReference ref;
  ref.accel = gravity * (M_PI / (2.0 * g.duty) * std::sin(M_PI * s) - 1.0);
  ref.vel = -v0 + gravity * t_st * ((1.0 - std::cos(M_PI * s)) / (2.0 * g.duty) - s);
  ref.offset = t_st * (-v0 * s + gravity * t_st *
                                    ((s - std::sin(M_PI * s) / M_PI) / (2.0 * g.duty) - 0.5 * s * s));
  return ref;
}

// Pitch oscillation forced by alternating front/rear pair support. Each
// pair carries the body weight at lever arm d, giving a constant pitch
// acceleration over its stance; the reference is the zero-mean periodic
// solution.
struct PitchReference {
  double angle;
  double rate;
  double accel;
};

inline PitchReference bound_pitch_reference(const RobotModel& m, const GaitSpec& g,
                                            double front_phase, double gravity) {
  const double d = std::abs(m.hip_offsets[leg_index(Leg::FL)].x());
  const double alpha = m.mass * gravity * d / m.base_inertia.y();
  const bool front = front_phase < g.duty;
  const double t_st = front ? g.stance_time() : g.swing_time();
  const double u = front ? front_phase / g.duty : (front_phase - g.duty) / (1.0 - g.duty);
  const double sign = front ? 1.0 : -1.0;
  return {sign * 0.5 * alpha * t_st * t_st * (u - u * u), sign * alpha * t_st * (0.5 - u),
          -sign * alpha};
}

}  // namespace detail

inline ExpertAction expert_torques(const SimState& s, const RobotModel& m, const GaitSpec& g,
                                   const VelocityCommand& cmd, double t,
                                   const ExpertParams& p = ExpertParams{},
                                   double gravity = 9.81) {
  ExpertAction out;
  const GaitPhase phase = gait_phase(g, t);
  out.phase = frac(t / g.period);

  const Mat3 rot = s.rotation();
  const Vec3 rpy = base_rpy(s);
  const Mat3 yaw_rot = detail::yaw_rotation(rpy.z());
  const Vec3 v_cmd_w = yaw_rot * Vec3{cmd.vx, cmd.vy, 0.0};
  const Vec3& v = s.base_lin_vel;

  // Desired base wrench (world-aligned axes, about the base origin).
  Wrench wrench;
  wrench.force.x() = p.velocity_kp * (v_cmd_w.x() - v.x());
  wrench.force.y() = p.velocity_kp * (v_cmd_w.y() - v.y());
  if (g.kind == GaitKind::kJump && g.duty < 1.0) {
    const double st = std::clamp(phase.leg_phase[0] / g.duty, 0.0, 1.0);
    const auto ref = detail::jump_reference(g, st, gravity);
    wrench.force.z() = m.mass * (gravity + ref.accel) +
                       p.height_kp * (m.nominal_base_height + ref.offset - s.base_pos.z()) +
                       p.height_kd * (ref.vel - v.z());
  } else {
    wrench.force.z() = m.mass * gravity + p.height_kp * (m.nominal_base_height - s.base_pos.z()) -
                       p.height_kd * v.z();
  }
  const Vec3 w_body = s.base_ang_vel;
  Vec3 torque_body{-p.attitude_kp * rpy.x() - p.attitude_kd * w_body.x(),
                   -p.attitude_kp * rpy.y() - p.attitude_kd * w_body.y(),
                   p.attitude_kd * (cmd.wz - w_body.z())};
  if (g.kind == GaitKind::kBound) {
    const auto ref = detail::bound_pitch_reference(m, g, phase.leg_phase[0], gravity);
    torque_body.y() = m.base_inertia.y() * ref.accel + p.attitude_kp * (ref.angle - rpy.y()) +
                      p.attitude_kd * (ref.rate - w_body.y());
  }
  wrench.torque = rot * torque_body;

  std::vector<Leg> stance;
  std::vector<Vec3> feet_w;
  for (Leg leg : kAllLegs) {
    if (!phase.in_stance[leg_index(leg)]) continue;
    stance.push_back(leg);
    feet_w.push_back(rot * leg_forward_kinematics(m, leg, leg_block(s.q, leg)));
  }

  JointVec tau = JointVec::Zero();
  if (!stance.empty()) {
    std::vector<Vec3> forces;
    try {
      forces = allocate_stance_forces(wrench, feet_w, p.friction_mu, 1e-9, p.moment_weight).forces;
    } catch (const RankDeficient&) {
      out.allocation_fallback = true;
      forces.assign(stance.size(),
                    Vec3{0.0, 0.0, std::max(0.0, wrench.force.z()) / stance.size()});
    }
    for (std::size_t i = 0; i < stance.size(); ++i) {
      const Leg leg = stance[i];
      const Mat3 jac = leg_jacobian(m, leg, leg_block(s.q, leg));
      set_leg_block(tau, leg, jac.transpose() * (-(rot.transpose() * forces[i])));
    }
  }

  auto solve_ik = [&](Leg leg, Vec3 foot_b, bool count) {
    if (clamp_to_workspace(m, leg, foot_b) && count) ++out.ik_clamps;
    try {
      return leg_inverse_kinematics(m, leg, foot_b);
    } catch (const Unreachable&) {
      if (count) ++out.ik_clamps;
      return Vec3(leg_block(m.nominal_joint_pos, leg));
    }
  };

  // Swing legs follow the foot path with joint PD plus the path's joint
  // velocity as feedforward.
  const double dt_ff = 1e-3;
  for (Leg leg : kAllLegs) {
    const int li = leg_index(leg);
    if (phase.in_stance[li]) continue;
    const double progress = (phase.leg_phase[li] - g.duty) / (1.0 - g.duty);
    const double dprogress = dt_ff / g.swing_time();

    const Vec3 nominal_b = detail::nominal_foot_body(m, leg);
    const Vec3 lever_w = rot * nominal_b;
    const Vec3 hip_w = s.base_pos + lever_w;
    const Vec3 v_cmd_hip = v_cmd_w + Vec3::UnitZ().cross(lever_w) * cmd.wz;
    const Vec3 v_hip = v + rot * w_body.cross(nominal_b);

    const Vec3 land = raibert_target(v_cmd_hip, g, hip_w, v_hip, p.raibert_kv);
    Vec3 lift{hip_w.x(), hip_w.y(), 0.0};
    lift.head<2>() -= 0.5 * g.stance_time() * v_cmd_hip.head<2>();

    const Vec3 foot_w = swing_trajectory(g, lift, land, progress);
    const Vec3 q_des = solve_ik(leg, rot.transpose() * (foot_w - s.base_pos), true);
    const Vec3 foot_next = swing_trajectory(g, lift, land, std::min(1.0, progress + dprogress));
    const Vec3 q_next = solve_ik(leg, rot.transpose() * (foot_next - s.base_pos), false);
    const Vec3 qd_des = (q_next - q_des) / dt_ff;

    set_leg_block(tau, leg,
                  p.swing_kp * (q_des - leg_block(s.q, leg)) +
                      p.swing_kd * (qd_des - leg_block(s.v, leg)));
  }

  out.tau_raw = tau;
  out.tau = tau.cwiseMax(-m.tau_max).cwiseMin(m.tau_max);
  out.clamped = (out.tau.array() != tau.array()).any();
  return out;
}

}  // namespace quadmtl
