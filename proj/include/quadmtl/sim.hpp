#pragma once

// Fixed-step quadruped simulator: a floating rigid base carried by four
// low-mass servo legs. Each joint is a second-order servo (apparent rotor
// inertia) driven by the PD torque and loaded by its foot's contact force
// through the leg Jacobian. Ground contact is a penalty spring-damper with a
// regularised Coulomb limit.

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <ostream>

#include "quadmtl/errors.hpp"
#include "quadmtl/robot_model.hpp"

namespace quadmtl {

using Quat = Eigen::Quaterniond;

struct SimState {
  Vec3 base_pos = Vec3::Zero();
  Quat base_quat = Quat::Identity();  // world <- body
  Vec3 base_lin_vel = Vec3::Zero();   // world frame
  Vec3 base_ang_vel = Vec3::Zero();   // body frame
  JointVec q = JointVec::Zero();
  JointVec v = JointVec::Zero();
  std::array<Vec3, kNumLegs> foot_force{Vec3::Zero(), Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
  double time = 0.0;

  Mat3 rotation() const { return base_quat.toRotationMatrix(); }
};

struct ContactParams {
  double k_n = 3.0e4;
  double c_n = 300.0;
  double mu = 0.7;
  double v_slip = 0.02;
  double contact_force_threshold = 1.0;

  void validate() const {
    if (!(k_n > 0)) throw ConfigError("contact: k_n must be > 0");
    if (!(c_n >= 0)) throw ConfigError("contact: c_n must be >= 0");
    if (!(mu >= 0)) throw ConfigError("contact: mu must be >= 0");
    if (!(v_slip > 0)) throw ConfigError("contact: v_slip must be > 0");
    if (!(contact_force_threshold > 0))
      throw ConfigError("contact: contact_force_threshold must be > 0");
  }
};

struct SimSettings {
  double dt = 1e-3;
  double gravity = 9.81;
  // Internal integration step. The penalty contact and the viscous friction
  // regime act on the small apparent foot mass, which needs a finer step
  // than the 1 kHz control rate.
  double max_substep = 5e-5;

  void validate() const {
    if (!(dt > 0 && dt <= 0.005)) throw ConfigError("sim: dt must be in (0, 0.005]");
    if (!(gravity >= 0)) throw ConfigError("sim: gravity must be >= 0");
    if (!(max_substep > 0)) throw ConfigError("sim: max_substep must be > 0");
  }
};

struct ImuSample {
  Vec3 ang_vel = Vec3::Zero();  // body frame
  Vec3 lin_acc = Vec3::Zero();  // body frame, specific force
};

// ---------------------------------------------------------------------------

/// tau = kp (target - q) + kd (0 - v), clamped to +-tau_max.
inline JointVec pd_torque(const RobotModel& m, const JointVec& target, const JointVec& q,
                          const JointVec& v) {
  JointVec tau = m.kp * (target - q) - m.kd * v;
  return tau.cwiseMax(-m.tau_max).cwiseMin(m.tau_max);
}

/// Same law without the actuator clamp.
inline JointVec pd_torque_unclamped(const RobotModel& m, const JointVec& target,
                                    const JointVec& q, const JointVec& v) {
  return m.kp * (target - q) - m.kd * v;
}

/// Penalty contact force on a foot at world position p moving with velocity
/// vel (both world frame).
inline Vec3 contact_force(const ContactParams& c, const Vec3& p, const Vec3& vel) {
  const double pen = std::max(0.0, -p.z());
  if (pen <= 0.0) return Vec3::Zero();
  const double fn = std::max(0.0, c.k_n * pen + c.c_n * std::max(0.0, -vel.z()));

  Vec3 f{0.0, 0.0, fn};
  const Eigen::Vector2d vt = vel.head<2>();
  const double speed = vt.norm();
  if (speed > 0.0) {
    const double limit = c.mu * fn;
    const double mag = std::min(limit, limit / c.v_slip * speed);
    f.head<2>() = -mag * vt / speed;
  }
  return f;
}

inline Vec3 foot_position_world(const SimState& s, const RobotModel& m, Leg leg) {
  return s.base_pos + s.base_quat * leg_forward_kinematics(m, leg, leg_block(s.q, leg));
}

inline bool state_is_finite(const SimState& s) {
  bool ok = s.base_pos.allFinite() && s.base_quat.coeffs().allFinite() &&
            s.base_lin_vel.allFinite() && s.base_ang_vel.allFinite() && s.q.allFinite() &&
            s.v.allFinite() && std::isfinite(s.time);
  for (const Vec3& f : s.foot_force) ok = ok && f.allFinite();
  return ok;
}

namespace detail {

inline void substep(SimState& s, const RobotModel& m, const ContactParams& c,
                    const JointVec& target, double h, double gravity) {
  const Mat3 rot = s.rotation();
  const JointVec tau = pd_torque(m, target, s.q, s.v);

  Vec3 force_w{0.0, 0.0, -m.mass * gravity};
  Vec3 moment_w = Vec3::Zero();
  JointVec joint_load = JointVec::Zero();

  for (Leg leg : kAllLegs) {
    const Vec3 ql = leg_block(s.q, leg);
    const Vec3 p_b = leg_forward_kinematics(m, leg, ql);
    const Mat3 jac = leg_jacobian(m, leg, ql);
    const Vec3 p_w = s.base_pos + rot * p_b;
    const Vec3 v_w =
        s.base_lin_vel + rot * (s.base_ang_vel.cross(p_b) + jac * leg_block(s.v, leg));
    const Vec3 f_w = contact_force(c, p_w, v_w);
    s.foot_force[leg_index(leg)] = f_w;

    force_w += f_w;
    moment_w += (rot * p_b).cross(f_w);
    // The foot force loads the servo chain; a massless chain passes the same
    // force on to the base at the foot point.
    set_leg_block(joint_load, leg, jac.transpose() * (rot.transpose() * f_w));
  }

  // Joints: semi-implicit Euler, then clamp to limits with velocity zeroing.
  s.v += h * (tau + joint_load) / m.rotor_inertia;
  s.q += h * s.v;
  for (int i = 0; i < kNumJoints; ++i) {
    if (s.q[i] < m.joint_lower[i]) {
      s.q[i] = m.joint_lower[i];
      if (s.v[i] < 0) s.v[i] = 0;
    } else if (s.q[i] > m.joint_upper[i]) {
      s.q[i] = m.joint_upper[i];
      if (s.v[i] > 0) s.v[i] = 0;
    }
  }

  // Base.
  const Vec3& inertia = m.base_inertia;
  const Vec3 w = s.base_ang_vel;
  const Vec3 moment_b = rot.transpose() * moment_w;
  const Vec3 gyro = w.cross(inertia.cwiseProduct(w));
  s.base_lin_vel += h * force_w / m.mass;
  s.base_ang_vel += h * (moment_b - gyro).cwiseQuotient(inertia);
  s.base_pos += h * s.base_lin_vel;

  const Vec3 dtheta = h * s.base_ang_vel;
  const double angle = dtheta.norm();
  if (angle > 0.0) {
    s.base_quat = s.base_quat * Quat(Eigen::AngleAxisd(angle, dtheta / angle));
  }
  s.base_quat.normalize();
  s.time += h;
}

}  // namespace detail

/// Advances the state by dt holding the joint target constant. The PD law is
/// evaluated at every internal substep.
inline SimState step(const SimState& state, const RobotModel& m, const ContactParams& c,
                     const JointVec& joint_target, double dt,
                     const SimSettings& settings = SimSettings{}) {
  if (!(dt > 0.0 && dt <= 0.005)) throw ConfigError("step: dt must be in (0, 0.005]");
  SimState s = state;
  const double t_end = state.time + dt;
  const int n = std::max(1, static_cast<int>(std::ceil(dt / settings.max_substep - 1e-9)));
  const double h = dt / n;
  for (int i = 0; i < n; ++i) {
    detail::substep(s, m, c, joint_target, h, settings.gravity);
    if (!state_is_finite(s) || s.base_pos.norm() > 100.0) throw Diverged(s.time);
  }
  s.time = t_end;
  return s;
}

/// Body-frame gyro and accelerometer from two consecutive states.
inline ImuSample read_imu(const SimState& prev, const SimState& curr, double dt,
                          double gravity = 9.81) {
  ImuSample imu;
  imu.ang_vel = curr.base_ang_vel;
  const Vec3 accel_w = (curr.base_lin_vel - prev.base_lin_vel) / dt;
  const Vec3 g_vec{0.0, 0.0, -gravity};
  imu.lin_acc = curr.rotation().transpose() * (accel_w - g_vec);
  return imu;
}

inline std::array<bool, kNumLegs> contact_flags(const SimState& s, const ContactParams& c) {
  std::array<bool, kNumLegs> flags{};
  for (int i = 0; i < kNumLegs; ++i) flags[i] = s.foot_force[i].z() > c.contact_force_threshold;
  return flags;
}

/// Robot at rest in the nominal stance with the feet touching the ground.
inline SimState nominal_stance_state(const RobotModel& m) {
  SimState s;
  s.q = m.nominal_joint_pos;
  double lowest = 0.0;
  for (Leg leg : kAllLegs)
    lowest = std::min(lowest, leg_forward_kinematics(m, leg, leg_block(s.q, leg)).z());
  s.base_pos = Vec3{0.0, 0.0, -lowest};
  return s;
}

/// Roll, pitch, yaw (ZYX convention) of the base.
inline Vec3 base_rpy(const SimState& s) {
  const Mat3 r = s.rotation();
  const double roll = std::atan2(r(2, 1), r(2, 2));
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  const double yaw = std::atan2(r(1, 0), r(0, 0));
  return {roll, pitch, yaw};
}

// ---------------------------------------------------------------------------
// Rollout log: t, base_pos(3), base_quat(4: w x y z), base_vel(6: linear world,
// angular body), q(12), v(12), target(12), contacts(4).

inline void write_rollout_header(std::ostream& os) {
  os << "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz";
  for (int i = 0; i < kNumJoints; ++i) os << ",q" << i;
  for (int i = 0; i < kNumJoints; ++i) os << ",v" << i;
  for (int i = 0; i < kNumJoints; ++i) os << ",target" << i;
  for (Leg leg : kAllLegs) os << ",contact_" << leg_name(leg);
  os << '\n';
}

inline void write_rollout_row(std::ostream& os, const SimState& s, const JointVec& target,
                              const std::array<bool, kNumLegs>& contacts) {
  os << s.time;
  for (int i = 0; i < 3; ++i) os << ',' << s.base_pos[i];
  os << ',' << s.base_quat.w() << ',' << s.base_quat.x() << ',' << s.base_quat.y() << ','
     << s.base_quat.z();
  for (int i = 0; i < 3; ++i) os << ',' << s.base_lin_vel[i];
  for (int i = 0; i < 3; ++i) os << ',' << s.base_ang_vel[i];
  for (int i = 0; i < kNumJoints; ++i) os << ',' << s.q[i];
  for (int i = 0; i < kNumJoints; ++i) os << ',' << s.v[i];
  for (int i = 0; i < kNumJoints; ++i) os << ',' << target[i];
  for (bool b : contacts) os << ',' << (b ? 1 : 0);
  os << '\n';
}

}  // namespace quadmtl
