#pragma once

// Geometry and leg kinematics of a Go1-class quadruped.
//
// Joint order is leg-major: FL, FR, RL, RR, each leg contributing
// (abduction, thigh, knee). The zero configuration points every leg straight
// down from its abduction pivot; positive thigh rotation swings the foot
// backwards and the knee bends on the backward branch (knee <= 0).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string_view>

#include "quadmtl/errors.hpp"

namespace quadmtl {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using JointVec = Eigen::Matrix<double, 12, 1>;

inline constexpr int kNumLegs = 4;
inline constexpr int kNumJoints = 12;

enum class Leg : int { FL = 0, FR = 1, RL = 2, RR = 3 };

inline constexpr std::array<Leg, kNumLegs> kAllLegs = {Leg::FL, Leg::FR, Leg::RL, Leg::RR};

inline constexpr int leg_index(Leg leg) { return static_cast<int>(leg); }
inline constexpr int first_joint(Leg leg) { return 3 * leg_index(leg); }
inline constexpr bool is_left(Leg leg) { return leg == Leg::FL || leg == Leg::RL; }
inline constexpr bool is_front(Leg leg) { return leg == Leg::FL || leg == Leg::FR; }
inline constexpr double side_sign(Leg leg) { return is_left(leg) ? 1.0 : -1.0; }

inline constexpr std::string_view leg_name(Leg leg) {
  constexpr std::array<std::string_view, kNumLegs> names = {"FL", "FR", "RL", "RR"};
  return names[leg_index(leg)];
}

inline Vec3 leg_block(const JointVec& q, Leg leg) { return q.segment<3>(first_joint(leg)); }

inline void set_leg_block(JointVec& q, Leg leg, const Vec3& value) {
  q.segment<3>(first_joint(leg)) = value;
}

struct RobotModel {
  double mass = 12.0;
  Vec3 base_inertia{0.08, 0.25, 0.28};  // diagonal, kg m^2
  std::array<Vec3, kNumLegs> hip_offsets{
      Vec3{0.1881, 0.04675, 0.0}, Vec3{0.1881, -0.04675, 0.0},
      Vec3{-0.1881, 0.04675, 0.0}, Vec3{-0.1881, -0.04675, 0.0}};
  double l_abd = 0.08;
  double l_thigh = 0.213;
  double l_calf = 0.213;

  // PD servo: tau = kp (target - q) - kd v, clamped to +-tau_max.
  double kp = 40.0;
  double kd = 0.5;
  double tau_max = 23.7;
  double rotor_inertia = 0.02;  // apparent joint inertia of the servo chain

  JointVec joint_lower;
  JointVec joint_upper;
  JointVec nominal_joint_pos;
  double nominal_base_height = 0.30;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Forward kinematics and Jacobian

namespace detail {

inline Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

// Foot position in the abduction frame (before the abduction rotation).
inline Vec3 leg_plane_point(const RobotModel& m, Leg leg, double q1, double q2) {
  const double s1 = std::sin(q1), c1 = std::cos(q1);
  const double s12 = std::sin(q1 + q2), c12 = std::cos(q1 + q2);
  return {-m.l_thigh * s1 - m.l_calf * s12, side_sign(leg) * m.l_abd,
          -m.l_thigh * c1 - m.l_calf * c12};
}

}  // namespace detail

/// Foot position in the body frame.
inline Vec3 leg_forward_kinematics(const RobotModel& m, Leg leg, const Vec3& q) {
  return m.hip_offsets[leg_index(leg)] +
         detail::rot_x(q[0]) * detail::leg_plane_point(m, leg, q[1], q[2]);
}

/// d(foot position)/d(q_leg), closed form.
inline Mat3 leg_jacobian(const RobotModel& m, Leg leg, const Vec3& q) {
  const Mat3 r = detail::rot_x(q[0]);
  const Vec3 v = detail::leg_plane_point(m, leg, q[1], q[2]);
  const double s1 = std::sin(q[1]), c1 = std::cos(q[1]);
  const double s12 = std::sin(q[1] + q[2]), c12 = std::cos(q[1] + q[2]);

  Mat3 j;
  j.col(0) = Vec3::UnitX().cross(r * v);
  j.col(1) = r * Vec3{-m.l_thigh * c1 - m.l_calf * c12, 0.0, m.l_thigh * s1 + m.l_calf * s12};
  j.col(2) = r * Vec3{-m.l_calf * c12, 0.0, m.l_calf * s12};
  return j;
}

// ---------------------------------------------------------------------------
// Inverse kinematics

inline double max_leg_reach(const RobotModel& m) { return m.l_thigh + m.l_calf; }

/// Analytic IK on the knee-backward branch with the foot below the abduction
/// pivot in the leg plane. Throws Unreachable outside the workspace.
inline Vec3 leg_inverse_kinematics(const RobotModel& m, Leg leg, const Vec3& p_body) {
  const Vec3 p = p_body - m.hip_offsets[leg_index(leg)];
  const double side = side_sign(leg);
  const double r_yz2 = p.y() * p.y() + p.z() * p.z();
  const double l1 = m.l_thigh, l2 = m.l_calf;

  auto unreachable = [&](const char* why) {
    std::ostringstream os;
    os << why << " target=(" << p_body.x() << ", " << p_body.y() << ", " << p_body.z()
       << ") max_radius=" << max_leg_reach(m);
    return Unreachable(os.str());
  };

  if (r_yz2 < m.l_abd * m.l_abd) throw unreachable("inside abduction offset");
  const double z_plane = -std::sqrt(r_yz2 - m.l_abd * m.l_abd);
  const double q0 = std::atan2(p.z(), p.y()) - std::atan2(z_plane, side * m.l_abd);

  const double d2 = p.x() * p.x() + z_plane * z_plane;
  const double outer = l1 + l2, inner = std::abs(l1 - l2);
  if (d2 > outer * outer * (1.0 + 1e-12)) throw unreachable("beyond leg reach");
  if (d2 < inner * inner * (1.0 - 1e-12)) throw unreachable("inside leg annulus");

  const double cos_knee = std::clamp((d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double q2 = -std::acos(cos_knee);
  const double q1 =
      std::atan2(-p.x(), -z_plane) - std::atan2(l2 * std::sin(q2), l1 + l2 * std::cos(q2));

  // Keep the abduction angle in (-pi, pi].
  return {std::remainder(q0, 2.0 * M_PI), q1, q2};
}

/// Pulls a target back inside the reachable annulus (margin eps), preserving
/// direction in the leg plane. Returns true when the target was moved.
inline bool clamp_to_workspace(const RobotModel& m, Leg leg, Vec3& p_body, double eps = 1e-3) {
  const Vec3 hip = m.hip_offsets[leg_index(leg)];
  Vec3 p = p_body - hip;
  bool moved = false;

  double r_yz = std::hypot(p.y(), p.z());
  const double min_yz = m.l_abd + eps;
  if (r_yz < min_yz) {
    // Push the foot straight down in the (y,z) plane.
    const double side = side_sign(leg);
    p.y() = side * m.l_abd;
    p.z() = -std::sqrt(min_yz * min_yz - m.l_abd * m.l_abd);
    r_yz = min_yz;
    moved = true;
  }
  const double z_plane = -std::sqrt(std::max(r_yz * r_yz - m.l_abd * m.l_abd, 0.0));
  const double d = std::hypot(p.x(), z_plane);
  const double outer = m.l_thigh + m.l_calf - eps;
  const double inner = std::abs(m.l_thigh - m.l_calf) + eps;
  double scale = 1.0;
  if (d > outer) scale = outer / d;
  if (d < inner && d > 0.0) scale = inner / d;
  if (scale != 1.0) {
    // Scale the leg-plane vector (x, z_plane) and rebuild y,z on the same
    // abduction angle.
    const double x_new = p.x() * scale;
    const double zp_new = z_plane * scale;
    const double ang = std::atan2(p.z(), p.y()) - std::atan2(z_plane, side_sign(leg) * m.l_abd);
    const Vec3 rebuilt = detail::rot_x(ang) * Vec3{x_new, side_sign(leg) * m.l_abd, zp_new};
    p = rebuilt;
    moved = true;
  }
  p_body = hip + p;
  return moved;
}

// ---------------------------------------------------------------------------

inline void RobotModel::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("robot: " + what); };
  if (!(mass > 0)) fail("mass must be > 0");
  if (!(l_thigh > 0) || !(l_calf > 0)) fail("link lengths must be > 0");
  if (!(l_abd >= 0)) fail("l_abd must be >= 0");
  if (!(kp > 0)) fail("kp must be > 0");
  if (!(kd >= 0)) fail("kd must be >= 0");
  if (!(tau_max > 0)) fail("tau_max must be > 0");
  if (!(rotor_inertia > 0)) fail("rotor_inertia must be > 0");
  if (!(base_inertia.array() > 0).all()) fail("base inertia must be positive");
  if (!(nominal_base_height > 0)) fail("nominal_base_height must be > 0");
  for (Leg leg : kAllLegs) {
    const Vec3& h = hip_offsets[leg_index(leg)];
    const bool ok_x = is_front(leg) ? h.x() > 0 : h.x() < 0;
    const bool ok_y = is_left(leg) ? h.y() > 0 : h.y() < 0;
    if (!ok_x || !ok_y) fail("hip offset sign pattern violated for " + std::string(leg_name(leg)));
  }
  for (int i = 0; i < kNumJoints; ++i) {
    if (!(joint_lower[i] < nominal_joint_pos[i] && nominal_joint_pos[i] < joint_upper[i]))
      fail("nominal joint " + std::to_string(i) + " not strictly inside limits");
  }
}

/// Recomputes the nominal stance after geometry edits (used by config loading).
inline void refresh_nominal_pose(RobotModel& m) {
  for (Leg leg : kAllLegs) {
    const Vec3 foot =
        m.hip_offsets[leg_index(leg)] + Vec3{0.0, side_sign(leg) * m.l_abd, -m.nominal_base_height};
    set_leg_block(m.nominal_joint_pos, leg, leg_inverse_kinematics(m, leg, foot));
  }
}

/// Go1-like defaults. The nominal pose places each foot straight below its
/// abduction pivot at the nominal base height.
inline RobotModel default_robot_model() {
  RobotModel m;
  const Vec3 lower{-0.80, -0.20, -2.60};
  const Vec3 upper{0.80, 1.80, -0.60};
  for (Leg leg : kAllLegs) {
    set_leg_block(m.joint_lower, leg, lower);
    set_leg_block(m.joint_upper, leg, upper);
  }
  refresh_nominal_pose(m);
  return m;
}

}  // namespace quadmtl
