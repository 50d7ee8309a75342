#include <gtest/gtest.h>

#include "quadmtl/dataset.hpp"
#include "quadmtl/gait_expert.hpp"
#include "quadmtl/rng.hpp"

using namespace quadmtl;

namespace {

// Dense minimum-norm least squares on the unweighted grasp matrix.
Eigen::VectorXd lstsq_oracle(const Wrench& w, const std::vector<Vec3>& feet) {
  const int n = static_cast<int>(feet.size());
  Eigen::MatrixXd g(6, 3 * n);
  for (int i = 0; i < n; ++i) {
    g.block(0, 3 * i, 3, 3).setIdentity();
    const Vec3& r = feet[i];
    Mat3 s;
    s << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
    g.block(3, 3 * i, 3, 3) = s;
  }
  Eigen::VectorXd rhs(6);
  rhs << w.force, w.torque;
  return g.completeOrthogonalDecomposition().solve(rhs);
}

Eigen::VectorXd wrench_residual(const Wrench& w, const std::vector<Vec3>& feet,
                                const std::vector<Vec3>& forces) {
  Vec3 f = Vec3::Zero(), t = Vec3::Zero();
  for (std::size_t i = 0; i < feet.size(); ++i) {
    f += forces[i];
    t += feet[i].cross(forces[i]);
  }
  Eigen::VectorXd r(6);
  r << f - w.force, t - w.torque;
  return r;
}

}  // namespace

TEST(GaitPhase, TrotQuarterPhase) {
  const GaitSpec g = default_gait(GaitKind::kTrot);
  const GaitPhase p = gait_phase(g, 0.25 * g.period);
  EXPECT_TRUE(p.in_stance[leg_index(Leg::FL)]);
  EXPECT_TRUE(p.in_stance[leg_index(Leg::RR)]);
  EXPECT_FALSE(p.in_stance[leg_index(Leg::FR)]);
  EXPECT_FALSE(p.in_stance[leg_index(Leg::RL)]);
}

TEST(GaitPhase, JumpLegsShareFlag) {
  const GaitSpec g = default_gait(GaitKind::kJump);
  for (double t = 0.0; t < 1.0; t += 0.0137) {
    const GaitPhase p = gait_phase(g, t);
    for (int i = 1; i < 4; ++i) EXPECT_EQ(p.in_stance[i], p.in_stance[0]);
  }
}

TEST(GaitPhase, WalkAtPointThree) {
  const GaitSpec g = default_gait(GaitKind::kWalk);
  const GaitPhase p = gait_phase(g, 0.30 * g.period);
  EXPECT_EQ(p.in_stance, (std::array<bool, 4>{true, false, true, true}));
}

TEST(GaitPhase, PeriodicInPeriod) {
  for (GaitKind k : kAllGaitKinds) {
    const GaitSpec g = default_gait(k);
    for (double t = 0.0; t < 2.0; t += 0.0173) {
      EXPECT_EQ(gait_phase(g, t).in_stance, gait_phase(g, t + 4 * g.period).in_stance);
    }
  }
}

TEST(GaitSpec, DefaultOffsetsAndDuty) {
  EXPECT_EQ(default_gait(GaitKind::kTrot).phase_offset, (std::array<double, 4>{0, 0.5, 0.5, 0}));
  EXPECT_EQ(default_gait(GaitKind::kBound).phase_offset, (std::array<double, 4>{0, 0, 0.5, 0.5}));
  EXPECT_EQ(default_gait(GaitKind::kJump).phase_offset, (std::array<double, 4>{0, 0, 0, 0}));
  EXPECT_EQ(default_gait(GaitKind::kWalk).phase_offset, (std::array<double, 4>{0, 0.5, 0.75, 0.25}));
  EXPECT_DOUBLE_EQ(default_gait(GaitKind::kWalk).duty, 0.75);
  EXPECT_DOUBLE_EQ(default_gait(GaitKind::kTrot).duty, 0.5);
}

TEST(SwingTrajectory, EndpointsAndApex) {
  const GaitSpec g = default_gait(GaitKind::kTrot);
  const Vec3 a{0.1, 0.2, 0.0}, b{0.3, -0.1, 0.0};
  EXPECT_EQ(swing_trajectory(g, a, b, 0.0), a);
  EXPECT_EQ(swing_trajectory(g, a, b, 1.0), b);
  const Vec3 mid = swing_trajectory(g, a, b, 0.5);
  EXPECT_NEAR(mid.x(), 0.2, 1e-15);
  EXPECT_NEAR(mid.y(), 0.05, 1e-15);
  EXPECT_NEAR(mid.z(), g.swing_height, 1e-15);
}

TEST(Raibert, ZeroVelocityIsHipProjection) {
  const GaitSpec g = default_gait(GaitKind::kTrot);
  const Vec3 hip{0.2, 0.1, 0.3};
  EXPECT_EQ(raibert_target(VelocityCommand{}, g, hip, Vec3::Zero()), (Vec3{0.2, 0.1, 0.0}));
}

TEST(Raibert, WorkedExamples) {
  const GaitSpec g = default_gait(GaitKind::kTrot);
  const Vec3 hip{0.0, 0.0, 0.3};
  const VelocityCommand cmd{0.4, 0.0, 0.0};
  EXPECT_LT((raibert_target(cmd, g, hip, Vec3{0.4, 0, 0}) - Vec3{0.05, 0, 0}).norm(), 1e-15);
  EXPECT_LT((raibert_target(cmd, g, hip, Vec3{0.5, 0, 0}) - Vec3{0.053, 0, 0}).norm(), 1e-15);
}

TEST(Allocation, SingleFootExact) {
  const Vec3 r{0.2, 0.1, -0.3};
  const Vec3 f{5.0, -3.0, 100.0};
  const ForceAllocation a = allocate_stance_forces({f, r.cross(f)}, {r}, 10.0);
  EXPECT_LT((a.raw_forces[0] - f).norm(), 1e-9);
}

TEST(Allocation, SymmetricStanceSharesWeight) {
  const double mg = 12.0 * 9.81;
  const std::vector<Vec3> feet{{0.2, 0.13, -0.3}, {0.2, -0.13, -0.3}, {-0.2, 0.13, -0.3}, {-0.2, -0.13, -0.3}};
  const ForceAllocation a = allocate_stance_forces({Vec3{0, 0, mg}, Vec3::Zero()}, feet, 0.6);
  for (const Vec3& f : a.forces) EXPECT_LT((f - Vec3{0, 0, mg / 4}).norm(), 1e-10);
}

TEST(Allocation, TwoFeetPitchTorque) {
  const std::vector<Vec3> feet{{0.2, 0.0, -0.3}, {-0.2, 0.0, -0.3}};
  const Wrench w{Vec3{0, 0, 117.72}, Vec3{0, 2.0, 0}};
  const ForceAllocation a = allocate_stance_forces(w, feet, 0.6);
  EXPECT_LT(wrench_residual(w, feet, a.raw_forces).norm(), 1e-8);
  const Eigen::VectorXd oracle = lstsq_oracle(w, feet);
  for (int i = 0; i < 2; ++i) EXPECT_LT((a.raw_forces[i] - oracle.segment<3>(3 * i)).norm(), 1e-8);
}

TEST(Allocation, MatchesDenseLeastSquares) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(2));
    std::vector<Vec3> feet;
    for (int i = 0; i < n; ++i)
      feet.push_back({(i % 2 ? -1 : 1) * rng.uniform(0.15, 0.3), (i < 2 ? 1 : -1) * rng.uniform(0.1, 0.2),
                      rng.uniform(-0.35, -0.25)});
    const Wrench w{Vec3{rng.uniform(-20, 20), rng.uniform(-20, 20), rng.uniform(50, 200)},
                   Vec3{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)}};
    const ForceAllocation a = allocate_stance_forces(w, feet, 0.6);
    EXPECT_LT(a.residual, 1e-8);
    EXPECT_LT(wrench_residual(w, feet, a.raw_forces).norm(), 1e-8);
    const Eigen::VectorXd oracle = lstsq_oracle(w, feet);
    for (int i = 0; i < n; ++i)
      EXPECT_LT((a.raw_forces[i] - oracle.segment<3>(3 * i)).norm(), 1e-6);
  }
}

TEST(Allocation, ProjectsOntoFrictionCone) {
  const std::vector<Vec3> feet{{0.2, 0.13, -0.3}, {-0.2, -0.13, -0.3}, {0.2, -0.13, -0.3}};
  const Wrench w{Vec3{80, 0, 20}, Vec3::Zero()};
  const ForceAllocation a = allocate_stance_forces(w, feet, 0.5);
  for (const Vec3& f : a.forces) {
    EXPECT_GE(f.z(), 0.0);
    EXPECT_LE(f.head<2>().norm(), 0.5 * f.z() + 1e-12);
  }
}

TEST(Allocation, CollinearStanceIsRankDeficient) {
  const std::vector<Vec3> feet{{0.2, 0.0, -0.3}, {0.0, 0.0, -0.3}, {-0.2, 0.0, -0.3}};
  EXPECT_THROW(allocate_stance_forces({Vec3{0, 0, 100}, Vec3::Zero()}, feet, 0.6), RankDeficient);
  EXPECT_THROW(allocate_stance_forces({}, {}, 0.6), RankDeficient);
}

TEST(Expert, TorquesWithinLimitsAndDeterministic) {
  const RobotModel m = default_robot_model();
  const SimState s = nominal_stance_state(m);
  for (GaitKind k : kAllGaitKinds) {
    const GaitSpec g = default_gait(k);
    for (double t = 0.0; t < 1.0; t += 0.01) {
      const ExpertAction a = expert_torques(s, m, g, {0.3, 0.1, 0.0}, t);
      EXPECT_LE(a.tau.cwiseAbs().maxCoeff(), m.tau_max);
      const ExpertAction b = expert_torques(s, m, g, {0.3, 0.1, 0.0}, t);
      EXPECT_EQ(a.tau_raw, b.tau_raw);
    }
  }
}

TEST(Expert, StandingHoldsHeight) {
  const SimContext ctx;
  const StandingCheck c = expert_standing_check(ctx, 5.0, 0.02);
  EXPECT_TRUE(c.passed) << c.max_height_error;
}

TEST(Expert, TrotMidStanceContactsAreTheDiagonal) {
  const SimContext ctx;
  const GaitSpec g = default_gait(GaitKind::kTrot);
  SimState s = nominal_stance_state(ctx.model);
  for (int k = 0; k < 3000; ++k) {
    s = step(s, ctx.model, ctx.contact, expert_target(s, ctx, g, {0.15, 0, 0}), 1e-3, ctx.settings);
    const double phase = frac(s.time / g.period);
    if (s.time > 1.0 && std::abs(phase - 0.25) < 1e-6) {
      EXPECT_EQ(contact_flags(s, ctx.contact), (std::array<bool, 4>{true, false, false, true}));
    } else if (s.time > 1.0 && std::abs(phase - 0.75) < 1e-6) {
      EXPECT_EQ(contact_flags(s, ctx.contact), (std::array<bool, 4>{false, true, true, false}));
    }
  }
}
