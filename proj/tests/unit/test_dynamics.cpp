#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <random>

#include "fixtures.hpp"
#include "pushrec/control.hpp"
#include "pushrec/dynamics.hpp"

using namespace pushrec;
using pushrec::testing::pendulum_model;
using pushrec::testing::random_configuration;
using pushrec::testing::random_velocity;

namespace {

// Kinetic energy from finite-differenced link positions and angles; shares
// nothing with the Jacobian recursion beyond forward kinematics.
double kinetic_energy_fd(const Simulator& sim, const VecN& q, const VecN& qd) {
  const double eps = 1e-6;
  const auto plus = sim.forward_kinematics(q + eps * qd);
  const auto minus = sim.forward_kinematics(q - eps * qd);
  double e = 0.0;
  for (std::size_t l = 0; l < sim.model().links.size(); ++l) {
    const Vec2 v = (plus.links[l].com - minus.links[l].com) / (2 * eps);
    const double w = (plus.links[l].angle - minus.links[l].angle) / (2 * eps);
    e += 0.5 * sim.model().links[l].mass * v.squaredNorm() + 0.5 * sim.model().links[l].inertia * w * w;
  }
  return e;
}

Eigen::MatrixXd mass_matrix_fd(const Simulator& sim, const VecN& q) {
  const int n = sim.dof();
  Eigen::MatrixXd m(n, n);
  auto unit = [n](int i) {
    VecN e = VecN::Zero(n);
    e[i] = 1.0;
    return e;
  };
  for (int i = 0; i < n; ++i) m(i, i) = 2.0 * kinetic_energy_fd(sim, q, unit(i));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const VecN eij = unit(i) + unit(j);
      m(i, j) = m(j, i) = kinetic_energy_fd(sim, q, eij) - 0.5 * m(i, i) - 0.5 * m(j, j);
    }
  return m;
}

// Lagrangian bias: h = Mdot qd - 1/2 d(qd' M qd)/dq + dV/dq by central differences.
VecN bias_forces_fd(const Simulator& sim, const VecN& q, const VecN& qd) {
  const int n = sim.dof();
  const double eps = 1e-6;
  const MatN mdot = (sim.mass_matrix(q + eps * qd) - sim.mass_matrix(q - eps * qd)) / (2 * eps);
  VecN h = mdot * qd;
  for (int k = 0; k < n; ++k) {
    VecN dq = VecN::Zero(n);
    dq[k] = eps;
    const double dke = (qd.dot(sim.mass_matrix(q + dq) * qd) - qd.dot(sim.mass_matrix(q - dq) * qd)) / (2 * eps);
    const double dv = (sim.potential_energy(q + dq) - sim.potential_energy(q - dq)) / (2 * eps);
    h[k] += -0.5 * dke + dv;
  }
  return h;
}

VecN hold_torques(const Simulator& sim, const SimState& s) {
  const ModelSpec& m = sim.model();
  Eigen::VectorXd target(m.joint_count());
  for (int j = 0; j < m.joint_count(); ++j) target[j] = m.joints[j].nominal_angle;
  return pd_torques(m, target, sim.joint_angles(s), sim.joint_velocities(s));
}

VecN nominal_targets(const Simulator& sim) {
  VecN target(sim.model().joint_count());
  for (int j = 0; j < sim.model().joint_count(); ++j) target[j] = sim.model().joints[j].nominal_angle;
  return target;
}

}  // namespace

TEST(Kinematics, NominalSolesOnGround) {
  for (Plane p : {Plane::Sagittal, Plane::Frontal}) {
    const Simulator sim(builtin_model(p));
    const auto kin = sim.forward_kinematics(sim.nominal_state().q);
    for (const Vec2& c : kin.contact_position) EXPECT_NEAR(c.y(), 0.0, 1e-9);
  }
}

TEST(Kinematics, TranslationEquivariance) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  std::mt19937_64 rng(3);
  const VecN q = random_configuration(sim.model(), rng);
  VecN shifted = q;
  shifted[0] += 0.5;
  const auto a = sim.forward_kinematics(q);
  const auto b = sim.forward_kinematics(shifted);
  for (std::size_t l = 0; l < a.links.size(); ++l) {
    EXPECT_NEAR(b.links[l].origin.x() - a.links[l].origin.x(), 0.5, 1e-12);
    EXPECT_NEAR(b.links[l].origin.y(), a.links[l].origin.y(), 1e-12);
  }
  for (std::size_t c = 0; c < a.contact_position.size(); ++c)
    EXPECT_NEAR(b.contact_position[c].x() - a.contact_position[c].x(), 0.5, 1e-12);
}

TEST(Kinematics, RigidRotationOfTorso) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  VecN q = sim.nominal_state().q;
  q[2] = std::numbers::pi / 2;
  const auto kin = sim.forward_kinematics(q);
  const int torso = sim.model().torso_link;
  EXPECT_NEAR(kin.links[torso].angle, std::numbers::pi / 2, 1e-15);
  // Torso joint sits 0.1 m "up" the pelvis; rotated a quarter turn it points to -x.
  EXPECT_NEAR(kin.links[torso].origin.x() - q[0], -0.1, 1e-12);
  EXPECT_NEAR(kin.links[torso].origin.y() - q[1], 0.0, 1e-12);
}

TEST(Kinematics, DimensionMismatchThrows) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  EXPECT_THROW(sim.forward_kinematics(VecN::Zero(4)), DimensionError);
}

TEST(MassMatrix, PinnedRodIsOneThirdMLSquared) {
  const Simulator sim(pendulum_model());
  VecN q(1);
  q << 0.7;
  const MatN m = sim.mass_matrix(q);
  ASSERT_EQ(m.rows(), 1);
  EXPECT_NEAR(m(0, 0), 1.0 / 3.0, 1e-14);
}

TEST(MassMatrix, SymmetricPositiveDefinite) {
  std::mt19937_64 rng(11);
  for (Plane p : {Plane::Sagittal, Plane::Frontal}) {
    const Simulator sim(builtin_model(p));
    for (int trial = 0; trial < 1000; ++trial) {
      const VecN q = random_configuration(sim.model(), rng);
      const MatN m = sim.mass_matrix(q);
      EXPECT_LE((m - m.transpose()).cwiseAbs().maxCoeff(), 1e-10);
      Eigen::LLT<Eigen::MatrixXd> llt{Eigen::MatrixXd(m)};
      ASSERT_EQ(llt.info(), Eigen::Success);
      EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().minCoeff(), 0.0);
    }
  }
}

TEST(MassMatrix, MatchesFiniteDifferenceKineticEnergy) {
  std::mt19937_64 rng(5);
  const Simulator sim(builtin_model(Plane::Sagittal));
  for (int trial = 0; trial < 20; ++trial) {
    const VecN q = random_configuration(sim.model(), rng);
    const Eigen::MatrixXd ref = mass_matrix_fd(sim, q);
    const MatN m = sim.mass_matrix(q);
    EXPECT_LE((Eigen::MatrixXd(m) - ref).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + ref.cwiseAbs().maxCoeff()));
  }
}

TEST(BiasForces, HangingPendulumAtRest) {
  const Simulator sim(pendulum_model());
  VecN q = VecN::Zero(1), qd = VecN::Zero(1);
  EXPECT_NEAR(sim.bias_forces(q, qd)[0], 0.0, 1e-15);
}

TEST(BiasForces, HorizontalPendulumGravityTorque) {
  const Simulator sim(pendulum_model());
  VecN q(1), qd = VecN::Zero(1);
  q << std::numbers::pi / 2;
  EXPECT_NEAR(sim.bias_forces(q, qd)[0], 9.81 * 0.5, 1e-12);
}

TEST(BiasForces, VelocityTermsAreQuadratic) {
  std::mt19937_64 rng(13);
  const Simulator sim(builtin_model(Plane::Sagittal));
  for (int trial = 0; trial < 50; ++trial) {
    const VecN q = random_configuration(sim.model(), rng);
    const VecN qd = random_velocity(sim.model(), rng);
    const VecN g = sim.bias_forces(q, VecN::Zero(sim.dof()));
    const VecN c1 = sim.bias_forces(q, qd) - g;
    const VecN c2 = sim.bias_forces(q, 2.0 * qd) - g;
    EXPECT_LE((c2 - 4.0 * c1).cwiseAbs().maxCoeff(), 1e-9 * (1.0 + c1.cwiseAbs().maxCoeff()));
  }
}

TEST(BiasForces, MatchesLagrangianFiniteDifferences) {
  std::mt19937_64 rng(17);
  const Simulator sim(builtin_model(Plane::Sagittal));
  for (int trial = 0; trial < 20; ++trial) {
    const VecN q = random_configuration(sim.model(), rng);
    const VecN qd = random_velocity(sim.model(), rng);
    const VecN ref = bias_forces_fd(sim, q, qd);
    const VecN h = sim.bias_forces(q, qd);
    EXPECT_LE((h - ref).cwiseAbs().maxCoeff(), 1e-5 * (1.0 + ref.cwiseAbs().maxCoeff()));
  }
}

TEST(ContactForces, NoPenetrationNoForce) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  const SimState s = sim.nominal_state(0.01);
  for (const Vec2& f : sim.contact_forces(s.q, s.qd)) {
    EXPECT_EQ(f.x(), 0.0);
    EXPECT_EQ(f.y(), 0.0);
  }
}

TEST(ContactForces, SpringLaw) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  const SimState s = sim.nominal_state(-0.001);
  for (const Vec2& f : sim.contact_forces(s.q, s.qd)) {
    EXPECT_NEAR(f.y(), 130.0, 1e-6);
    EXPECT_EQ(f.x(), 0.0);
  }
}

TEST(ContactForces, SaturatedFrictionCone) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  SimState s = sim.nominal_state(-0.001);
  s.qd[0] = 10.0;
  for (const Vec2& f : sim.contact_forces(s.q, s.qd)) {
    EXPECT_NEAR(f.y(), 130.0, 1e-6);
    EXPECT_DOUBLE_EQ(std::abs(f.x()), sim.contact_params().friction * f.y());
    EXPECT_LT(f.x(), 0.0);
  }
}

TEST(Step, NewtonFirstLawWithoutGravity) {
  ModelSpec m = builtin_model(Plane::Sagittal);
  m.gravity = 0.0;
  const Simulator sim(m);
  SimState s = sim.nominal_state(1.0);
  s.qd[0] = 0.7;
  s.qd[1] = -0.2;
  const VecN qd0 = s.qd;
  const VecN zero = VecN::Zero(m.joint_count());
  for (int k = 0; k < 100; ++k) s = sim.step(s, zero, {}, 0.002);
  EXPECT_LE((s.qd - qd0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Step, BallisticHorizontalComVelocityConstant) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  SimState s = sim.nominal_state(2.0);
  s.qd[0] = 1.0;
  s.qd[1] = 3.0;
  const double vx0 = sim.com_state(s.q, s.qd).velocity.x();
  const VecN zero = VecN::Zero(sim.model().joint_count());
  for (int k = 0; k < 500; ++k) {
    const double vz_before = sim.com_state(s.q, s.qd).velocity.y();
    s = sim.step(s, zero, {}, 0.002);
    const double vz_after = sim.com_state(s.q, s.qd).velocity.y();
    EXPECT_NEAR((vz_after - vz_before) / 0.002, -9.81, 1e-6);
  }
  EXPECT_NEAR(sim.com_state(s.q, s.qd).velocity.x(), vx0, 1e-9);
}

TEST(Step, TumblingFlightFollowsParabolaPerStep) {
  // Internal motion: joint and base rotation rates, no contact, no push.
  const Simulator sim(builtin_model(Plane::Sagittal));
  std::mt19937_64 rng(21);
  SimState s = sim.nominal_state(5.0);
  s.qd = random_velocity(sim.model(), rng, 0.1);
  const VecN zero = VecN::Zero(sim.model().joint_count());
  for (int k = 0; k < 200; ++k) {
    const ComState a = sim.com_state(s.q, s.qd);
    s = sim.step(s, zero, {}, 0.002);
    const ComState b = sim.com_state(s.q, s.qd);
    EXPECT_NEAR(b.velocity.x() - a.velocity.x(), 0.0, 1e-6);
    EXPECT_NEAR(b.velocity.y() - a.velocity.y(), -9.81 * 0.002, 1e-6);
  }
}

TEST(Step, FastTumblingKeepsExactMomentumBalance) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  std::mt19937_64 rng(21);
  SimState s = sim.nominal_state(5.0);
  s.qd = random_velocity(sim.model(), rng, 1.0);
  const VecN zero = VecN::Zero(sim.model().joint_count());
  const double p0 = sim.com_state(s.q, s.qd).velocity.x() * sim.model().total_mass();
  for (int k = 0; k < 250; ++k) {
    const ComState a = sim.com_state(s.q, s.qd);
    s = sim.step(s, zero, {}, 0.002);
    const ComState b = sim.com_state(s.q, s.qd);
    EXPECT_NEAR((b.velocity - a.velocity - Vec2(0.0, -9.81 * 0.002)).norm(), 0.0, 1e-12);
  }
  EXPECT_NEAR(sim.com_state(s.q, s.qd).velocity.x() * sim.model().total_mass(), p0, 1e-9);
}

TEST(Step, PendulumEnergyConserved) {
  const Simulator sim(pendulum_model());
  SimState s;
  s.q = VecN::Constant(1, std::numbers::pi / 2);
  s.qd = VecN::Zero(1);
  const double dt = 0.002;
  const VecN zero = VecN::Zero(1);
  const double e0 = sim.kinetic_energy(s.q, s.qd) + sim.potential_energy(s.q);
  // Velocities of symplectic Euler live on the half step; average adjacent
  // ones to evaluate kinetic energy at the position sample.
  VecN qd_prev = s.qd;
  double worst = 0.0;
  for (int k = 0; k < 500; ++k) {
    const SimState next = sim.step(s, zero, {}, dt);
    if (k > 0) {
      const VecN v = 0.5 * (qd_prev + next.qd);
      const double e = sim.kinetic_energy(s.q, v) + sim.potential_energy(s.q);
      worst = std::max(worst, std::abs(e - e0));
    }
    qd_prev = next.qd;
    s = next;
  }
  // Reference energy scale: drop of the CoM from horizontal to hanging.
  const double scale = 1.0 * 9.81 * 0.5;
  EXPECT_LT(worst / scale, 1e-3);
}

TEST(Step, StaticStanceCarriesBodyWeight) {
  for (Plane p : {Plane::Sagittal, Plane::Frontal}) {
    const Simulator sim(builtin_model(p));
    SimState s = sim.nominal_state(sim.static_penetration());
    for (int k = 0; k < 1000; ++k) s = sim.step_pd(s, nominal_targets(sim), {}, 0.002);
    double fz = 0.0;
    for (const auto& c : s.contacts) fz += c.force.y();
    const double weight = sim.model().total_mass() * sim.model().gravity;
    EXPECT_NEAR(fz / weight, 1.0, 0.01) << to_string(p);
  }
}

TEST(Step, StaticStanceFromTouchdownSettles) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  SimState s = sim.nominal_state(0.0);
  for (int k = 0; k < 1000; ++k) s = sim.step_pd(s, nominal_targets(sim), {}, 0.002);
  double fz = 0.0;
  for (const auto& c : s.contacts) {
    EXPECT_TRUE(c.active);
    EXPECT_GE(c.force.y(), 0.0);
    fz += c.force.y();
  }
  EXPECT_NEAR(fz / (137.0 * 9.81), 1.0, 0.01);
  EXPECT_LT(s.qd.cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Step, ContactForcesNonNegativeUnderImpact) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  SimState s = sim.nominal_state(0.3);
  s.qd[0] = 0.5;
  for (int k = 0; k < 600; ++k) {
    s = sim.step_pd(s, nominal_targets(sim), {}, 0.002);
    for (const auto& c : s.contacts) {
      EXPECT_GE(c.force.y(), 0.0);
      EXPECT_LE(std::abs(c.force.x()), sim.contact_params().friction * c.force.y() * (1 + 1e-9) + 1e-9);
    }
  }
}

TEST(Step, DeterministicBitIdentical) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  std::mt19937_64 rng(2);
  SimState s = sim.nominal_state(0.0);
  s.qd = random_velocity(sim.model(), rng, 0.3);
  const VecN tau = hold_torques(sim, s);
  const SimState a = sim.step(s, tau, {}, 0.002);
  const SimState b = sim.step(s, tau, {}, 0.002);
  EXPECT_EQ(0, std::memcmp(a.q.data(), b.q.data(), sizeof(double) * a.q.size()));
  EXPECT_EQ(0, std::memcmp(a.qd.data(), b.qd.data(), sizeof(double) * a.qd.size()));
}

TEST(Step, JointLimitClampsAndZeroesVelocity) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  SimState s = sim.nominal_state(1.0);
  s.qd[3] = 50.0;  // torso pitch, upper limit 0.13 rad
  s = sim.step(s, VecN::Zero(7), {}, 0.002);
  s = sim.step(s, VecN::Zero(7), {}, 0.002);
  EXPECT_DOUBLE_EQ(s.q[3], sim.model().joints[0].angle_limits[1]);
  EXPECT_EQ(s.qd[3], 0.0);
}

// 0 off, 1 sticking, +-2 sliding with that force direction.
static std::vector<int> contact_modes(const Simulator& sim, const SimState& s) {
  std::vector<int> modes;
  for (const ContactState& c : s.contacts) {
    if (!c.active) {
      modes.push_back(0);
      continue;
    }
    const double cap = sim.contact_params().friction * c.force.y();
    modes.push_back(std::abs(c.force.x()) < cap * (1.0 - 1e-9) ? 1 : c.force.x() > 0.0 ? 2 : -2);
  }
  return modes;
}

TEST(StepPd, MatchesExplicitStepWithAppliedTorques) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  int mode_mismatch = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    SimState s = sim.nominal_state(trial % 2 == 0 ? 0.5 : sim.static_penetration());
    s.qd = random_velocity(sim.model(), rng, 0.5);
    VecN target = nominal_targets(sim);
    for (int j = 0; j < target.size(); ++j) target[j] += u(rng);
    VecN applied;
    const SimState a = sim.step_pd(s, target, {}, 0.002, &applied);
    const int nb = sim.model().base_dof();
    for (int j = 0; j < target.size(); ++j) {
      const JointSpec& js = sim.model().joints[j];
      if (a.q[nb + j] == js.angle_limits[0] || a.q[nb + j] == js.angle_limits[1]) continue;
      const double u_end = pd_torque(target[j], s.q[nb + j], a.qd[nb + j], js.pd_gains, js.torque_limit);
      EXPECT_NEAR(applied[j], u_end, 1e-6 * js.torque_limit);
      EXPECT_LE(std::abs(applied[j]), js.torque_limit);
    }
    // Penalty contact with saturated friction can admit more than one
    // consistent contact mode; identical torques then give identical motion
    // only within the same mode.
    const SimState b = sim.step(s, applied, {}, 0.002);
    if (contact_modes(sim, a) == contact_modes(sim, b))
      EXPECT_LE((a.qd - b.qd).cwiseAbs().maxCoeff(), 1e-9);
    else
      ++mode_mismatch;
  }
  EXPECT_LE(mode_mismatch, 40);
}

TEST(StepPd, SaturatesAtTorqueLimit) {
  // Standing: the ankle drives the whole body, hip drives the torso.
  const Simulator sim(builtin_model(Plane::Sagittal));
  const SimState s = sim.nominal_state(sim.static_penetration());
  VecN target = nominal_targets(sim);
  target[6] = sim.model().joints[6].angle_limits[1];  // 1500 * 0.9 rad >> 205 N m
  target[0] = sim.model().joints[0].angle_limits[0];
  VecN applied;
  sim.step_pd(s, target, {}, 0.002, &applied);
  EXPECT_DOUBLE_EQ(applied[6], sim.model().joints[6].torque_limit);
  EXPECT_DOUBLE_EQ(applied[0], -sim.model().joints[0].torque_limit);
}

TEST(StepPd, LightLinkStaysUnsaturated) {
  // Airborne foot: implicit damping absorbs most of a large spring torque.
  const Simulator sim(builtin_model(Plane::Sagittal));
  const SimState s = sim.nominal_state(1.0);
  VecN target = nominal_targets(sim);
  target[6] = sim.model().joints[6].angle_limits[1];
  VecN applied;
  const SimState a = sim.step_pd(s, target, {}, 0.002, &applied);
  const JointSpec& js = sim.model().joints[6];
  const double u_end = pd_torque(target[6], s.q[9], a.qd[9], js.pd_gains, js.torque_limit);
  EXPECT_LT(std::abs(applied[6]), js.torque_limit);
  EXPECT_NEAR(applied[6], u_end, 1e-6);
}

TEST(StepPd, StableWhereExplicitDampingDiverges) {
  // kd dt / I = 3 > 2: the explicit update amplifies the rate every step.
  ModelSpec m = pendulum_model(1.0, 1.0, 0.0);
  m.joints[0].pd_gains = {100.0, 500.0};
  const Simulator sim(m);
  SimState a, b;
  a.q = b.q = VecN::Constant(1, 0.2);
  a.qd = b.qd = VecN::Zero(1);
  const VecN target = VecN::Zero(1);
  double peak_explicit = 0.0;
  for (int k = 0; k < 200; ++k) {
    a = sim.step_pd(a, target, {}, 0.002);
    if (k < 10) {
      VecN tau(1);
      tau << pd_torque(0.0, b.q[0], b.qd[0], m.joints[0].pd_gains, m.joints[0].torque_limit);
      b = sim.step(b, tau, {}, 0.002);
      EXPECT_GT(std::abs(b.qd[0]), peak_explicit);
      peak_explicit = std::abs(b.qd[0]);
    }
  }
  EXPECT_LT(std::abs(a.q[0]), 0.2);
  EXPECT_LT(std::abs(a.qd[0]), 1.0);
  EXPECT_GT(peak_explicit, 20.0);
}

TEST(StepPd, NominalStanceRejectsModestPush) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  SimState s = sim.nominal_state(sim.static_penetration());
  const ExternalForce push{0, sim.model().links[0].com_local(), {265.0, 0.0}, 0.5, 0.6};
  for (int k = 0; k < 2500; ++k) s = sim.step_pd(s, nominal_targets(sim), std::span(&push, 1), 0.002);
  EXPECT_GT(s.q[1], 1.0);
  EXPECT_LT(std::abs(s.q[2]), 0.05);
  EXPECT_LT(s.qd.cwiseAbs().maxCoeff(), 0.05);
}

TEST(Step, RejectsUnclampedTorque) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  const SimState s = sim.nominal_state(0.0);
  VecN tau = VecN::Zero(7);
  tau[6] = 400.0;
  EXPECT_THROW(sim.step(s, tau, {}, 0.002), std::invalid_argument);
}

TEST(Step, NonFiniteStateSignalsFailure) {
  const Simulator sim(builtin_model(Plane::Sagittal));
  SimState s = sim.nominal_state(0.5);
  s.qd[4] = std::numeric_limits<double>::quiet_NaN();
  try {
    sim.step(s, VecN::Zero(7), {}, 0.002);
    FAIL() << "expected IntegrationFailure";
  } catch (const IntegrationFailure& e) {
    EXPECT_EQ(e.last_valid().tick, s.tick);
  }
}

TEST(Step, ExternalForceDeliversImpulse) {
  // A 0.1 s push of 530 N changes momentum by 53 N s.
  const ModelSpec body = pushrec::testing::single_body_model();
  const Simulator rigid(body);
  VecN q(3), qd(3);
  q << 0.0, 1.0, 0.4;
  qd.setZero();
  SimState s;
  s.q = q;
  s.qd = qd;
  const ExternalForce at_com{0, body.links[0].com_local(), {530.0, 0.0}, 0.0, 0.1};
  for (int k = 0; k < 100; ++k) s = rigid.step(s, VecN::Zero(0), std::span(&at_com, 1), 0.002);
  EXPECT_NEAR(rigid.com_state(s.q, s.qd).velocity.x() * body.total_mass(), 53.0, 1e-9);

  // Articulated and airborne: the limbs swing, the total momentum still follows the push.
  ModelSpec m = builtin_model(Plane::Sagittal);
  m.gravity = 0.0;
  const Simulator sim(m);
  SimState r = sim.nominal_state(1.0);
  const ExternalForce push{0, m.links[0].com_local(), {530.0, 0.0}, 0.0, 0.1};
  for (int k = 0; k < 100; ++k) r = sim.step(r, VecN::Zero(7), std::span(&push, 1), 0.002);
  EXPECT_NEAR(sim.com_state(r.q, r.qd).velocity.x() * m.total_mass(), 53.0, 1e-9);
}

TEST(ComState, SingleBodyIsItsOwnCom) {
  const Simulator sim(pushrec::testing::single_body_model());
  VecN q(3), qd(3);
  q << 0.4, 1.2, 0.3;
  qd << 0.1, -0.2, 0.5;
  const ComState c = sim.com_state(q, qd);
  const auto kin = sim.forward_kinematics(q, qd);
  EXPECT_NEAR((c.position - kin.links[0].com).norm(), 0.0, 1e-15);
  EXPECT_NEAR((c.velocity - kin.links[0].com_velocity).norm(), 0.0, 1e-15);
}

TEST(ComState, SymmetricPoseComAboveBase) {
  const Simulator sim(builtin_model(Plane::Frontal));
  SimState s = sim.nominal_state();
  s.q[0] = 0.37;
  const ComState c = sim.com_state(s.q, s.qd);
  EXPECT_NEAR(c.position.x(), 0.37, 1e-12);
  const Simulator sag(builtin_model(Plane::Sagittal));
  SimState t = sag.nominal_state();
  EXPECT_NEAR(sag.com_state(t.q, t.qd).position.x(), t.q[0], 1e-12);
}
