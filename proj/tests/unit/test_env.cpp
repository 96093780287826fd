#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "pushrec/env.hpp"

using namespace pushrec;

namespace {

EnvConfig quiet_config(Plane plane = Plane::Sagittal) {
  EnvConfig c = default_env_config(plane);
  c.disturbance.enabled = false;
  return c;
}

// Offsets into the sagittal/frontal observation layout.
struct ObsLayout {
  int nj;
  int joint_angles() const { return 0; }
  int joint_rates() const { return nj; }
  int pelvis_velocity() const { return 2 * nj; }
  int pelvis_pitch() const { return 2 * nj + 2; }
  int pelvis_rate() const { return 2 * nj + 3; }
  int com_velocity() const { return 2 * nj + 4; }
  int com_relative() const { return 2 * nj + 6; }
  int foot_force(int side) const { return 2 * nj + 8 + 2 * side; }
  int torso_relative() const { return 2 * nj + 12; }
  int foot_relative(int side) const { return 2 * nj + 14 + 2 * side; }
};

RewardInputs target_inputs(const RewardWeights& w, const CpParams& cp) {
  RewardInputs in;
  in.com_position = {0.3, w.com_height_target};
  in.support_center = 0.3;
  in.com_velocity = {desired_com_velocity(0.3, 0.3, cp), 0.0};
  in.foot_normal_force = {w.grf_target, w.grf_target};
  in.foot_contact = {true, true};
  in.joint_torques = Eigen::VectorXd::Constant(7, 50.0);
  in.joint_velocities = Eigen::VectorXd::Zero(7);
  return in;
}

}  // namespace

TEST(EnvConfig, DefaultsValidate) {
  for (Plane p : {Plane::Sagittal, Plane::Frontal}) {
    const EnvConfig c = default_env_config(p);
    EXPECT_NO_THROW(validate(c));
    EXPECT_EQ(c.substeps(), 20);
    EXPECT_EQ(c.max_steps(), 250);
    EXPECT_NEAR(c.reward.positive_weight_sum(), 1.0, 1e-12);
  }
}

TEST(EnvConfig, GrfTargetIsHalfTheWeight) {
  const EnvConfig c = default_env_config(Plane::Sagittal);
  EXPECT_NEAR(c.reward.grf_target, 137.0 * 9.81 / 2.0, 1e-9);
  EXPECT_NEAR(c.reward.grf_target, 672.0, 0.1);
}

TEST(EnvConfig, RejectsInvalid) {
  EnvConfig c = quiet_config();
  c.policy_hz = 30.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = quiet_config();
  c.episode_seconds = 0.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = quiet_config();
  c.reward.com_xy.weight = 0.3;
  EXPECT_THROW(validate(c), ConfigError);
  c = quiet_config();
  c.reward.vel_z.alpha = 0.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = quiet_config();
  c.disturbance.push_duration = 0.0;
  EXPECT_THROW(validate(c), ConfigError);
  c = quiet_config();
  c.disturbance.magnitude_range = {-1.0, 5.0};
  EXPECT_THROW(validate(c), ConfigError);
  c = quiet_config();
  c.obs_noise_sigma = {0.1, 0.2};
  EXPECT_THROW(validate(c), ConfigError);
  EXPECT_THROW(Env{c}, ConfigError);
}

TEST(EnvConfig, JsonRoundTrip) {
  EnvConfig c = default_env_config(Plane::Frontal);
  c.obs_noise_sigma = {0.5};
  c.action_noise_sigma = 0.1;
  c.disturbance.magnitude_range = {10.0, 20.0};
  c.extra_pushes.push_back(make_push(c.model, 0, -40.0, 1.0, 0.12));
  c.init_base_x = 2.0;
  c.rng_seed = 99;
  const nlohmann::json j = to_json(c);
  const EnvConfig back = env_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.model.joint_count(), 4);
}

TEST(EnvConfig, MissingKeysKeepDefaults) {
  const EnvConfig c = env_config_from_json(nlohmann::json::parse(R"({"model": "frontal", "episode_seconds": 4})"));
  EXPECT_EQ(c.model.joint_count(), 4);
  EXPECT_EQ(c.max_steps(), 100);
  EXPECT_EQ(c.substeps(), 20);
  EXPECT_TRUE(c.disturbance.enabled);
}

TEST(EnvConfig, UnknownKeysRejected) {
  EXPECT_THROW(env_config_from_json(nlohmann::json::parse(R"({"episode_secs": 4})")), ConfigError);
  EXPECT_THROW(env_config_from_json(nlohmann::json::parse(R"({"disturbance": {"lenght": 1}})")), ConfigError);
  EXPECT_THROW(env_config_from_json(nlohmann::json::parse(R"({"reward": {"com_xy": {"wieght": 1}}})")), ConfigError);
}

TEST(EnvConfig, LoadReportsPath) {
  try {
    load_env_config("/nonexistent/env.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/env.json"), std::string::npos);
  }
}

TEST(Reward, ExactTargetsSumToOne) {
  const RewardWeights w;
  const CpParams cp{w.com_height_target, 9.81, 137.0};
  const RewardBreakdown r = compute_reward(w, cp, target_inputs(w, cp));
  EXPECT_NEAR(r.positive(), 1.0, 1e-9);
  EXPECT_EQ(r.contact, 0.0);
  EXPECT_EQ(r.power, 0.0);
  EXPECT_EQ(r.total(), r.positive());
}

TEST(Reward, FlightZeroesVelocityTermAndPenalizes) {
  const RewardWeights w;
  const CpParams cp{w.com_height_target, 9.81, 137.0};
  RewardInputs in = target_inputs(w, cp);
  in.foot_contact = {false, false};
  in.foot_normal_force = {0.0, 0.0};
  const RewardBreakdown r = compute_reward(w, cp, in);
  EXPECT_EQ(r.vel_xy, 0.0);
  EXPECT_EQ(r.contact, -2.0);
}

TEST(Reward, BodyContactPenalty) {
  const RewardWeights w;
  const CpParams cp{w.com_height_target, 9.81, 137.0};
  RewardInputs in = target_inputs(w, cp);
  in.body_contact = true;
  EXPECT_EQ(compute_reward(w, cp, in).contact, -10.0);
  in.foot_contact = {false, false};
  EXPECT_EQ(compute_reward(w, cp, in).contact, -10.0);
}

TEST(Reward, HalfErrorCalibration) {
  const RewardWeights w;
  const CpParams cp{w.com_height_target, 9.81, 137.0};
  RewardInputs in = target_inputs(w, cp);
  in.torso_angle = 0.1;
  in.com_position.y() += 0.05;
  in.foot_normal_force[1] += 200.0;
  const RewardBreakdown r = compute_reward(w, cp, in);
  EXPECT_NEAR(r.torso_pose, 0.05, 1e-12);
  EXPECT_NEAR(r.com_z, 0.05, 1e-12);
  EXPECT_NEAR(r.grf_right, 0.05, 1e-12);
}

TEST(Reward, VelocityTargetFollowsCapturePoint) {
  const RewardWeights w;
  const CpParams cp{w.com_height_target, 9.81, 137.0};
  RewardInputs in = target_inputs(w, cp);
  in.com_position.x() = 0.35;
  in.com_velocity.x() = desired_com_velocity(0.35, 0.3, cp);
  EXPECT_NE(in.com_velocity.x(), 0.0);
  EXPECT_NEAR(compute_reward(w, cp, in).vel_xy, w.vel_xy.weight, 1e-12);
}

TEST(Reward, PowerPenalty) {
  const RewardWeights w;
  const CpParams cp{w.com_height_target, 9.81, 137.0};
  RewardInputs in = target_inputs(w, cp);
  in.joint_torques << 10, -20, 30, 0, 0, 5, 0;
  in.joint_velocities << 1, 1, -1, 7, 0, 0, 0;
  EXPECT_NEAR(compute_reward(w, cp, in).power, -1e-4 * (10 + 20 + 30), 1e-15);
}

TEST(Reward, RandomInvariants) {
  const RewardWeights w;
  const CpParams cp{w.com_height_target, 9.81, 137.0};
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 2000; ++trial) {
    RewardInputs in;
    in.torso_angle = 0.2 * n(rng);
    in.pelvis_angle = 0.2 * n(rng);
    in.com_position = {0.1 * n(rng), 1.1 + 0.1 * n(rng)};
    in.com_velocity = {0.5 * n(rng), 0.2 * n(rng)};
    in.support_center = 0.1 * n(rng);
    in.foot_contact = {coin(rng), coin(rng)};
    in.foot_normal_force = {in.foot_contact[0] ? 672.0 + 300.0 * n(rng) : 0.0,
                            in.foot_contact[1] ? 672.0 + 300.0 * n(rng) : 0.0};
    in.body_contact = trial % 10 == 0;
    in.joint_torques = Eigen::VectorXd(7);
    in.joint_velocities = Eigen::VectorXd(7);
    for (int j = 0; j < 7; ++j) {
      in.joint_torques[j] = coin(rng) ? 0.0 : 100.0 * n(rng);
      in.joint_velocities[j] = coin(rng) ? 0.0 : n(rng);
    }
    const RewardBreakdown r = compute_reward(w, cp, in);
    const double sum = r.torso_pose + r.pelvis_pose + r.com_xy + r.com_z + r.vel_xy + r.vel_z + r.grf_left +
                       r.grf_right + r.contact + r.power;
    EXPECT_EQ(r.total(), sum);
    const std::pair<double, double> terms[] = {
        {r.torso_pose, w.torso_pose.weight}, {r.pelvis_pose, w.pelvis_pose.weight},
        {r.com_xy, w.com_xy.weight},         {r.com_z, w.com_z.weight},
        {r.vel_z, w.vel_z.weight},           {r.grf_left, w.grf_left.weight},
        {r.grf_right, w.grf_right.weight}};
    for (const auto& [value, weight] : terms) {
      EXPECT_GT(value, 0.0);
      EXPECT_LE(value, weight);
    }
    if (in.foot_contact[0] || in.foot_contact[1]) {
      EXPECT_GT(r.vel_xy, 0.0);
      EXPECT_LE(r.vel_xy, w.vel_xy.weight);
    }
    EXPECT_LE(r.positive(), 1.0);
    const bool zero_power = (in.joint_torques.array() * in.joint_velocities.array() == 0.0).all();
    EXPECT_EQ(r.power == 0.0, zero_power);
    EXPECT_LE(r.power, 0.0);
  }
}

TEST(Disturbance, MagnitudeWithinTrainingBounds) {
  const DisturbanceSchedule d;
  const ModelSpec m = builtin_model(Plane::Sagittal);
  std::mt19937_64 rng(3);
  int positive = 0;
  for (int i = 0; i < 5000; ++i) {
    const ExternalForce f = sample_disturbance(d, m, 2.5, rng);
    const double impulse = f.force.x() * (f.t_end - f.t_start);
    EXPECT_GE(std::abs(impulse), 26.5 - 1e-9);
    EXPECT_LE(std::abs(impulse), 106.0 + 1e-9);
    EXPECT_EQ(f.force.y(), 0.0);
    EXPECT_EQ(f.link, 0);
    EXPECT_DOUBLE_EQ(f.t_start, 2.5);
    EXPECT_NEAR(f.t_end - f.t_start, 0.1, 1e-15);
    positive += f.force.x() > 0.0;
  }
  EXPECT_GT(positive, 2300);
  EXPECT_LT(positive, 2700);
}

TEST(Disturbance, ForceFromImpulse) {
  const ModelSpec m = builtin_model(Plane::Sagittal);
  const ExternalForce f = make_push(m, 0, 53.0, 1.0, 0.1);
  EXPECT_NEAR(f.force.x(), 530.0, 1e-9);
  EXPECT_EQ(f.point, m.links[0].com_local());
}

TEST(Disturbance, ScheduledEveryFiveSeconds) {
  EnvConfig c = default_env_config(Plane::Sagittal);
  c.episode_seconds = 30.0;
  Env env(c);
  env.reset(1);
  const auto& pushes = env.pushes();
  ASSERT_EQ(pushes.size(), 6u);
  EXPECT_EQ(pushes[0].t_start, 2.5);
  for (size_t i = 1; i < pushes.size(); ++i) EXPECT_EQ(pushes[i].t_start - pushes[i - 1].t_start, 5.0);
}

TEST(Env, ObservationDimensions) {
  EXPECT_EQ(Env(quiet_config(Plane::Sagittal)).observation_dim(), 32);
  EXPECT_EQ(Env(quiet_config(Plane::Frontal)).observation_dim(), 26);
  EXPECT_EQ(Env(quiet_config(Plane::Sagittal)).action_dim(), 7);
  EXPECT_EQ(Env(quiet_config(Plane::Frontal)).action_dim(), 4);
}

TEST(Env, ResetIsDeterministic) {
  Env a(default_env_config(Plane::Sagittal)), b(default_env_config(Plane::Sagittal));
  const Eigen::VectorXd oa = a.reset(17), ob = b.reset(17);
  EXPECT_EQ(oa, ob);
  EXPECT_NE(a.reset(18), ob);
  ASSERT_EQ(a.reset(17), ob);
  ASSERT_EQ(a.pushes().size(), b.pushes().size());
  for (size_t i = 0; i < a.pushes().size(); ++i) EXPECT_EQ(a.pushes()[i].force, b.pushes()[i].force);
}

TEST(Env, ResetComHeight) {
  Env env(default_env_config(Plane::Sagittal));
  env.reset(0);
  const double z = env.simulator().com_state(env.state().q, env.state().qd).position.y();
  EXPECT_GE(z, 1.08);
  EXPECT_LE(z, 1.12);
}

TEST(Env, ResetPerturbationBound) {
  Env env(default_env_config(Plane::Sagittal));
  const ModelSpec& m = env.config().model;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    env.reset(seed);
    EXPECT_TRUE(env.state().qd.isZero(0.0));
    for (int j = 0; j < m.joint_count(); ++j)
      worst = std::max(worst, std::abs(env.state().q[m.base_dof() + j] - m.joints[j].nominal_angle));
  }
  EXPECT_LE(worst, 0.02);
  EXPECT_GT(worst, 0.019);
}

TEST(Env, ResetStartsOnTheGround) {
  Env env(quiet_config());
  env.reset(4);
  const Kinematics kin = env.simulator().forward_kinematics(env.state().q);
  double lowest = 1e9;
  for (const Vec2& p : kin.contact_position) lowest = std::min(lowest, p.y());
  EXPECT_LT(env.simulator().static_penetration(), 0.0);
  EXPECT_NEAR(lowest, env.simulator().static_penetration(), 1e-12);
}

TEST(Env, WrongActionDimension) {
  Env env(quiet_config());
  env.reset(0);
  EXPECT_THROW(env.step(Eigen::VectorXd::Zero(6)), DimensionError);
  EXPECT_THROW(env.step(Eigen::VectorXd::Zero(8)), DimensionError);
}

TEST(Env, StepAfterTerminationThrows) {
  EnvConfig c = quiet_config();
  c.episode_seconds = 0.08;
  Env env(c);
  env.reset(0);
  StepResult r;
  EXPECT_FALSE(env.step(env.nominal_action()).terminated);
  r = env.step(env.nominal_action());
  EXPECT_TRUE(r.terminated);
  EXPECT_EQ(r.reason, Termination::TimeLimit);
  EXPECT_THROW(env.step(env.nominal_action()), std::logic_error);
}

TEST(Env, ActionMappingIsAffineOntoJointRange) {
  Env env(quiet_config());
  const ModelSpec& m = env.config().model;
  const int nj = m.joint_count();
  const Eigen::VectorXd lo = env.decode_action(Eigen::VectorXd::Constant(nj, -1.0));
  const Eigen::VectorXd hi = env.decode_action(Eigen::VectorXd::Constant(nj, 1.0));
  const Eigen::VectorXd mid = env.decode_action(Eigen::VectorXd::Zero(nj));
  for (int j = 0; j < nj; ++j) {
    EXPECT_DOUBLE_EQ(lo[j], m.joints[j].angle_limits[0]);
    EXPECT_DOUBLE_EQ(hi[j], m.joints[j].angle_limits[1]);
    EXPECT_NEAR(mid[j], 0.5 * (lo[j] + hi[j]), 1e-15);
  }
  Eigen::VectorXd nominal(nj);
  for (int j = 0; j < nj; ++j) nominal[j] = m.joints[j].nominal_angle;
  EXPECT_LE((env.decode_action(env.nominal_action()) - nominal).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(env.decode_action(Eigen::VectorXd::Constant(nj, 3.0)), hi);
}

TEST(Env, NominalActionHoldsFullEpisode) {
  for (Plane p : {Plane::Sagittal, Plane::Frontal}) {
    Env env(quiet_config(p));
    env.reset(0);
    StepResult r;
    for (int i = 0; i < 250; ++i) {
      r = env.step(env.nominal_action());
      EXPECT_GT(r.reward, 0.8) << "step " << i;
      if (r.terminated) break;
    }
    EXPECT_EQ(env.steps_taken(), 250);
    EXPECT_EQ(r.reason, Termination::TimeLimit);
  }
}

TEST(Env, NominalPoseSettlesQuickly) {
  for (Plane p : {Plane::Sagittal, Plane::Frontal}) {
    EnvConfig c = quiet_config(p);
    c.episode_seconds = 2.0;
    Env env(c);
    const int nb = env.config().model.base_dof();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      double late_rate = 0.0;
      env.set_tick_observer([&](const TickRecord& t) {
        if (t.t > 0.5) late_rate = std::max(late_rate, t.qd.tail(t.qd.size() - nb).cwiseAbs().maxCoeff());
      });
      env.reset(seed);
      while (!env.done()) env.step(env.nominal_action());
      EXPECT_LT(late_rate, 0.05) << "seed " << seed;
    }
  }
}

TEST(Env, StandingFootForcesCarryHalfTheWeight) {
  Env env(quiet_config());
  env.reset(0);
  StepResult r;
  for (int i = 0; i < 50; ++i) r = env.step(env.nominal_action());
  const ObsLayout L{7};
  const double half = 137.0 * 9.81 / 2.0;
  for (int side = 0; side < 2; ++side) {
    EXPECT_NEAR(r.observation[L.foot_force(side) + 1], half, 0.02 * half);
    EXPECT_GE(r.observation[L.foot_force(side) + 1], 0.0);
  }
  EXPECT_NEAR(r.observation[L.foot_force(0) + 1] + r.observation[L.foot_force(1) + 1], 2.0 * half, 0.01 * half);
}

TEST(Env, ZeroVelocityChannels) {
  Env env(quiet_config());
  const SimState s = env.simulator().nominal_state(0.0);
  const Eigen::VectorXd o = env.raw_observation(s);
  const ObsLayout L{7};
  EXPECT_TRUE(o.segment(L.joint_rates(), 7).isZero(0.0));
  EXPECT_TRUE(o.segment<2>(L.pelvis_velocity()).isZero(0.0));
  EXPECT_EQ(o[L.pelvis_rate()], 0.0);
  EXPECT_TRUE(o.segment<2>(L.com_velocity()).isZero(0.0));
  EXPECT_TRUE(o.allFinite());
}

TEST(Env, ObservationLayout) {
  Env env(quiet_config());
  SimState s = env.simulator().nominal_state(0.2);
  s.q[2] = 0.1;
  s.qd.setLinSpaced(s.qd.size(), 0.1, 1.0);
  const Eigen::VectorXd o = env.raw_observation(s);
  const ObsLayout L{7};
  const ModelSpec& m = env.config().model;
  const Kinematics kin = env.simulator().forward_kinematics(s.q, s.qd);
  const ComState com = env.simulator().com_state(s.q, s.qd);
  const Vec2 pelvis = kin.links[m.base_link].origin;
  EXPECT_EQ(o.head(7), s.q.tail(7));
  EXPECT_EQ(o.segment(L.joint_rates(), 7), s.qd.tail(7));
  EXPECT_EQ(o[L.pelvis_pitch()], 0.1);
  EXPECT_EQ(o[L.pelvis_rate()], s.qd[2]);
  EXPECT_LE((o.segment<2>(L.com_velocity()) - com.velocity).norm(), 1e-12);
  EXPECT_LE((o.segment<2>(L.com_relative()) - (com.position - pelvis)).norm(), 1e-12);
  EXPECT_LE((o.segment<2>(L.torso_relative()) - (kin.links[m.torso_link].com - pelvis)).norm(), 1e-12);
  for (int side = 0; side < 2; ++side)
    EXPECT_LE((o.segment<2>(L.foot_relative(side)) - (kin.links[m.foot_links[side]].origin - pelvis)).norm(), 1e-12);
}

TEST(Env, TranslationInvariance) {
  EnvConfig c = default_env_config(Plane::Sagittal);
  c.episode_seconds = 4.0;
  EnvConfig shifted = c;
  shifted.init_base_x = 37.5;
  Env a(c), b(shifted);
  Eigen::VectorXd oa = a.reset(8), ob = b.reset(8);
  EXPECT_LE((oa - ob).cwiseAbs().maxCoeff(), 1e-9);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  while (!a.done()) {
    Eigen::VectorXd act = a.nominal_action();
    for (Eigen::Index i = 0; i < act.size(); ++i) act[i] += u(rng);
    const StepResult ra = a.step(act), rb = b.step(act);
    EXPECT_LE((ra.observation - rb.observation).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NEAR(ra.reward, rb.reward, 1e-9);
    EXPECT_EQ(ra.reason, rb.reason);
  }
  EXPECT_TRUE(b.done());
}

TEST(Env, TrajectoryIsDeterministic) {
  EnvConfig c = default_env_config(Plane::Sagittal);
  c.episode_seconds = 4.0;
  c.obs_noise_sigma = {0.01};
  c.action_noise_sigma = 0.05;
  auto run = [&]() {
    Env env(c);
    env.reset(23);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    std::vector<double> trace;
    while (!env.done()) {
      Eigen::VectorXd act = env.nominal_action();
      for (Eigen::Index i = 0; i < act.size(); ++i) act[i] += u(rng);
      const StepResult r = env.step(act);
      trace.push_back(r.reward);
      trace.insert(trace.end(), r.observation.data(), r.observation.data() + r.observation.size());
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Env, RandomPolicyFallsAfterLargePush) {
  EnvConfig c = quiet_config();
  c.episode_seconds = 3.0;
  c.extra_pushes.push_back(make_push(c.model, 0, 240.0, 0.5, 0.1));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Env env(c);
    env.reset(seed);
    std::mt19937_64 rng(seed);
    StepResult r;
    while (!env.done()) {
      Eigen::VectorXd act(env.action_dim());
      for (Eigen::Index i = 0; i < act.size(); ++i) act[i] = u(rng);
      r = env.step(act);
    }
    EXPECT_NE(r.reason, Termination::TimeLimit) << "seed " << seed;
    EXPECT_LE(r.info.t, 2.5 + 1e-9) << "seed " << seed;
  }
}

TEST(Env, BodyContactTerminatesWithPenalty) {
  EnvConfig c = quiet_config();
  c.extra_pushes.push_back(make_push(c.model, 0, 400.0, 0.2, 0.1));
  Env env(c);
  env.reset(0);
  StepResult r;
  while (!env.done()) r = env.step(Eigen::VectorXd::Zero(env.action_dim()));
  ASSERT_NE(r.reason, Termination::TimeLimit);
  if (r.reason == Termination::BodyGroundContact) EXPECT_EQ(r.breakdown.contact, -10.0);
  EXPECT_TRUE(r.terminated);
}

TEST(Env, StepInfoReportsDisturbance) {
  EnvConfig c = quiet_config();
  c.extra_pushes.push_back(make_push(c.model, 0, 20.0, 0.4, 0.1));
  Env env(c);
  env.reset(0);
  int with_push = 0;
  for (int i = 0; i < 25; ++i) {
    const StepResult r = env.step(env.nominal_action());
    if (r.info.disturbance) {
      ++with_push;
      EXPECT_NEAR(r.info.disturbance->force.x(), 200.0, 1e-9);
    }
    EXPECT_EQ(r.info.contacts.size(), env.config().model.contacts.size());
  }
  EXPECT_GE(with_push, 2);
  EXPECT_LE(with_push, 4);
}

TEST(Trajectory, JsonlRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "pushrec_traj_test.jsonl";
  EnvConfig c = default_env_config(Plane::Sagittal);
  c.episode_seconds = 0.4;
  Env env(c);
  const Eigen::VectorXd o0 = env.reset(5);
  std::vector<Eigen::VectorXd> obs;
  std::vector<double> rewards;
  {
    TrajectoryWriter w(path, c, 5, o0);
    while (!env.done()) {
      const StepResult r = env.step(env.nominal_action());
      w.write(env.nominal_action(), r);
      obs.push_back(r.observation);
      rewards.push_back(r.reward);
    }
  }
  const TrajectoryLog log = read_trajectory(path);
  EXPECT_EQ(log.seed, 5u);
  EXPECT_EQ(log.initial_observation, o0);
  ASSERT_EQ(log.observations.size(), obs.size());
  for (size_t i = 0; i < obs.size(); ++i) {
    EXPECT_EQ(log.observations[i], obs[i]);
    EXPECT_EQ(log.rewards[i], rewards[i]);
  }

  // Replaying the logged actions from the logged config reproduces the log.
  Env replay(log.config);
  EXPECT_EQ(replay.reset(log.seed), log.initial_observation);
  for (size_t i = 0; i < log.actions.size(); ++i) EXPECT_EQ(replay.step(log.actions[i]).observation, obs[i]);
  std::filesystem::remove(path);
}
