#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "pushrec/capture_point.hpp"
#include "pushrec/control.hpp"
#include "pushrec/dynamics.hpp"
#include "pushrec/model.hpp"

namespace pushrec {

/// alpha such that exp(-alpha e^2) = 1/2 at e = e_half.
inline double half_error_alpha(double e_half) { return std::log(2.0) / (e_half * e_half); }

struct RewardTerm {
  double weight = 0.0;
  double alpha = 1.0;

  double eval(double error) const { return weight * std::exp(-alpha * error * error); }
};

struct RewardWeights {
  RewardTerm torso_pose{0.1, half_error_alpha(0.1)};
  RewardTerm pelvis_pose{0.1, half_error_alpha(0.1)};
  RewardTerm com_xy{0.2, half_error_alpha(0.05)};
  RewardTerm com_z{0.1, half_error_alpha(0.05)};
  RewardTerm vel_xy{0.2, half_error_alpha(0.3)};
  RewardTerm vel_z{0.1, half_error_alpha(0.3)};
  RewardTerm grf_left{0.1, half_error_alpha(200.0)};
  RewardTerm grf_right{0.1, half_error_alpha(200.0)};
  double power_weight = -1e-4;  // per watt
  double no_foot_penalty = -2.0;
  double body_contact_penalty = -10.0;
  double com_height_target = 1.1;  // m
  double grf_target = 137.0 * 9.81 / 2.0;  // N per foot

  double positive_weight_sum() const;
};

void validate(const RewardWeights& w);

struct RewardBreakdown {
  double torso_pose = 0.0;
  double pelvis_pose = 0.0;
  double com_xy = 0.0;
  double com_z = 0.0;
  double vel_xy = 0.0;
  double vel_z = 0.0;
  double grf_left = 0.0;
  double grf_right = 0.0;
  double contact = 0.0;
  double power = 0.0;

  double positive() const;
  /// The scalar reward; evaluated in a fixed order so it is reproducible.
  double total() const;
};

nlohmann::json to_json(const RewardBreakdown& r);

/// Everything the reward looks at, extracted from one simulator state.
struct RewardInputs {
  double torso_angle = 0.0;
  double pelvis_angle = 0.0;
  Vec2 com_position{0.0, 0.0};
  Vec2 com_velocity{0.0, 0.0};
  double support_center = 0.0;
  std::array<double, 2> foot_normal_force{0.0, 0.0};
  std::array<bool, 2> foot_contact{false, false};
  bool body_contact = false;
  Eigen::VectorXd joint_torques;
  Eigen::VectorXd joint_velocities;
};

RewardBreakdown compute_reward(const RewardWeights& w, const CpParams& cp, const RewardInputs& in);

struct DisturbanceSchedule {
  bool enabled = true;
  double first_push = 2.5;  // s
  double interval = 5.0;    // s
  std::array<double, 2> magnitude_range{26.5, 106.0};  // N s
  double push_duration = 0.1;  // s
  int target_link = 0;
  std::optional<Vec2> point;  // link frame; the link CoM when unset
};

void validate(const DisturbanceSchedule& d, const ModelSpec& model);

/// Random-magnitude, random-sign horizontal push starting at `t_start`.
ExternalForce sample_disturbance(const DisturbanceSchedule& d, const ModelSpec& model, double t_start,
                                 std::mt19937_64& rng);

/// Horizontal push delivering `impulse` (signed, N s) over `duration` at the
/// CoM of `link`.
ExternalForce make_push(const ModelSpec& model, int link, double impulse, double t_start, double duration);

struct EnvConfig {
  ModelSpec model = builtin_model(Plane::Sagittal);
  ContactParams contact;
  double control_hz = 500.0;
  double policy_hz = 25.0;
  double episode_seconds = 10.0;
  double filter_cutoff_hz = 10.0;
  DisturbanceSchedule disturbance;
  std::vector<ExternalForce> extra_pushes;
  RewardWeights reward;
  std::vector<double> obs_noise_sigma;  // empty: off; a single entry applies to all channels
  double action_noise_sigma = 0.0;
  double init_joint_noise = 0.02;  // rad, uniform
  double init_height = 0.0;        // m of sole clearance above the resting height
  double init_base_x = 0.0;        // m
  std::array<double, 2> init_pitch_range{0.0, 0.0};
  double termination_height_ratio = 0.6;
  double body_radius = 0.1;  // m, thickness of pelvis and torso for ground contact
  std::uint64_t rng_seed = 0;

  int substeps() const;
  int max_steps() const;
  double dt() const { return 1.0 / control_hz; }
};

/// Defaults with reward targets matched to the model's resting stance.
EnvConfig env_config_for(ModelSpec model);
EnvConfig default_env_config(Plane plane);
void validate(const EnvConfig& c);
nlohmann::json to_json(const EnvConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
EnvConfig env_config_from_json(const nlohmann::json& j);
EnvConfig load_env_config(const std::filesystem::path& path);

int observation_dim(const ModelSpec& model);

enum class Termination { None, BodyGroundContact, PelvisBelowThreshold, TimeLimit, NumericalFailure };
std::string to_string(Termination t);

struct StepInfo {
  double t = 0.0;
  std::vector<ContactState> contacts;
  std::optional<ExternalForce> disturbance;  // push active during this policy step
  ComState com;
};

struct StepResult {
  Eigen::VectorXd observation;
  double reward = 0.0;
  RewardBreakdown breakdown;
  bool terminated = false;
  Termination reason = Termination::None;
  StepInfo info;
};

/// State after one physics tick, for recorders.
struct TickRecord {
  double t = 0.0;
  VecN q;
  VecN qd;
  Eigen::VectorXd torques;
  std::vector<ContactState> contacts;
  std::vector<Vec2> contact_position;
  ComState com;
};

/// Policy-level environment: one action holds joint targets for
/// `substeps()` PD-controlled physics ticks.
class Env {
 public:
  explicit Env(EnvConfig config);

  Eigen::VectorXd reset(std::uint64_t seed);
  StepResult step(const Eigen::VectorXd& action);

  int observation_dim() const { return obs_dim_; }
  int action_dim() const { return config_.model.joint_count(); }

  /// Maps [-1, 1] onto each joint's angle range.
  Eigen::VectorXd decode_action(const Eigen::VectorXd& action) const;
  Eigen::VectorXd encode_targets(const Eigen::VectorXd& joint_angles) const;
  Eigen::VectorXd nominal_action() const;

  Eigen::VectorXd raw_observation(const SimState& s) const;
  RewardInputs reward_inputs(const SimState& s, const Eigen::VectorXd& torques) const;
  bool body_contact(const SimState& s) const;

  const EnvConfig& config() const { return config_; }
  const Simulator& simulator() const { return sim_; }
  const SimState& state() const { return state_; }
  const std::vector<ExternalForce>& pushes() const { return pushes_; }
  int steps_taken() const { return steps_; }
  bool done() const { return done_; }

  void set_tick_observer(std::function<void(const TickRecord&)> fn) { observer_ = std::move(fn); }

 private:
  Eigen::VectorXd add_obs_noise(Eigen::VectorXd obs);

  EnvConfig config_;
  Simulator sim_;
  CpParams cp_;
  int obs_dim_ = 0;
  double nominal_pelvis_height_ = 0.0;
  SimState state_;
  FilterState filter_;
  std::vector<ExternalForce> pushes_;
  std::mt19937_64 rng_;
  int steps_ = 0;
  bool done_ = true;
  std::function<void(const TickRecord&)> observer_;
};

/// JSONL trajectory log: a header line with the config and seed, then one
/// record per policy step.
class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::filesystem::path& path, const EnvConfig& config, std::uint64_t seed,
                   const Eigen::VectorXd& initial_observation);
  void write(const Eigen::VectorXd& action, const StepResult& r);

 private:
  std::ofstream out_;
};

struct TrajectoryLog {
  EnvConfig config;
  std::uint64_t seed = 0;
  Eigen::VectorXd initial_observation;
  std::vector<Eigen::VectorXd> actions;
  std::vector<Eigen::VectorXd> observations;
  std::vector<double> rewards;
};

TrajectoryLog read_trajectory(const std::filesystem::path& path);

}  // namespace pushrec
