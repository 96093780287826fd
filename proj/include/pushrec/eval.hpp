#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "pushrec/env.hpp"
#include "pushrec/train.hpp"

namespace pushrec {

/// Observation to action for one episode.
using ActionFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
/// Builds a fresh ActionFn per episode so stateful policies stay reproducible.
using PolicySource = std::function<ActionFn(std::uint64_t seed)>;

/// Holds the nominal joint targets.
PolicySource hold_policy(const EnvConfig& env);
/// Deterministic policy mean.
PolicySource mean_policy(ActorCritic model);
/// Uniform random actions in [-1, 1].
PolicySource random_policy(int action_dim);

/// Throws DimensionError naming both shapes when the model does not fit the environment.
void check_compatible(const ActorCritic& model, const EnvConfig& env);

enum class Family { Quiet, Push, Drop };
std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct SuccessCriteria {
  double settle_time = 8.0;   // s after the disturbance
  double com_speed = 0.05;    // m/s
  double pitch_bound = 0.3;   // rad
};

struct Scenario {
  std::string name = "quiet";
  Family family = Family::Quiet;
  std::string target_link = "pelvis";
  std::optional<Vec2> point;  // link frame; the link CoM when unset
  double impulse = 0.0;       // N s, magnitude
  double direction = 1.0;     // sign of the horizontal push
  double push_time = 1.0;     // s
  double push_time_jitter = 0.0;  // s, uniform in [0, jitter] drawn from the seed
  double push_duration = 0.12;    // s
  double drop_height = 0.0;       // m
  std::array<double, 2> init_pitch_range{0.0, 0.0};
  double init_joint_noise = 0.0;
  std::vector<double> obs_noise_sigma;
  double action_noise_sigma = 0.0;
  SuccessCriteria success;

  /// Time at which the disturbance ends and settling starts.
  double disturbance_end() const;
  double horizon() const { return disturbance_end() + success.settle_time; }
};

void validate(const Scenario& s, const ModelSpec& model);
nlohmann::json to_json(const Scenario& s);
Scenario scenario_from_json(const nlohmann::json& j);

/// Named presets: quiet, pelvis-push, torso-push, thigh-push, shank-push, drop.
Scenario builtin_scenario(const std::string& name, double impulse = 0.0);
std::vector<std::string> builtin_scenario_names();

/// Environment configuration realizing the scenario; pushes come only from the scenario.
EnvConfig scenario_env(const EnvConfig& base, const Scenario& s, std::uint64_t seed);

struct TrajectorySample {
  double t = 0.0;
  Vec2 com{0.0, 0.0};
  Vec2 com_velocity{0.0, 0.0};
  double pelvis_pitch = 0.0;
  std::array<bool, 2> foot_contact{false, false};
  std::array<double, 2> foot_x{0.0, 0.0};  // mean of the foot's contact points
  Eigen::VectorXd torque;
  Eigen::VectorXd joint_velocity;
};

using Trajectory = std::vector<TrajectorySample>;

TrajectorySample sample_state(const Simulator& sim, const SimState& s, const Eigen::VectorXd& torque);

struct StepRule {
  double min_flight = 0.04;        // s with every contact of the foot released
  double min_displacement = 0.02;  // m between liftoff and touchdown
};

/// Swing-foot events, counted at touchdown.
int count_steps(const Trajectory& traj, const StepRule& rule = {});
/// Running count after each sample.
std::vector<int> cumulative_steps(const Trajectory& traj, const StepRule& rule = {});

struct PeakStats {
  Eigen::VectorXd torque;    // per joint, max |tau|
  Eigen::VectorXd velocity;  // per joint, max |qd|
  std::vector<bool> velocity_exceeded;
  bool any_velocity_exceeded = false;
};

PeakStats peak_stats(const Trajectory& traj, const ModelSpec& model);

struct EvalReport {
  std::string scenario;
  std::uint64_t seed = 0;
  bool success = false;
  std::string reason;  // empty on success
  Termination termination = Termination::None;
  int steps_taken = 0;
  PeakStats peaks;
  double settle_time = NAN;  // s after the disturbance until the predicate held for good
  double impulse = 0.0;
  double normalized_impulse = 0.0;  // N s / kg
  double push_time = 0.0;
  double final_com_speed = 0.0;
  double final_pitch = 0.0;
  std::string trajectory;  // log path, when written
};

nlohmann::json to_json(const EvalReport& r);

struct EvalOptions {
  std::filesystem::path trajectory_path;  // empty: not written
  Trajectory* trajectory = nullptr;       // receives the 500 Hz samples when set
};

EvalReport run_scenario(const PolicySource& policy, const Scenario& s, const EnvConfig& base, std::uint64_t seed,
                        const EvalOptions& options = {});

/// Raised from height with pitch drawn in the range.
EvalReport drop_test(const PolicySource& policy, const EnvConfig& base, double height,
                     std::array<double, 2> init_pitch_range, std::uint64_t seed);

/// Capture-point impulse bound for the resting stance pushed in `direction`.
double analytic_impulse_bound(const EnvConfig& env, double direction = 1.0);

struct SearchResult {
  double max_impulse = 0.0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  std::vector<std::pair<double, bool>> probes;
};

/// Bisection on the impulse over [0, j_hi] assuming failure is monotone in
/// the impulse; j_hi < 0 selects 4x the analytic bound.
SearchResult search_max_impulse(const PolicySource& policy, const Scenario& family, const EnvConfig& base,
                                std::uint64_t seed, double resolution = 1.0, double j_hi = -1.0);

struct SweepItem {
  Scenario scenario;
  std::uint64_t seed = 0;
};

/// Runs every item, in parallel when workers > 1; reports come back in item order.
std::vector<EvalReport> run_sweep(const PolicySource& policy, const std::vector<SweepItem>& items,
                                  const EnvConfig& base, int workers = 1);

inline const char* kSweepCsvHeader = "scenario,impulse_ns,normalized,success,steps,peak_torque_max,peak_vel_max";
std::string sweep_csv_row(const EvalReport& r);
void write_reports(const std::filesystem::path& jsonl, const std::vector<EvalReport>& reports);
void write_sweep_csv(const std::filesystem::path& csv, const std::vector<EvalReport>& reports);

}  // namespace pushrec
