#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pushrec/env.hpp"
#include "pushrec/nn.hpp"
#include "pushrec/rl.hpp"

namespace pushrec {

enum class Algo { Trpo, Ppo };
std::string to_string(Algo a);
Algo algo_from_string(const std::string& s);

struct TrainConfig {
  Algo algo = Algo::Trpo;
  TrpoConfig trpo;
  PpoConfig ppo;
  int iterations = 300;
  int workers = 1;
  std::uint64_t seed = 0;
  int checkpoint_every = 50;  // 0: final checkpoint only
  double log_std_init = std::log(0.3);
  bool normalize_observations = true;
  bool normalize_advantages = true;
  std::vector<int> hidden = kHiddenLayers;

  int batch_steps() const { return algo == Algo::Trpo ? trpo.batch_steps : ppo.batch_steps; }
  double gamma() const { return algo == Algo::Trpo ? trpo.gamma : ppo.gamma; }
  double lambda() const { return algo == Algo::Trpo ? trpo.lambda : ppo.lambda; }
  int value_epochs() const { return algo == Algo::Trpo ? trpo.value_epochs : ppo.value_epochs; }
  int value_minibatch() const { return algo == Algo::Trpo ? trpo.value_minibatch : ppo.value_minibatch; }
  double value_lr() const { return algo == Algo::Trpo ? trpo.value_lr : ppo.value_lr; }
};

void validate(const TrainConfig& c);
nlohmann::json to_json(const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Policy, critic and the observation normalizer they share.
struct ActorCritic {
  GaussianPolicy policy;
  Mlp value;
  RunningNorm obs_norm;
  bool normalize_observations = true;

  Eigen::MatrixXd prepare(const Eigen::MatrixXd& raw_obs) const;
  Eigen::VectorXd prepare_one(const Eigen::VectorXd& raw_obs) const;
  /// Deterministic action: the policy mean.
  Eigen::VectorXd act(const Eigen::VectorXd& raw_obs) const;
};

ActorCritic make_actor_critic(int obs_dim, int act_dim, const TrainConfig& cfg, std::mt19937_64& rng);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "BLRL", u32 version, u32 flags, layer tables, then little-endian f64
/// arrays: actor weights, actor biases, log_std, critic weights, critic
/// biases, normalizer (count, clip, mean, var).
void save_checkpoint(const std::filesystem::path& path, const ActorCritic& ac);
ActorCritic load_checkpoint(const std::filesystem::path& path);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IterationLog {
  int iter = 0;
  std::int64_t steps = 0;
  double mean_return = NAN;
  double mean_ep_len = NAN;
  int episodes = 0;
  double mean_kl = 0.0;
  double explained_var = 0.0;
  double wall_s = 0.0;
  UpdateStats policy;
  ValueFitStats value;
};

inline const char* kTrainCsvHeader = "iter,steps,mean_return,mean_ep_len,mean_kl,explained_var,wall_s";
std::string csv_row(const IterationLog& r);

struct TrainOutput {
  std::filesystem::path dir;  // empty: nothing written
};

struct TrainResult {
  ActorCritic model;
  std::vector<IterationLog> log;
};

/// Rollouts fan out over `workers` environment instances; worker w seeds
/// its environment and sampler from (seed, w). Results are identical for a
/// given seed and worker count.
TrainResult train(const EnvConfig& env_config, const TrainConfig& cfg, const TrainOutput& out = {},
                  const std::function<void(const IterationLog&)>& on_iteration = {});

/// Collected on-policy data for one iteration, before targets are computed.
struct Rollout {
  Eigen::MatrixXd raw_obs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd logp;
  std::vector<double> rewards;
  struct End {
    int start = 0;
    int length = 0;
    bool terminal = false;
    Eigen::VectorXd next_obs;  // raw, for bootstrapping non-terminal ends
  };
  std::vector<End> segments;
  std::vector<double> episode_returns;
  std::vector<int> episode_lengths;
};

std::uint64_t worker_seed(std::uint64_t seed, int worker);

}  // namespace pushrec
