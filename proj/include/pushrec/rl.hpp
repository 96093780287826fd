#pragma once

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pushrec/nn.hpp"

namespace pushrec {

inline const std::vector<int> kHiddenLayers{100, 50, 25};

/// Diagonal Gaussian policy: tanh network for the mean, state-independent
/// log standard deviation.
struct GaussianPolicy {
  Mlp mean;
  Eigen::VectorXd log_std;

  GaussianPolicy() = default;
  GaussianPolicy(Mlp net, Eigen::VectorXd log_std);

  int obs_dim() const { return mean.input_dim(); }
  int act_dim() const { return mean.output_dim(); }
  /// Mean-network parameters followed by log_std.
  int param_count() const { return mean.param_count() + static_cast<int>(log_std.size()); }
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);

  Eigen::VectorXd mean_action(const Eigen::VectorXd& obs) const { return mean.forward_one(obs); }
  double logp(const Eigen::VectorXd& obs, const Eigen::VectorXd& action) const;
  Eigen::VectorXd logp(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions) const;
  /// mu + exp(log_std) * xi with xi standard normal; returns the action and its log-density.
  std::pair<Eigen::VectorXd, double> sample(const Eigen::VectorXd& obs, std::mt19937_64& rng) const;
  double entropy() const;
};

GaussianPolicy make_policy(int obs_dim, int act_dim, double log_std_init, std::mt19937_64& rng,
                           const std::vector<int>& hidden = kHiddenLayers);
Mlp make_value_function(int obs_dim, std::mt19937_64& rng, const std::vector<int>& hidden = kHiddenLayers);

double gaussian_logp(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_std, const Eigen::VectorXd& a);

/// sum_i weights[i] * grad logp(a_i | s_i) over all policy parameters.
Eigen::VectorXd logp_gradient(const GaussianPolicy& pi, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions,
                              const Eigen::VectorXd& weights);

// Return and advantage estimators on one episode segment.
std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma, double bootstrap = 0.0);
/// `values` has one entry per reward plus the bootstrap value (0 if terminal).
std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                        double lambda);

/// Contiguous run of steps from one episode; `bootstrap` is V of the state
/// after the last step, 0 when the episode ended in a fall.
struct Segment {
  int start = 0;
  int length = 0;
  double bootstrap = 0.0;
};

struct Batch {
  Eigen::MatrixXd obs;      // normalized observations, one column per step
  Eigen::MatrixXd actions;
  Eigen::VectorXd logp;     // under the policy that collected the batch
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;

  int size() const { return static_cast<int>(obs.cols()); }
};

/// Fills advantages and returns per segment.
void compute_targets(const std::vector<double>& rewards, const Eigen::VectorXd& values,
                     const std::vector<Segment>& segments, double gamma, double lambda, Batch& batch);

void normalize_advantages(Eigen::VectorXd& adv);
double explained_variance(const Eigen::VectorXd& prediction, const Eigen::VectorXd& target);

/// L = -mean(exp(logp - logp_old) * A) - entropy_coef * H.
std::pair<double, Eigen::VectorXd> surrogate_loss(const GaussianPolicy& pi, const Batch& batch,
                                                  double entropy_coef = 0.0);
double surrogate_value(const GaussianPolicy& pi, const Batch& batch, double entropy_coef = 0.0);

/// Clipped objective, negated so it is minimized.
std::pair<double, Eigen::VectorXd> clipped_loss(const GaussianPolicy& pi, const Batch& batch,
                                                const std::vector<int>& indices, double clip,
                                                double entropy_coef = 0.0);

/// Mean over states of KL(old || new).
double mean_kl(const GaussianPolicy& old_pi, const GaussianPolicy& new_pi, const Eigen::MatrixXd& obs);

/// (F + damping I) v with F the Fisher of the policy averaged over `obs`.
Eigen::VectorXd fisher_vector_product(const GaussianPolicy& pi, const Eigen::MatrixXd& obs, const Eigen::VectorXd& v,
                                      double damping);

struct CgResult {
  Eigen::VectorXd x;
  std::vector<double> residual_norms;  // after each iteration, starting with the initial residual
  int iterations = 0;
};

CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                            const Eigen::VectorXd& b, int iterations = 10, double tolerance = 1e-10);

struct TrpoConfig {
  int batch_steps = 4096;
  double max_kl = 0.01;
  double kl_slack = 1.5;
  int cg_iterations = 10;
  double cg_damping = 0.1;
  int fvp_stride = 5;  // Fisher products use every k-th state
  int backtrack_steps = 10;
  double entropy_coef = 0.0;
  int value_epochs = 10;
  int value_minibatch = 256;
  double value_lr = 3e-4;
  double gamma = 0.95;
  double lambda = 0.95;
};

struct PpoConfig {
  int batch_steps = 4096;
  double clip = 0.2;
  int epochs = 10;
  int minibatch = 256;
  double lr = 3e-4;
  double entropy_coef = 0.0;
  int value_epochs = 10;
  int value_minibatch = 256;
  double value_lr = 3e-4;
  double gamma = 0.95;
  double lambda = 0.95;
};

void validate(const TrpoConfig& c);
void validate(const PpoConfig& c);

struct UpdateStats {
  double loss_before = 0.0;
  double loss_after = 0.0;
  double kl = 0.0;
  bool accepted = false;
  bool skipped = false;
  int backtracks = 0;
  std::string note;
};

UpdateStats trpo_update(GaussianPolicy& pi, const Batch& batch, const TrpoConfig& cfg);

/// `adam` carries optimizer state across calls.
UpdateStats ppo_update(GaussianPolicy& pi, Adam& adam, const Batch& batch, const PpoConfig& cfg,
                       std::mt19937_64& rng);

/// Mean squared error of value predictions and its parameter gradient.
std::pair<double, Eigen::VectorXd> value_loss(const Mlp& v, const Eigen::MatrixXd& obs, const Eigen::VectorXd& target);

struct ValueFitStats {
  double loss_before = 0.0;
  std::vector<double> epoch_loss;  // full-batch loss after each epoch
};

ValueFitStats value_fit(Mlp& v, Adam& adam, const Eigen::MatrixXd& obs, const Eigen::VectorXd& target, int epochs,
                        int minibatch, std::mt19937_64& rng);

}  // namespace pushrec
