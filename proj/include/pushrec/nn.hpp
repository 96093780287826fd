#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace pushrec {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fully connected network, hidden activation on every layer but the last,
/// linear output. Samples are matrix columns.
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> input;  // input[l] feeds layer l; input.back() is the output
    std::vector<Eigen::MatrixXd> pre;    // pre-activation of each layer
  };

  Mlp() = default;
  Mlp(std::vector<int> dims, Activation hidden);

  /// Glorot-uniform weights, zero biases; the output layer is scaled by `output_gain`.
  void init(std::mt19937_64& rng, double output_gain = 1.0);

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  int layer_count() const { return static_cast<int>(weights_.size()); }
  const std::vector<int>& dims() const { return dims_; }
  Activation hidden() const { return hidden_; }
  int param_count() const { return param_count_; }

  Eigen::MatrixXd& weight(int l) { return weights_[l]; }
  const Eigen::MatrixXd& weight(int l) const { return weights_[l]; }
  Eigen::VectorXd& bias(int l) { return biases_[l]; }
  const Eigen::VectorXd& bias(int l) const { return biases_[l]; }

  /// Flat layout: W0 (column-major), b0, W1, b1, ...
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Cache& cache) const;
  Eigen::VectorXd forward_one(const Eigen::VectorXd& x) const;

  /// Reverse pass: gradient of sum(grad_out .* output) with respect to the
  /// flat parameters, summed over samples. `grad_input` receives the input
  /// gradient when non-null.
  Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& grad_out,
                           Eigen::MatrixXd* grad_input = nullptr) const;

  /// Forward-mode directional derivative of the output along a flat
  /// parameter direction.
  Eigen::MatrixXd jvp(const Cache& cache, const Eigen::VectorXd& direction) const;

 private:
  void check_input(const Eigen::MatrixXd& x) const;

  std::vector<int> dims_;
  Activation hidden_ = Activation::Tanh;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
  int param_count_ = 0;
};

class Adam {
 public:
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  Adam() = default;
  Adam(int n, double learning_rate);
  /// Takes one descent step on `params` along `grad`.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
  std::int64_t steps() const { return t_; }

 private:
  Eigen::VectorXd m_, v_;
  std::int64_t t_ = 0;
};

/// Running per-channel mean and variance (parallel-merge form).
struct RunningNorm {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double count = 0.0;
  double clip = 10.0;

  RunningNorm() = default;
  explicit RunningNorm(int dim);
  /// Samples are columns.
  void update(const Eigen::MatrixXd& x);
  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd apply_one(const Eigen::VectorXd& x) const;
};

}  // namespace pushrec
