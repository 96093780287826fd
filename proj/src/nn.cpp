#include "pushrec/nn.hpp"

#include <algorithm>
#include <cmath>

#include "pushrec/common.hpp"

namespace pushrec {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw ConfigError("unknown activation '" + s + "'");
}

Mlp::Mlp(std::vector<int> dims, Activation hidden) : dims_(std::move(dims)), hidden_(hidden) {
  if (dims_.size() < 2) throw DimensionError("network needs at least an input and an output layer");
  for (int d : dims_)
    if (d <= 0) throw DimensionError("layer widths must be positive");
  for (size_t l = 0; l + 1 < dims_.size(); ++l) {
    weights_.push_back(Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]));
    biases_.push_back(Eigen::VectorXd::Zero(dims_[l + 1]));
    param_count_ += dims_[l + 1] * (dims_[l] + 1);
  }
}

void Mlp::init(std::mt19937_64& rng, double output_gain) {
  for (int l = 0; l < layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / (dims_[l] + dims_[l + 1]));
    std::uniform_real_distribution<double> u(-limit, limit);
    Eigen::MatrixXd& w = weights_[l];
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = u(rng);
    if (l == layer_count() - 1) w *= output_gain;
    biases_[l].setZero();
  }
}

Eigen::VectorXd Mlp::params() const {
  Eigen::VectorXd p(param_count_);
  int k = 0;
  for (int l = 0; l < layer_count(); ++l) {
    const auto n = weights_[l].size();
    p.segment(k, n) = Eigen::Map<const Eigen::VectorXd>(weights_[l].data(), n);
    k += n;
    p.segment(k, biases_[l].size()) = biases_[l];
    k += biases_[l].size();
  }
  return p;
}

void Mlp::set_params(const Eigen::VectorXd& p) {
  if (p.size() != param_count_)
    throw DimensionError("parameter vector has " + std::to_string(p.size()) + " entries, expected " +
                         std::to_string(param_count_));
  int k = 0;
  for (int l = 0; l < layer_count(); ++l) {
    const auto n = weights_[l].size();
    Eigen::Map<Eigen::VectorXd>(weights_[l].data(), n) = p.segment(k, n);
    k += n;
    biases_[l] = p.segment(k, biases_[l].size());
    k += biases_[l].size();
  }
}

void Mlp::check_input(const Eigen::MatrixXd& x) const {
  if (x.rows() != input_dim())
    throw DimensionError("network input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(input_dim()));
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  check_input(x);
  Eigen::MatrixXd a = x;
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::MatrixXd z = weights_[l] * a;
    z.colwise() += biases_[l];
    if (l + 1 < layer_count()) {
      if (hidden_ == Activation::Tanh) a = z.array().tanh();
      else a = z.cwiseMax(0.0);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Cache& cache) const {
  check_input(x);
  cache.input.assign(1, x);
  cache.pre.clear();
  for (int l = 0; l < layer_count(); ++l) {
    Eigen::MatrixXd z = weights_[l] * cache.input.back();
    z.colwise() += biases_[l];
    cache.pre.push_back(z);
    if (l + 1 < layer_count()) {
      if (hidden_ == Activation::Tanh) cache.input.push_back(z.array().tanh());
      else cache.input.push_back(z.cwiseMax(0.0));
    } else {
      cache.input.push_back(std::move(z));
    }
  }
  return cache.input.back();
}

Eigen::VectorXd Mlp::forward_one(const Eigen::VectorXd& x) const { return forward(Eigen::MatrixXd(x)).col(0); }

namespace {

// Elementwise derivative of the hidden activation, from pre- and post-activation.
Eigen::MatrixXd activation_slope(Activation a, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& post) {
  if (a == Activation::Tanh) return 1.0 - post.array().square();
  return (pre.array() > 0.0).cast<double>();
}

}  // namespace

Eigen::VectorXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& grad_out, Eigen::MatrixXd* grad_input) const {
  if (grad_out.rows() != output_dim() || grad_out.cols() != cache.input.front().cols())
    throw DimensionError("output gradient shape does not match the cached forward pass");
  Eigen::VectorXd grad(param_count_);
  int k = param_count_;
  Eigen::MatrixXd g = grad_out;
  for (int l = layer_count() - 1; l >= 0; --l) {
    if (l + 1 < layer_count()) g.array() *= activation_slope(hidden_, cache.pre[l], cache.input[l + 1]).array();
    const auto nb = biases_[l].size();
    k -= nb;
    grad.segment(k, nb) = g.rowwise().sum();
    const auto nw = weights_[l].size();
    k -= nw;
    const Eigen::MatrixXd gw = g * cache.input[l].transpose();
    grad.segment(k, nw) = Eigen::Map<const Eigen::VectorXd>(gw.data(), nw);
    if (l > 0 || grad_input) g = weights_[l].transpose() * g;
  }
  if (grad_input) *grad_input = std::move(g);
  return grad;
}

Eigen::MatrixXd Mlp::jvp(const Cache& cache, const Eigen::VectorXd& direction) const {
  if (direction.size() != param_count_) throw DimensionError("direction has the wrong parameter count");
  const Eigen::Index n = cache.input.front().cols();
  Eigen::MatrixXd da = Eigen::MatrixXd::Zero(dims_.front(), n);
  int k = 0;
  for (int l = 0; l < layer_count(); ++l) {
    const auto nw = weights_[l].size();
    const Eigen::Map<const Eigen::MatrixXd> dw(direction.data() + k, weights_[l].rows(), weights_[l].cols());
    k += nw;
    const auto db = direction.segment(k, biases_[l].size());
    k += biases_[l].size();
    Eigen::MatrixXd dz = dw * cache.input[l] + weights_[l] * da;
    dz.colwise() += db;
    if (l + 1 < layer_count()) dz.array() *= activation_slope(hidden_, cache.pre[l], cache.input[l + 1]).array();
    da = std::move(dz);
  }
  return da;
}

Adam::Adam(int n, double learning_rate)
    : lr(learning_rate), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (grad.size() != m_.size() || params.size() != m_.size()) throw DimensionError("Adam size mismatch");
  ++t_;
  m_ = beta1 * m_ + (1.0 - beta1) * grad;
  v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  params.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
}

RunningNorm::RunningNorm(int dim) : mean(Eigen::VectorXd::Zero(dim)), var(Eigen::VectorXd::Ones(dim)) {}

void RunningNorm::update(const Eigen::MatrixXd& x) {
  if (x.cols() == 0) return;
  if (x.rows() != mean.size()) throw DimensionError("normalizer input has the wrong dimension");
  const double nb = static_cast<double>(x.cols());
  const Eigen::VectorXd bmean = x.rowwise().mean();
  const Eigen::VectorXd bvar = (x.colwise() - bmean).array().square().rowwise().mean();
  if (count == 0.0) {
    mean = bmean;
    var = bvar;
    count = nb;
    return;
  }
  const double total = count + nb;
  const Eigen::VectorXd delta = bmean - mean;
  mean += delta * (nb / total);
  var = (var * count + bvar * nb + delta.cwiseProduct(delta) * (count * nb / total)) / total;
  count = total;
}

Eigen::MatrixXd RunningNorm::apply(const Eigen::MatrixXd& x) const {
  const Eigen::VectorXd inv = (var.array() + 1e-8).rsqrt();
  Eigen::MatrixXd y = (x.colwise() - mean).array().colwise() * inv.array();
  return y.cwiseMax(-clip).cwiseMin(clip);
}

Eigen::VectorXd RunningNorm::apply_one(const Eigen::VectorXd& x) const { return apply(Eigen::MatrixXd(x)).col(0); }

}  // namespace pushrec
