#include "pushrec/rl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "pushrec/common.hpp"

namespace pushrec {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (size_t k = 0; k < idx.size(); ++k) out.col(k) = m.col(idx[k]);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
  return out;
}

std::vector<int> shuffled(int n, std::mt19937_64& rng) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // Fisher-Yates with an explicit draw so the sequence is identical across standard libraries.
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

Eigen::VectorXd logp_columns(const Eigen::MatrixXd& mu, const Eigen::VectorXd& log_std, const Eigen::MatrixXd& a) {
  const Eigen::ArrayXd inv_std = (-log_std.array()).exp();
  const Eigen::ArrayXXd z = (a - mu).array().colwise() * inv_std;
  const double constant = -log_std.sum() - 0.5 * static_cast<double>(log_std.size()) * kLog2Pi;
  return (-0.5 * z.square().colwise().sum()).matrix().transpose().array() + constant;
}

void check_batch(const GaussianPolicy& pi, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions) {
  if (obs.rows() != pi.obs_dim()) throw DimensionError("observation dimension does not match the policy");
  if (actions.rows() != pi.act_dim()) throw DimensionError("action dimension does not match the policy");
  if (obs.cols() != actions.cols()) throw DimensionError("observation and action counts differ");
}

}  // namespace

GaussianPolicy::GaussianPolicy(Mlp net, Eigen::VectorXd ls) : mean(std::move(net)), log_std(std::move(ls)) {
  if (log_std.size() != mean.output_dim()) throw DimensionError("log_std size must match the action dimension");
}

Eigen::VectorXd GaussianPolicy::params() const {
  Eigen::VectorXd p(param_count());
  p << mean.params(), log_std;
  return p;
}

void GaussianPolicy::set_params(const Eigen::VectorXd& p) {
  if (p.size() != param_count()) throw DimensionError("policy parameter vector has the wrong size");
  mean.set_params(p.head(mean.param_count()));
  log_std = p.tail(log_std.size());
}

double GaussianPolicy::logp(const Eigen::VectorXd& obs, const Eigen::VectorXd& action) const {
  return gaussian_logp(mean_action(obs), log_std, action);
}

Eigen::VectorXd GaussianPolicy::logp(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions) const {
  check_batch(*this, obs, actions);
  return logp_columns(mean.forward(obs), log_std, actions);
}

std::pair<Eigen::VectorXd, double> GaussianPolicy::sample(const Eigen::VectorXd& obs, std::mt19937_64& rng) const {
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::VectorXd mu = mean_action(obs);
  Eigen::VectorXd a(mu.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = mu[i] + std::exp(log_std[i]) * n(rng);
  return {a, gaussian_logp(mu, log_std, a)};
}

double GaussianPolicy::entropy() const {
  return log_std.sum() + 0.5 * static_cast<double>(log_std.size()) * (kLog2Pi + 1.0);
}

GaussianPolicy make_policy(int obs_dim, int act_dim, double log_std_init, std::mt19937_64& rng,
                           const std::vector<int>& hidden) {
  std::vector<int> dims{obs_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(act_dim);
  Mlp net(dims, Activation::Tanh);
  net.init(rng, 0.01);
  return GaussianPolicy(std::move(net), Eigen::VectorXd::Constant(act_dim, log_std_init));
}

Mlp make_value_function(int obs_dim, std::mt19937_64& rng, const std::vector<int>& hidden) {
  std::vector<int> dims{obs_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(1);
  Mlp net(dims, Activation::Relu);
  net.init(rng, 1.0);
  return net;
}

double gaussian_logp(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_std, const Eigen::VectorXd& a) {
  if (mu.size() != a.size() || log_std.size() != a.size()) throw DimensionError("Gaussian dimension mismatch");
  return logp_columns(Eigen::MatrixXd(mu), log_std, Eigen::MatrixXd(a))[0];
}

Eigen::VectorXd logp_gradient(const GaussianPolicy& pi, const Eigen::MatrixXd& obs, const Eigen::MatrixXd& actions,
                              const Eigen::VectorXd& weights) {
  check_batch(pi, obs, actions);
  if (weights.size() != obs.cols()) throw DimensionError("one weight per sample expected");
  Mlp::Cache cache;
  const Eigen::MatrixXd mu = pi.mean.forward(obs, cache);
  const Eigen::ArrayXd inv_var = (-2.0 * pi.log_std.array()).exp();
  const Eigen::ArrayXXd diff = (actions - mu).array();
  Eigen::MatrixXd g_mu = (diff.colwise() * inv_var).rowwise() * weights.transpose().array();
  Eigen::VectorXd grad(pi.param_count());
  grad.head(pi.mean.param_count()) = pi.mean.backward(cache, g_mu);
  const Eigen::ArrayXXd z2 = diff.square().colwise() * inv_var;
  grad.tail(pi.act_dim()) = ((z2 - 1.0).matrix() * weights);
  return grad;
}

std::vector<double> discounted_returns(const std::vector<double>& rewards, double gamma, double bootstrap) {
  std::vector<double> out(rewards.size());
  double acc = bootstrap;
  for (size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    out[i] = acc;
  }
  return out;
}

std::vector<double> gae(const std::vector<double>& rewards, const std::vector<double>& values, double gamma,
                        double lambda) {
  if (values.size() != rewards.size() + 1)
    throw DimensionError("gae needs one value per reward plus a bootstrap value");
  std::vector<double> adv(rewards.size());
  double acc = 0.0;
  for (size_t i = rewards.size(); i-- > 0;) {
    const double delta = rewards[i] + gamma * values[i + 1] - values[i];
    acc = delta + gamma * lambda * acc;
    adv[i] = acc;
  }
  return adv;
}

void compute_targets(const std::vector<double>& rewards, const Eigen::VectorXd& values,
                     const std::vector<Segment>& segments, double gamma, double lambda, Batch& batch) {
  const int n = static_cast<int>(rewards.size());
  if (values.size() != n) throw DimensionError("one value per step expected");
  batch.advantages.resize(n);
  batch.returns.resize(n);
  int covered = 0;
  for (const Segment& s : segments) {
    if (s.start != covered || s.length <= 0 || s.start + s.length > n)
      throw DimensionError("segments must partition the batch in order");
    covered += s.length;
    const std::vector<double> r(rewards.begin() + s.start, rewards.begin() + s.start + s.length);
    std::vector<double> v(values.data() + s.start, values.data() + s.start + s.length);
    v.push_back(s.bootstrap);
    const std::vector<double> a = gae(r, v, gamma, lambda);
    const std::vector<double> ret = discounted_returns(r, gamma, s.bootstrap);
    for (int i = 0; i < s.length; ++i) {
      batch.advantages[s.start + i] = a[i];
      batch.returns[s.start + i] = ret[i];
    }
  }
  if (covered != n) throw DimensionError("segments must cover the whole batch");
}

void normalize_advantages(Eigen::VectorXd& adv) {
  if (adv.size() == 0) return;
  const double mean = adv.mean();
  adv.array() -= mean;
  const double sd = std::sqrt(adv.squaredNorm() / static_cast<double>(adv.size()));
  adv /= sd + 1e-8;
}

double explained_variance(const Eigen::VectorXd& prediction, const Eigen::VectorXd& target) {
  const auto var = [](const Eigen::VectorXd& x) { return (x.array() - x.mean()).square().mean(); };
  const double vt = var(target);
  if (vt == 0.0) return 0.0;
  return 1.0 - var(target - prediction) / vt;
}

std::pair<double, Eigen::VectorXd> surrogate_loss(const GaussianPolicy& pi, const Batch& batch, double entropy_coef) {
  const double n = static_cast<double>(batch.size());
  const Eigen::VectorXd ratio = (pi.logp(batch.obs, batch.actions) - batch.logp).array().exp();
  const double loss = -(ratio.array() * batch.advantages.array()).sum() / n - entropy_coef * pi.entropy();
  const Eigen::VectorXd w = -(ratio.array() * batch.advantages.array()) / n;
  Eigen::VectorXd grad = logp_gradient(pi, batch.obs, batch.actions, w);
  grad.tail(pi.act_dim()).array() -= entropy_coef;
  return {loss, grad};
}

double surrogate_value(const GaussianPolicy& pi, const Batch& batch, double entropy_coef) {
  const Eigen::VectorXd ratio = (pi.logp(batch.obs, batch.actions) - batch.logp).array().exp();
  return -(ratio.array() * batch.advantages.array()).sum() / static_cast<double>(batch.size()) -
         entropy_coef * pi.entropy();
}

std::pair<double, Eigen::VectorXd> clipped_loss(const GaussianPolicy& pi, const Batch& batch,
                                                const std::vector<int>& indices, double clip, double entropy_coef) {
  const Eigen::MatrixXd obs = gather(batch.obs, indices);
  const Eigen::MatrixXd act = gather(batch.actions, indices);
  const Eigen::VectorXd old_logp = gather(batch.logp, indices);
  const Eigen::VectorXd adv = gather(batch.advantages, indices);
  const double n = static_cast<double>(indices.size());
  const Eigen::VectorXd ratio = (pi.logp(obs, act) - old_logp).array().exp();
  double objective = 0.0;
  Eigen::VectorXd w(ratio.size());
  for (Eigen::Index i = 0; i < ratio.size(); ++i) {
    const double unclipped = ratio[i] * adv[i];
    const double clipped = std::clamp(ratio[i], 1.0 - clip, 1.0 + clip) * adv[i];
    objective += std::min(unclipped, clipped);
    // The clipped branch is flat in theta.
    w[i] = unclipped <= clipped ? -unclipped / n : 0.0;
  }
  Eigen::VectorXd grad = logp_gradient(pi, obs, act, w);
  grad.tail(pi.act_dim()).array() -= entropy_coef;
  return {-objective / n - entropy_coef * pi.entropy(), grad};
}

double mean_kl(const GaussianPolicy& old_pi, const GaussianPolicy& new_pi, const Eigen::MatrixXd& obs) {
  if (old_pi.act_dim() != new_pi.act_dim()) throw DimensionError("policies have different action dimensions");
  const Eigen::MatrixXd mu_o = old_pi.mean.forward(obs);
  const Eigen::MatrixXd mu_n = new_pi.mean.forward(obs);
  const Eigen::ArrayXd var_o = (2.0 * old_pi.log_std.array()).exp();
  const Eigen::ArrayXd inv_var_n = (-2.0 * new_pi.log_std.array()).exp();
  const double per_state = (new_pi.log_std.array() - old_pi.log_std.array() + 0.5 * var_o * inv_var_n - 0.5).sum();
  const double mean_term =
      0.5 * ((mu_o - mu_n).array().square().colwise() * inv_var_n).sum() / static_cast<double>(obs.cols());
  return per_state + mean_term;
}

Eigen::VectorXd fisher_vector_product(const GaussianPolicy& pi, const Eigen::MatrixXd& obs, const Eigen::VectorXd& v,
                                      double damping) {
  if (v.size() != pi.param_count()) throw DimensionError("vector has the wrong parameter count");
  const int nm = pi.mean.param_count();
  Mlp::Cache cache;
  pi.mean.forward(obs, cache);
  const Eigen::ArrayXd inv_var = (-2.0 * pi.log_std.array()).exp();
  const Eigen::MatrixXd jv = pi.mean.jvp(cache, v.head(nm));
  const Eigen::MatrixXd weighted = (jv.array().colwise() * inv_var) / static_cast<double>(obs.cols());
  Eigen::VectorXd out(v.size());
  out.head(nm) = pi.mean.backward(cache, weighted);
  out.tail(pi.act_dim()) = 2.0 * v.tail(pi.act_dim());
  return out + damping * v;
}

CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& apply,
                            const Eigen::VectorXd& b, int iterations, double tolerance) {
  CgResult res;
  res.x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = b;
  double rr = r.squaredNorm();
  res.residual_norms.push_back(std::sqrt(rr));
  for (int i = 0; i < iterations && std::sqrt(rr) >= tolerance; ++i) {
    const Eigen::VectorXd ap = apply(p);
    const double alpha = rr / p.dot(ap);
    res.x += alpha * p;
    r -= alpha * ap;
    const double rr_new = r.squaredNorm();
    res.residual_norms.push_back(std::sqrt(rr_new));
    p = r + (rr_new / rr) * p;
    rr = rr_new;
    res.iterations = i + 1;
  }
  return res;
}

void validate(const TrpoConfig& c) {
  if (c.batch_steps <= 0) throw ConfigError("trpo batch_steps must be > 0");
  if (!(c.max_kl > 0.0)) throw ConfigError("trpo max_kl must be > 0");
  if (!(c.kl_slack >= 1.0)) throw ConfigError("trpo kl_slack must be >= 1");
  if (c.cg_iterations <= 0) throw ConfigError("trpo cg_iterations must be > 0");
  if (!(c.cg_damping >= 0.0)) throw ConfigError("trpo cg_damping must be >= 0");
  if (c.fvp_stride < 1) throw ConfigError("trpo fvp_stride must be >= 1");
  if (c.backtrack_steps <= 0) throw ConfigError("trpo backtrack_steps must be > 0");
  if (c.value_epochs <= 0 || c.value_minibatch <= 0 || !(c.value_lr > 0.0))
    throw ConfigError("trpo value settings must be positive");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0) || !(c.lambda > 0.0 && c.lambda <= 1.0))
    throw ConfigError("gamma and lambda must lie in (0, 1]");
  if (!(c.entropy_coef >= 0.0)) throw ConfigError("entropy_coef must be >= 0");
}

void validate(const PpoConfig& c) {
  if (c.batch_steps <= 0) throw ConfigError("ppo batch_steps must be > 0");
  if (!(c.clip > 0.0 && c.clip < 1.0)) throw ConfigError("ppo clip must lie in (0, 1)");
  if (c.epochs <= 0 || c.minibatch <= 0 || !(c.lr > 0.0)) throw ConfigError("ppo optimizer settings must be positive");
  if (c.value_epochs <= 0 || c.value_minibatch <= 0 || !(c.value_lr > 0.0))
    throw ConfigError("ppo value settings must be positive");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0) || !(c.lambda > 0.0 && c.lambda <= 1.0))
    throw ConfigError("gamma and lambda must lie in (0, 1]");
  if (!(c.entropy_coef >= 0.0)) throw ConfigError("entropy_coef must be >= 0");
}

UpdateStats trpo_update(GaussianPolicy& pi, const Batch& batch, const TrpoConfig& cfg) {
  UpdateStats st;
  const auto [loss, grad] = surrogate_loss(pi, batch, cfg.entropy_coef);
  st.loss_before = st.loss_after = loss;
  if (!std::isfinite(loss) || !grad.allFinite()) {
    st.skipped = true;
    st.note = "non-finite surrogate gradient";
    return st;
  }
  if (grad.squaredNorm() == 0.0) {
    st.note = "zero gradient";
    return st;
  }
  Eigen::MatrixXd fisher_obs;
  if (cfg.fvp_stride > 1) {
    const Eigen::Index n = (batch.obs.cols() + cfg.fvp_stride - 1) / cfg.fvp_stride;
    fisher_obs.resize(batch.obs.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) fisher_obs.col(i) = batch.obs.col(i * cfg.fvp_stride);
  }
  const Eigen::MatrixXd& fobs = cfg.fvp_stride > 1 ? fisher_obs : batch.obs;
  const auto fvp = [&](const Eigen::VectorXd& v) { return fisher_vector_product(pi, fobs, v, cfg.cg_damping); };
  const CgResult cg = conjugate_gradient(fvp, -grad, cfg.cg_iterations);
  const double curvature = cg.x.dot(fvp(cg.x));
  if (!(curvature > 0.0) || !cg.x.allFinite()) {
    st.skipped = true;
    st.note = "non-positive curvature along the step";
    return st;
  }
  const Eigen::VectorXd full_step = std::sqrt(2.0 * cfg.max_kl / curvature) * cg.x;
  const GaussianPolicy old = pi;
  const Eigen::VectorXd theta = pi.params();
  double frac = 1.0;
  for (int k = 0; k < cfg.backtrack_steps; ++k, frac *= 0.5) {
    pi.set_params(theta + frac * full_step);
    const double new_loss = surrogate_value(pi, batch, cfg.entropy_coef);
    const double kl = mean_kl(old, pi, batch.obs);
    if (std::isfinite(new_loss) && kl <= cfg.kl_slack * cfg.max_kl && new_loss < loss) {
      st.accepted = true;
      st.loss_after = new_loss;
      st.kl = kl;
      st.backtracks = k;
      return st;
    }
  }
  pi = old;
  st.backtracks = cfg.backtrack_steps;
  st.note = "line search failed";
  return st;
}

UpdateStats ppo_update(GaussianPolicy& pi, Adam& adam, const Batch& batch, const PpoConfig& cfg,
                       std::mt19937_64& rng) {
  UpdateStats st;
  const GaussianPolicy old = pi;
  std::vector<int> all(batch.size());
  std::iota(all.begin(), all.end(), 0);
  st.loss_before = clipped_loss(pi, batch, all, cfg.clip, cfg.entropy_coef).first;
  Eigen::VectorXd theta = pi.params();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = shuffled(batch.size(), rng);
    for (int start = 0; start < batch.size(); start += cfg.minibatch) {
      const int end = std::min(batch.size(), start + cfg.minibatch);
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      const auto [loss, grad] = clipped_loss(pi, batch, idx, cfg.clip, cfg.entropy_coef);
      if (!std::isfinite(loss) || !grad.allFinite()) {
        pi = old;
        st.skipped = true;
        st.note = "non-finite clipped-loss gradient";
        return st;
      }
      adam.step(theta, grad);
      pi.set_params(theta);
    }
  }
  st.accepted = true;
  st.loss_after = clipped_loss(pi, batch, all, cfg.clip, cfg.entropy_coef).first;
  st.kl = mean_kl(old, pi, batch.obs);
  return st;
}

std::pair<double, Eigen::VectorXd> value_loss(const Mlp& v, const Eigen::MatrixXd& obs, const Eigen::VectorXd& target) {
  if (target.size() != obs.cols()) throw DimensionError("one value target per observation expected");
  if (v.output_dim() != 1) throw DimensionError("value network must have one output");
  Mlp::Cache cache;
  const Eigen::MatrixXd pred = v.forward(obs, cache);
  const Eigen::RowVectorXd err = pred.row(0) - target.transpose();
  const double n = static_cast<double>(target.size());
  const Eigen::MatrixXd g = (2.0 / n) * err;
  return {err.squaredNorm() / n, v.backward(cache, g)};
}

ValueFitStats value_fit(Mlp& v, Adam& adam, const Eigen::MatrixXd& obs, const Eigen::VectorXd& target, int epochs,
                        int minibatch, std::mt19937_64& rng) {
  ValueFitStats st;
  const auto full_loss = [&]() {
    const Eigen::RowVectorXd err = v.forward(obs).row(0) - target.transpose();
    return err.squaredNorm() / static_cast<double>(target.size());
  };
  st.loss_before = full_loss();
  if (!std::isfinite(st.loss_before)) throw NumericalError("value loss is not finite");
  Eigen::VectorXd phi = v.params();
  const int n = static_cast<int>(obs.cols());
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<int> order = shuffled(n, rng);
    for (int start = 0; start < n; start += minibatch) {
      const int end = std::min(n, start + minibatch);
      const std::vector<int> idx(order.begin() + start, order.begin() + end);
      const auto [loss, grad] = value_loss(v, gather(obs, idx), gather(target, idx));
      if (!std::isfinite(loss) || !grad.allFinite()) throw NumericalError("value gradient is not finite");
      adam.step(phi, grad);
      v.set_params(phi);
    }
    st.epoch_loss.push_back(full_loss());
  }
  return st;
}

}  // namespace pushrec
