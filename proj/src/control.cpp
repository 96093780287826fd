#include "pushrec/control.hpp"

#include <cmath>
#include <numbers>

namespace pushrec {

Eigen::VectorXd pd_torques(const ModelSpec& model, const Eigen::VectorXd& q_target, const Eigen::VectorXd& q,
                           const Eigen::VectorXd& qd) {
  const int nj = model.joint_count();
  if (q_target.size() != nj || q.size() != nj || qd.size() != nj)
    throw DimensionError("pd_torques: expected " + std::to_string(nj) + " joints");
  Eigen::VectorXd u(nj);
  for (int j = 0; j < nj; ++j)
    u[j] = pd_torque(q_target[j], q[j], qd[j], model.joints[j].pd_gains, model.joints[j].torque_limit);
  return u;
}

FilterState FilterState::make(double cutoff_hz, double sample_hz) {
  if (!(cutoff_hz > 0.0) || !(sample_hz > 0.0)) throw ConfigError("filter frequencies must be positive");
  FilterState fs;
  fs.cutoff_hz = cutoff_hz;
  fs.sample_hz = sample_hz;
  fs.a = std::exp(-2.0 * std::numbers::pi * cutoff_hz / sample_hz);
  return fs;
}

Eigen::VectorXd filter_step(FilterState& fs, const Eigen::VectorXd& x) {
  if (!fs.initialized) {
    fs.y_prev = x;
    fs.initialized = true;
    return x;
  }
  if (x.size() != fs.y_prev.size())
    throw DimensionError("filter_step: sample has " + std::to_string(x.size()) + " channels, state has " +
                         std::to_string(fs.y_prev.size()));
  fs.y_prev = fs.a * fs.y_prev + (1.0 - fs.a) * x;
  return fs.y_prev;
}

}  // namespace pushrec
