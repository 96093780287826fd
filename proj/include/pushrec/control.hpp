#pragma once

#include <Eigen/Core>

#include <algorithm>

#include "pushrec/model.hpp"

namespace pushrec {

/// u = Kp (q_target - q) - Kd qd, saturated at +-torque_limit.
inline double pd_torque(double q_target, double q_measured, double qd_measured, const PdGains& gains,
                        double torque_limit) {
  const double u = gains.kp * (q_target - q_measured) - gains.kd * qd_measured;
  return std::clamp(u, -torque_limit, torque_limit);
}

/// Vectorised PD over every joint of a model.
Eigen::VectorXd pd_torques(const ModelSpec& model, const Eigen::VectorXd& q_target, const Eigen::VectorXd& q,
                           const Eigen::VectorXd& qd);

/// First-order low-pass y = a*y_prev + (1-a)*x with a = exp(-2*pi*fc/fs),
/// one independent channel per entry.
struct FilterState {
  Eigen::VectorXd y_prev;
  double cutoff_hz = 10.0;
  double sample_hz = 500.0;
  double a = 0.0;
  bool initialized = false;

  static FilterState make(double cutoff_hz, double sample_hz);
};

/// Returns the filtered sample and advances `fs`.  The first call seeds the
/// state with `x` so there is no start-up transient.
Eigen::VectorXd filter_step(FilterState& fs, const Eigen::VectorXd& x);

}  // namespace pushrec
