#pragma once

#include <cmath>

#include "pushrec/common.hpp"

namespace pushrec {

/// Linear inverted pendulum parameters.
struct CpParams {
  double com_height = 1.1;  // m
  double gravity = 9.81;    // m/s^2
  double mass = 137.0;      // kg

  double time_constant() const { return std::sqrt(com_height / gravity); }
  void check() const {
    if (!(com_height > 0.0 && gravity > 0.0 && mass > 0.0))
      throw ConfigError("capture point parameters must be strictly positive");
  }
};

inline double capture_point(double x_com, double v_com, const CpParams& p) {
  return x_com + v_com * std::sqrt(p.com_height / p.gravity);
}

/// Largest impulse a standing robot absorbs without stepping, given the
/// distance from CoM to the support border in the push direction.
inline double max_rejectable_impulse(const CpParams& p, double delta_cop) {
  if (delta_cop < 0.0) throw ConfigError("delta_cop must be non-negative");
  return p.mass * std::sqrt(p.gravity / p.com_height) * delta_cop;
}

/// Horizontal CoM velocity whose capture point lands on `support_center`.
inline double desired_com_velocity(double x_com, double support_center, const CpParams& p) {
  return (support_center - x_com) * std::sqrt(p.gravity / p.com_height);
}

}  // namespace pushrec
