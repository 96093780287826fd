#pragma once

#include <random>

#include "pushrec/dynamics.hpp"
#include "pushrec/model.hpp"

namespace pushrec::testing {

// Uniform rod hanging from a fixed pivot: base link welded to the world,
// one revolute joint, angle 0 pointing straight down.
inline ModelSpec pendulum_model(double mass = 1.0, double length = 1.0, double gravity = 9.81) {
  ModelSpec m;
  m.floating_base = false;
  m.gravity = gravity;
  LinkSpec base;
  base.name = "mount";
  base.mass = 1.0;
  base.inertia = 1.0;
  base.length = 0.1;
  base.com_offset = 0.0;
  m.links.push_back(base);
  LinkSpec rod;
  rod.name = "rod";
  rod.mass = mass;
  rod.inertia = mass * length * length / 12.0;
  rod.length = length;
  rod.com_offset = 0.5 * length;
  rod.axis = {0.0, -1.0};
  rod.parent = 0;
  m.links.push_back(rod);
  JointSpec j;
  j.name = "pivot";
  j.parent_link = 0;
  j.child_link = 1;
  j.angle_limits = {-100.0, 100.0};
  j.velocity_limit = 100.0;
  j.torque_limit = 1e6;
  j.pd_gains = {1.0, 0.0};
  m.joints.push_back(j);
  m.base_link = 0;
  m.torso_link = 0;
  validate(m);
  return m;
}

// Free-floating single rigid body, no joints, no contacts.
inline ModelSpec single_body_model() {
  ModelSpec m;
  LinkSpec body;
  body.name = "body";
  body.mass = 3.0;
  body.inertia = 0.2;
  body.length = 0.4;
  body.com_offset = 0.3;
  body.axis = {0.6, 0.8};
  m.links.push_back(body);
  validate(m);
  return m;
}

// Random configuration within joint limits and a random floating base pose.
inline VecN random_configuration(const ModelSpec& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecN q(m.dof());
  int k = 0;
  if (m.floating_base) {
    q[k++] = 2.0 * u(rng);
    q[k++] = 1.0 + u(rng);
    q[k++] = 3.0 * u(rng);
  }
  for (const auto& j : m.joints) {
    std::uniform_real_distribution<double> a(j.angle_limits[0], j.angle_limits[1]);
    q[k++] = a(rng);
  }
  return q;
}

inline VecN random_velocity(const ModelSpec& m, std::mt19937_64& rng, double scale = 2.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  VecN qd(m.dof());
  for (int i = 0; i < m.dof(); ++i) qd[i] = u(rng);
  return qd;
}

}  // namespace pushrec::testing
