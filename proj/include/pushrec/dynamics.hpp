#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "pushrec/common.hpp"
#include "pushrec/model.hpp"

namespace pushrec {

inline constexpr int kMaxLinks = 16;

struct ContactState {
  bool active = false;
  Vec2 force{0.0, 0.0};  // world frame, force on the robot
};

struct SimState {
  VecN q;   // base x, base z, base angle (floating only), joint angles
  VecN qd;
  double t = 0.0;
  std::int64_t tick = 0;
  std::vector<ContactState> contacts;
};

struct ExternalForce {
  int link = 0;
  Vec2 point{0.0, 0.0};  // link frame
  Vec2 force{0.0, 0.0};  // world frame
  double t_start = 0.0;
  double t_end = 0.0;

  bool active_at(double t) const { return t >= t_start - 1e-9 && t < t_end - 1e-9; }
  Vec2 impulse() const { return force * (t_end - t_start); }
};

/// Penalty ground model: normal spring-damper plus damping friction capped by
/// the Coulomb cone.
struct ContactParams {
  double normal_stiffness = 1.3e5;  // N/m
  double normal_damping = 3e3;      // N s/m
  double tangential_damping = 3e3;  // N s/m
  double friction = 1.0;
};

struct LinkFrame {
  Vec2 origin{0.0, 0.0};
  double angle = 0.0;
  Vec2 com{0.0, 0.0};
  Vec2 com_velocity{0.0, 0.0};
  double angular_velocity = 0.0;
};

struct Kinematics {
  std::vector<LinkFrame> links;
  std::vector<Vec2> contact_position;
  std::vector<Vec2> contact_velocity;
};

struct ComState {
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
};

/// Raised when the integrator produces a non-finite state.
class IntegrationFailure : public std::runtime_error {
 public:
  IntegrationFailure(const std::string& what, SimState last_valid)
      : std::runtime_error(what), last_valid_(std::move(last_valid)) {}
  const SimState& last_valid() const { return last_valid_; }

 private:
  SimState last_valid_;
};

/// Planar rigid-body tree dynamics.  Stateless after construction; safe to
/// share between threads.
class Simulator {
 public:
  explicit Simulator(ModelSpec model, ContactParams contact = {});

  const ModelSpec& model() const { return model_; }
  const ContactParams& contact_params() const { return contact_; }
  int dof() const { return model_.dof(); }

  Kinematics forward_kinematics(const VecN& q) const;
  Kinematics forward_kinematics(const VecN& q, const VecN& qd) const;

  MatN mass_matrix(const VecN& q) const;
  /// Gravity plus velocity-product terms: M qdd = tau + J^T f - h.
  VecN bias_forces(const VecN& q, const VecN& qd) const;
  /// Explicit penalty law evaluated at (q, qd), one world force per contact.
  std::vector<Vec2> contact_forces(const VecN& q, const VecN& qd) const;
  /// Generalized force of a world-frame force applied at a point on a link.
  VecN generalized_force(const VecN& q, int link, const Vec2& point, const Vec2& force) const;

  /// One semi-implicit Euler step.  Contact damping is treated implicitly in
  /// the velocity update; joint torques must already respect torque limits.
  SimState step(const SimState& state, const VecN& joint_torques, std::span<const ExternalForce> external,
                double dt) const;

  /// Step with every joint PD-driven towards `q_target` using the model
  /// gains: u = Kp (q_target - q) - Kd qd', saturated at the torque limit,
  /// where qd' is the end-of-step joint rate.  Evaluating the damping term at
  /// qd' keeps stiff gains stable at the control period.  The torques actually
  /// applied are written to `applied_torques` when given.
  SimState step_pd(const SimState& state, const VecN& q_target, std::span<const ExternalForce> external, double dt,
                   VecN* applied_torques = nullptr) const;

  ComState com_state(const VecN& q, const VecN& qd) const;
  double kinetic_energy(const VecN& q, const VecN& qd) const;
  double potential_energy(const VecN& q) const;

  /// Nominal pose, zero velocity.  For a floating base the base height puts
  /// the soles at `sole_height`.
  SimState nominal_state(double sole_height = 0.0) const;
  /// Base height offset at which the model rests in static equilibrium on its
  /// contact springs when standing at `q` (negative: penetration).
  double static_penetration() const;

  VecN joint_angles(const SimState& s) const { return s.q.tail(model_.joint_count()); }
  VecN joint_velocities(const SimState& s) const { return s.qd.tail(model_.joint_count()); }

 private:
  struct LinkKin {
    Vec2 origin;
    double angle;
    double omega;
    Vec2 origin_bias;  // origin acceleration at zero qdd
    Mat2N jo;          // origin linear jacobian
    Row1N jw;          // angular jacobian
    Vec2 com;
    Mat2N jc;
    Vec2 com_bias;
  };
  using LinkKinArray = std::array<LinkKin, kMaxLinks>;

  void compute(const VecN& q, const VecN* qd, LinkKinArray& out) const;
  void point_jacobian(const LinkKin& lk, const Vec2& local, Vec2& pos, Mat2N& jac) const;
  SimState advance(const SimState& state, const VecN& joint_torques, const VecN* q_target,
                   std::span<const ExternalForce> external, double dt, VecN* applied_torques) const;
  void apply_joint_stops(const MatN& mass, VecN& qd, const std::array<bool, kMaxDof>& stopped) const;
  void check_dims(const VecN& q) const;

  ModelSpec model_;
  ContactParams contact_;
  std::vector<int> order_;
  std::vector<int> parent_joint_;
};

}  // namespace pushrec
