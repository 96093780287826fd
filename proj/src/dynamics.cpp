#include "pushrec/dynamics.hpp"

#include "pushrec/control.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include <cmath>
#include <limits>

namespace pushrec {

Simulator::Simulator(ModelSpec model, ContactParams contact) : model_(std::move(model)), contact_(contact) {
  validate(model_);
  if (static_cast<int>(model_.links.size()) > kMaxLinks)
    throw ModelError("model has more than " + std::to_string(kMaxLinks) + " links");
  order_ = traversal_order(model_);
  parent_joint_.resize(model_.links.size());
  for (int l = 0; l < static_cast<int>(model_.links.size()); ++l) parent_joint_[l] = model_.parent_joint(l);
}

void Simulator::check_dims(const VecN& q) const {
  if (q.size() != dof())
    throw DimensionError("state dimension " + std::to_string(q.size()) + " does not match model dof " +
                         std::to_string(dof()));
}

void Simulator::compute(const VecN& q, const VecN* qd, LinkKinArray& out) const {
  const int n = dof();
  const int nb = model_.base_dof();
  for (const int link : order_) {
    LinkKin& lk = out[link];
    const int pj = parent_joint_[link];
    if (pj < 0) {
      lk.jo = Mat2N::Zero(2, n);
      lk.jw = Row1N::Zero(1, n);
      lk.origin_bias.setZero();
      if (model_.floating_base) {
        lk.origin = {q[0], q[1]};
        lk.angle = q[2];
        lk.jo(0, 0) = 1.0;
        lk.jo(1, 1) = 1.0;
        lk.jw(0, 2) = 1.0;
        lk.omega = qd ? (*qd)[2] : 0.0;
      } else {
        lk.origin.setZero();
        lk.angle = 0.0;
        lk.omega = 0.0;
      }
    } else {
      const JointSpec& joint = model_.joints[pj];
      const LinkKin& parent = out[joint.parent_link];
      const Vec2 r = rotate(parent.angle, joint.origin);
      lk.origin = parent.origin + r;
      lk.jo = parent.jo + perp(r) * parent.jw;
      lk.angle = parent.angle + q[nb + pj];
      lk.jw = parent.jw;
      lk.jw(0, nb + pj) += 1.0;
      lk.omega = parent.omega + (qd ? (*qd)[nb + pj] : 0.0);
      lk.origin_bias = parent.origin_bias - parent.omega * parent.omega * r;
    }
    const Vec2 rc = rotate(lk.angle, model_.links[link].com_local());
    lk.com = lk.origin + rc;
    lk.jc = lk.jo + perp(rc) * lk.jw;
    lk.com_bias = lk.origin_bias - lk.omega * lk.omega * rc;
  }
}

void Simulator::point_jacobian(const LinkKin& lk, const Vec2& local, Vec2& pos, Mat2N& jac) const {
  const Vec2 r = rotate(lk.angle, local);
  pos = lk.origin + r;
  jac = lk.jo + perp(r) * lk.jw;
}

Kinematics Simulator::forward_kinematics(const VecN& q) const {
  return forward_kinematics(q, VecN::Zero(dof()));
}

Kinematics Simulator::forward_kinematics(const VecN& q, const VecN& qd) const {
  check_dims(q);
  check_dims(qd);
  LinkKinArray kin;
  compute(q, &qd, kin);
  Kinematics out;
  out.links.resize(model_.links.size());
  for (int l = 0; l < static_cast<int>(model_.links.size()); ++l) {
    const LinkKin& lk = kin[l];
    out.links[l] = {lk.origin, lk.angle, lk.com, lk.jc * qd, lk.omega};
  }
  for (const auto& c : model_.contacts) {
    Vec2 pos;
    Mat2N jac;
    point_jacobian(kin[c.link], c.offset, pos, jac);
    out.contact_position.push_back(pos);
    out.contact_velocity.push_back(jac * qd);
  }
  return out;
}

MatN Simulator::mass_matrix(const VecN& q) const {
  check_dims(q);
  LinkKinArray kin;
  compute(q, nullptr, kin);
  const int n = dof();
  MatN m = MatN::Zero(n, n);
  for (int l = 0; l < static_cast<int>(model_.links.size()); ++l) {
    const LinkSpec& spec = model_.links[l];
    m.noalias() += spec.mass * kin[l].jc.transpose() * kin[l].jc;
    m.noalias() += spec.inertia * kin[l].jw.transpose() * kin[l].jw;
  }
  return m;
}

VecN Simulator::bias_forces(const VecN& q, const VecN& qd) const {
  check_dims(q);
  check_dims(qd);
  LinkKinArray kin;
  compute(q, &qd, kin);
  VecN h = VecN::Zero(dof());
  const Vec2 g{0.0, model_.gravity};
  for (int l = 0; l < static_cast<int>(model_.links.size()); ++l)
    h.noalias() += kin[l].jc.transpose() * (model_.links[l].mass * (kin[l].com_bias + g));
  return h;
}

std::vector<Vec2> Simulator::contact_forces(const VecN& q, const VecN& qd) const {
  const Kinematics kin = forward_kinematics(q, qd);
  std::vector<Vec2> out;
  for (std::size_t c = 0; c < model_.contacts.size(); ++c) {
    const Vec2& p = kin.contact_position[c];
    const Vec2& v = kin.contact_velocity[c];
    Vec2 f{0.0, 0.0};
    if (p.y() < 0.0) {
      f.y() = std::max(0.0, -contact_.normal_stiffness * p.y() - contact_.normal_damping * v.y());
      const double cap = contact_.friction * f.y();
      f.x() = std::clamp(-contact_.tangential_damping * v.x(), -cap, cap);
    }
    out.push_back(f);
  }
  return out;
}

VecN Simulator::generalized_force(const VecN& q, int link, const Vec2& point, const Vec2& force) const {
  check_dims(q);
  LinkKinArray kin;
  compute(q, nullptr, kin);
  Vec2 pos;
  Mat2N jac;
  point_jacobian(kin[link], point, pos, jac);
  return jac.transpose() * force;
}

namespace {

enum class Normal { Off, Implicit };
enum class Tangent { Off, Implicit, Saturated };

struct ContactWork {
  Vec2 pos;
  Mat2N jac;
  double spring = 0.0;
  Normal normal = Normal::Off;
  Tangent tangent = Tangent::Off;
  double sign = 0.0;  // direction of the tangential force when saturated
  Vec2 force{0.0, 0.0};
  int switches = 0;
};

enum class Drive { Fixed, Free, Saturated };

bool finite(const VecN& v) { return v.allFinite(); }

}  // namespace

SimState Simulator::step(const SimState& state, const VecN& joint_torques, std::span<const ExternalForce> external,
                         double dt) const {
  const int nj = model_.joint_count();
  if (joint_torques.size() != nj)
    throw DimensionError("torque vector has " + std::to_string(joint_torques.size()) + " entries, expected " +
                         std::to_string(nj));
  for (int j = 0; j < nj; ++j)
    if (!(std::abs(joint_torques[j]) <= model_.joints[j].torque_limit * (1.0 + 1e-12)))
      throw std::invalid_argument("torque on joint '" + model_.joints[j].name + "' exceeds its limit");
  return advance(state, joint_torques, nullptr, external, dt, nullptr);
}

SimState Simulator::step_pd(const SimState& state, const VecN& q_target, std::span<const ExternalForce> external,
                            double dt, VecN* applied_torques) const {
  const int nj = model_.joint_count();
  if (q_target.size() != nj)
    throw DimensionError("target vector has " + std::to_string(q_target.size()) + " entries, expected " +
                         std::to_string(nj));
  return advance(state, VecN::Zero(nj), &q_target, external, dt, applied_torques);
}

SimState Simulator::advance(const SimState& state, const VecN& joint_torques, const VecN* q_target,
                            std::span<const ExternalForce> external, double dt, VecN* applied_torques) const {
  check_dims(state.q);
  check_dims(state.qd);
  const int n = dof();
  const int nb = model_.base_dof();
  const int nj = model_.joint_count();

  LinkKinArray kin;
  compute(state.q, &state.qd, kin);

  MatN mass = MatN::Zero(n, n);
  VecN tau = VecN::Zero(n);
  const Vec2 g{0.0, model_.gravity};
  for (int l = 0; l < static_cast<int>(model_.links.size()); ++l) {
    const LinkSpec& spec = model_.links[l];
    mass.noalias() += spec.mass * kin[l].jc.transpose() * kin[l].jc;
    mass.noalias() += spec.inertia * kin[l].jw.transpose() * kin[l].jw;
    tau.noalias() -= kin[l].jc.transpose() * (spec.mass * (kin[l].com_bias + g));
  }
  tau.tail(nj) += joint_torques;

  // PD drive: the spring term uses the current angle, the damping term the
  // end-of-step rate; saturated joints apply the limit torque.
  std::array<Drive, kMaxDof> drive;
  std::array<double, kMaxDof> spring_torque{};
  drive.fill(Drive::Fixed);
  if (q_target) {
    for (int j = 0; j < nj; ++j) {
      const JointSpec& js = model_.joints[j];
      spring_torque[j] = js.pd_gains.kp * ((*q_target)[j] - state.q[nb + j]);
      const double u = pd_torque((*q_target)[j], state.q[nb + j], state.qd[nb + j], js.pd_gains, js.torque_limit);
      drive[j] = std::abs(u) < js.torque_limit ? Drive::Free : Drive::Saturated;
    }
  }
  std::array<double, kMaxDof> drive_sign{};
  if (q_target) {
    for (int j = 0; j < nj; ++j) {
      const JointSpec& js = model_.joints[j];
      drive_sign[j] = spring_torque[j] - js.pd_gains.kd * state.qd[nb + j] >= 0.0 ? 1.0 : -1.0;
    }
  }
  for (const ExternalForce& ext : external) {
    if (!ext.active_at(state.t)) continue;
    Vec2 pos;
    Mat2N jac;
    point_jacobian(kin[ext.link], ext.point, pos, jac);
    tau.noalias() += jac.transpose() * ext.force;
  }

  // Contact: spring explicit in position, damping implicit in the new velocity.
  const int nc = static_cast<int>(model_.contacts.size());
  std::vector<ContactWork> work(nc);
  const double kn = contact_.normal_stiffness;
  const double dn = contact_.normal_damping;
  const double dtan = contact_.tangential_damping;
  const double mu = contact_.friction;
  for (int c = 0; c < nc; ++c) {
    ContactWork& w = work[c];
    point_jacobian(kin[model_.contacts[c].link], model_.contacts[c].offset, w.pos, w.jac);
    if (w.pos.y() >= 0.0) continue;
    const Vec2 v = w.jac * state.qd;
    w.spring = -kn * w.pos.y();
    const double fn = w.spring - dn * v.y();
    if (fn <= 0.0) continue;
    w.normal = Normal::Implicit;
    const double ft = -dtan * v.x();
    if (std::abs(ft) <= mu * fn) {
      w.tangent = Tangent::Implicit;
    } else {
      w.tangent = Tangent::Saturated;
      w.sign = ft > 0.0 ? 1.0 : -1.0;
    }
  }

  const VecN momentum = mass * state.qd;
  VecN fixed_torque = VecN::Zero(nj);
  auto solve = [&]() {
    MatN lhs = mass;
    VecN rhs = momentum + dt * tau;
    bool symmetric = true;
    for (const ContactWork& w : work) {
      if (w.normal == Normal::Off) continue;
      const auto jz = w.jac.row(1);
      const auto jx = w.jac.row(0);
      lhs.noalias() += (dt * dn) * jz.transpose() * jz;
      rhs.noalias() += (dt * w.spring) * jz.transpose();
      if (w.tangent == Tangent::Implicit) {
        lhs.noalias() += (dt * dtan) * jx.transpose() * jx;
      } else if (w.tangent == Tangent::Saturated) {
        // f_x = s mu (spring - dn v_z), linear in the new velocity.
        const double smu = w.sign * mu;
        rhs.noalias() += (dt * smu * w.spring) * jx.transpose();
        lhs.noalias() += (dt * smu * dn) * jx.transpose() * jz;
        symmetric = false;
      }
    }
    for (int j = 0; j < nj; ++j) {
      const JointSpec& js = model_.joints[j];
      if (drive[j] == Drive::Free) {
        lhs(nb + j, nb + j) += dt * js.pd_gains.kd;
        rhs[nb + j] += dt * spring_torque[j];
      } else if (drive[j] == Drive::Saturated) {
        rhs[nb + j] += dt * drive_sign[j] * js.torque_limit;
      } else {
        rhs[nb + j] += dt * fixed_torque[j];
      }
    }
    return symmetric ? VecN(lhs.llt().solve(rhs)) : VecN(lhs.partialPivLu().solve(rhs));
  };

  // Mode changes back into a previous state are capped per item so the
  // active set cannot cycle.
  constexpr int kMaxSwitches = 3;
  constexpr int kMaxActiveSetIterations = 20;

  // Returns true when some contact changed mode.
  auto update_contacts = [&](const VecN& qd) {
    bool changed = false;
    for (ContactWork& w : work) {
      if (w.normal == Normal::Off) {
        // A penetrating point pushed back into the ground by the new velocity rejoins.
        const Vec2 v = w.jac * qd;
        const double fn = w.spring - dn * v.y();
        if (w.switches < kMaxSwitches && w.spring > 0.0 && fn > 0.0) {
          w.normal = Normal::Implicit;
          w.tangent = std::abs(dtan * v.x()) <= mu * fn ? Tangent::Implicit : Tangent::Saturated;
          w.sign = v.x() > 0.0 ? -1.0 : 1.0;
          changed = true;
          ++w.switches;
        }
        continue;
      }
      const Vec2 v = w.jac * qd;
      w.force.y() = w.spring - dn * v.y();
      if (w.force.y() < 0.0) {
        w.normal = Normal::Off;
        w.tangent = Tangent::Off;
        w.force.setZero();
        changed = true;
        ++w.switches;
        continue;
      }
      const double cap = mu * w.force.y();
      if (w.tangent == Tangent::Implicit) {
        w.force.x() = -dtan * v.x();
        if (std::abs(w.force.x()) > cap) {
          w.tangent = Tangent::Saturated;
          w.sign = w.force.x() > 0.0 ? 1.0 : -1.0;
          changed = true;
          ++w.switches;
        }
      } else {
        w.force.x() = w.sign * cap;
        // Back to sticking when damping alone would stay inside the cone.
        if (w.switches < kMaxSwitches && std::abs(dtan * v.x()) < cap) {
          w.tangent = Tangent::Implicit;
          changed = true;
          ++w.switches;
        }
      }
    }
    return changed;
  };

  // Returns the new velocity; modes left by a non-converged loop are frozen
  // for one last solve so the contact forces match the integrated velocity.
  auto run_active_set = [&]() {
    std::array<int, kMaxDof> switches{};
    VecN qd(n);
    bool converged = false;
    for (int iter = 0; iter < kMaxActiveSetIterations && !converged; ++iter) {
      qd = solve();
      bool changed = false;
      for (int j = 0; j < nj; ++j) {
        if (drive[j] == Drive::Fixed || switches[j] >= kMaxSwitches) continue;
        const JointSpec& js = model_.joints[j];
        const double u = spring_torque[j] - js.pd_gains.kd * qd[nb + j];
        if (drive[j] == Drive::Free && std::abs(u) > js.torque_limit) {
          drive[j] = Drive::Saturated;
          drive_sign[j] = u > 0.0 ? 1.0 : -1.0;
          ++switches[j];
          changed = true;
        } else if (drive[j] == Drive::Saturated && drive_sign[j] * u < js.torque_limit) {
          drive[j] = Drive::Free;
          ++switches[j];
          changed = true;
        }
      }
      changed = update_contacts(qd) || changed;
      converged = !changed;
    }
    if (!converged) {
      for (int j = 0; j < nj; ++j) {
        const JointSpec& js = model_.joints[j];
        if (drive[j] == Drive::Free)
          fixed_torque[j] =
              std::clamp(spring_torque[j] - js.pd_gains.kd * qd[nb + j], -js.torque_limit, js.torque_limit);
        else if (drive[j] == Drive::Saturated)
          fixed_torque[j] = drive_sign[j] * js.torque_limit;
        if (drive[j] != Drive::Fixed) drive[j] = Drive::Fixed;
      }
      qd = solve();
      for (ContactWork& w : work) {
        if (w.normal == Normal::Off) continue;
        const Vec2 v = w.jac * qd;
        w.force.y() = w.spring - dn * v.y();
        w.force.x() = w.tangent == Tangent::Implicit ? -dtan * v.x() : w.sign * mu * w.force.y();
      }
    }
    return qd;
  };

  VecN qd_new = run_active_set();
  VecN applied = joint_torques;
  if (q_target) {
    for (int j = 0; j < nj; ++j) {
      const JointSpec& js = model_.joints[j];
      if (drive[j] == Drive::Free)
        applied[j] =
            std::clamp(spring_torque[j] - js.pd_gains.kd * qd_new[nb + j], -js.torque_limit, js.torque_limit);
      else if (drive[j] == Drive::Saturated)
        applied[j] = drive_sign[j] * js.torque_limit;
      else
        applied[j] = fixed_torque[j];
    }
  }
  if (applied_torques) *applied_torques = applied;

  SimState next;
  next.qd = qd_new;
  next.q = state.q + dt * qd_new;
  std::array<bool, kMaxDof> stopped{};
  bool any_stop = false;
  for (int j = 0; j < nj; ++j) {
    const auto& lim = model_.joints[j].angle_limits;
    double& angle = next.q[nb + j];
    if (angle < lim[0] || angle > lim[1]) {
      angle = std::clamp(angle, lim[0], lim[1]);
      stopped[nb + j] = true;
      any_stop = true;
    }
  }
  if (any_stop) apply_joint_stops(mass, next.qd, stopped);
  next.contacts.resize(nc);
  for (int c = 0; c < nc; ++c) {
    next.contacts[c].active = work[c].normal != Normal::Off;
    next.contacts[c].force = next.contacts[c].active ? work[c].force : Vec2::Zero();
    if (next.contacts[c].force.y() < 0.0) next.contacts[c].force.y() = 0.0;
  }
  if (nb > 0) {
    // Linear momentum follows the applied forces exactly: base x and z are
    // cyclic, so the residual of m dv_com = F dt is removed along them.
    double m = 0.0;
    Vec2 p_old = Vec2::Zero();
    for (int l = 0; l < static_cast<int>(model_.links.size()); ++l) {
      m += model_.links[l].mass;
      p_old.noalias() += model_.links[l].mass * (kin[l].jc * state.qd);
    }
    Vec2 force{0.0, -m * model_.gravity};
    for (const ContactWork& w : work)
      if (w.normal != Normal::Off) force += w.force;
    for (const ExternalForce& ext : external)
      if (ext.active_at(state.t)) force += ext.force;
    const Vec2 dv = (p_old + dt * force) / m - com_state(next.q, next.qd).velocity;
    next.qd.head<2>() += dv;
    next.q.head<2>() += dt * dv;
  }
  next.t = state.t + dt;
  next.tick = state.tick + 1;
  if (!finite(next.q) || !finite(next.qd)) throw IntegrationFailure("non-finite state at t=" + std::to_string(next.t), state);
  return next;
}

void Simulator::apply_joint_stops(const MatN& mass, VecN& qd, const std::array<bool, kMaxDof>& stopped) const {
  // Stopped rates go to zero; the remaining coordinates keep their
  // generalized momentum, so the base absorbs the stop without a net impulse.
  const int n = dof();
  const VecN momentum = mass * qd;
  std::vector<int> free;
  for (int i = 0; i < n; ++i)
    if (!stopped[i]) free.push_back(i);
  const int nf = static_cast<int>(free.size());
  VecN solved;
  if (nf > 0) {
    MatN mff(nf, nf);
    VecN pf(nf);
    for (int a = 0; a < nf; ++a) {
      pf[a] = momentum[free[a]];
      for (int b = 0; b < nf; ++b) mff(a, b) = mass(free[a], free[b]);
    }
    solved = mff.llt().solve(pf);
  }
  qd.setZero();
  for (int a = 0; a < nf; ++a) qd[free[a]] = solved[a];
}

ComState Simulator::com_state(const VecN& q, const VecN& qd) const {
  check_dims(q);
  check_dims(qd);
  LinkKinArray kin;
  compute(q, &qd, kin);
  ComState out;
  double total = 0.0;
  for (int l = 0; l < static_cast<int>(model_.links.size()); ++l) {
    const double m = model_.links[l].mass;
    out.position += m * kin[l].com;
    out.velocity += m * (kin[l].jc * qd);
    total += m;
  }
  out.position /= total;
  out.velocity /= total;
  return out;
}

double Simulator::kinetic_energy(const VecN& q, const VecN& qd) const {
  return 0.5 * qd.dot(mass_matrix(q) * qd);
}

double Simulator::potential_energy(const VecN& q) const {
  check_dims(q);
  LinkKinArray kin;
  compute(q, nullptr, kin);
  double e = 0.0;
  for (int l = 0; l < static_cast<int>(model_.links.size()); ++l)
    e += model_.links[l].mass * model_.gravity * kin[l].com.y();
  return e;
}

SimState Simulator::nominal_state(double sole_height) const {
  SimState s;
  const int n = dof();
  const int nb = model_.base_dof();
  s.q = VecN::Zero(n);
  s.qd = VecN::Zero(n);
  for (int j = 0; j < model_.joint_count(); ++j) s.q[nb + j] = model_.joints[j].nominal_angle;
  if (model_.floating_base && !model_.contacts.empty()) {
    const Kinematics kin = forward_kinematics(s.q);
    double lowest = std::numeric_limits<double>::infinity();
    for (const Vec2& p : kin.contact_position) lowest = std::min(lowest, p.y());
    s.q[1] = sole_height - lowest;
  }
  s.contacts.resize(model_.contacts.size());
  return s;
}

double Simulator::static_penetration() const {
  if (model_.contacts.empty()) return 0.0;
  return -model_.total_mass() * model_.gravity /
         (contact_.normal_stiffness * static_cast<double>(model_.contacts.size()));
}

}  // namespace pushrec
