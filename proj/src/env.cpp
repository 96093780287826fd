#include "pushrec/env.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pushrec/json_io.hpp"

namespace pushrec {

using nlohmann::json;

double RewardWeights::positive_weight_sum() const {
  return torso_pose.weight + pelvis_pose.weight + com_xy.weight + com_z.weight + vel_xy.weight + vel_z.weight +
         grf_left.weight + grf_right.weight;
}

void validate(const RewardWeights& w) {
  const std::pair<const char*, const RewardTerm*> terms[] = {
      {"torso_pose", &w.torso_pose}, {"pelvis_pose", &w.pelvis_pose}, {"com_xy", &w.com_xy},
      {"com_z", &w.com_z},           {"vel_xy", &w.vel_xy},           {"vel_z", &w.vel_z},
      {"grf_left", &w.grf_left},     {"grf_right", &w.grf_right}};
  for (const auto& [name, t] : terms) {
    if (!(t->weight >= 0.0)) throw ConfigError(std::string("reward weight ") + name + " must be >= 0");
    if (!(t->alpha > 0.0)) throw ConfigError(std::string("reward alpha ") + name + " must be > 0");
  }
  if (std::abs(w.positive_weight_sum() - 1.0) > 1e-9)
    throw ConfigError("positive reward weights must sum to 1 (got " + std::to_string(w.positive_weight_sum()) + ")");
  if (w.power_weight > 0.0) throw ConfigError("power weight must be <= 0");
  if (w.no_foot_penalty > 0.0 || w.body_contact_penalty > 0.0) throw ConfigError("contact penalties must be <= 0");
  if (!(w.com_height_target > 0.0)) throw ConfigError("com_height_target must be > 0");
  if (!(w.grf_target > 0.0)) throw ConfigError("grf_target must be > 0");
}

double RewardBreakdown::positive() const {
  return torso_pose + pelvis_pose + com_xy + com_z + vel_xy + vel_z + grf_left + grf_right;
}

double RewardBreakdown::total() const { return positive() + contact + power; }

json to_json(const RewardBreakdown& r) {
  return {{"torso_pose", r.torso_pose}, {"pelvis_pose", r.pelvis_pose}, {"com_xy", r.com_xy},
          {"com_z", r.com_z},           {"vel_xy", r.vel_xy},           {"vel_z", r.vel_z},
          {"grf_left", r.grf_left},     {"grf_right", r.grf_right},     {"contact", r.contact},
          {"power", r.power},           {"total", r.total()}};
}

RewardBreakdown compute_reward(const RewardWeights& w, const CpParams& cp, const RewardInputs& in) {
  RewardBreakdown r;
  const bool flight = !in.foot_contact[0] && !in.foot_contact[1];
  r.torso_pose = w.torso_pose.eval(in.torso_angle);
  r.pelvis_pose = w.pelvis_pose.eval(in.pelvis_angle);
  r.com_xy = w.com_xy.eval(in.com_position.x() - in.support_center);
  r.com_z = w.com_z.eval(in.com_position.y() - w.com_height_target);
  if (!flight) {
    const double v_des = desired_com_velocity(in.com_position.x(), in.support_center, cp);
    r.vel_xy = w.vel_xy.eval(in.com_velocity.x() - v_des);
  }
  r.vel_z = w.vel_z.eval(in.com_velocity.y());
  r.grf_left = w.grf_left.eval(in.foot_normal_force[0] - w.grf_target);
  r.grf_right = w.grf_right.eval(in.foot_normal_force[1] - w.grf_target);
  if (in.body_contact) r.contact = w.body_contact_penalty;
  else if (flight) r.contact = w.no_foot_penalty;
  double watts = 0.0;
  for (Eigen::Index j = 0; j < in.joint_torques.size(); ++j)
    watts += std::abs(in.joint_torques[j] * in.joint_velocities[j]);
  r.power = w.power_weight * watts;
  return r;
}

void validate(const DisturbanceSchedule& d, const ModelSpec& model) {
  if (!(d.magnitude_range[0] >= 0.0) || !(d.magnitude_range[1] >= d.magnitude_range[0]))
    throw ConfigError("disturbance magnitude_range must satisfy 0 <= lo <= hi");
  if (!(d.push_duration > 0.0)) throw ConfigError("disturbance push_duration must be > 0");
  if (!(d.interval > 0.0)) throw ConfigError("disturbance interval must be > 0");
  if (!(d.first_push >= 0.0)) throw ConfigError("disturbance first_push must be >= 0");
  if (d.target_link < 0 || d.target_link >= static_cast<int>(model.links.size()))
    throw ConfigError("disturbance target_link out of range");
}

ExternalForce sample_disturbance(const DisturbanceSchedule& d, const ModelSpec& model, double t_start,
                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> magnitude(d.magnitude_range[0], d.magnitude_range[1]);
  std::bernoulli_distribution positive(0.5);
  const double j = magnitude(rng);
  const double sign = positive(rng) ? 1.0 : -1.0;
  ExternalForce f = make_push(model, d.target_link, sign * j, t_start, d.push_duration);
  if (d.point) f.point = *d.point;
  return f;
}

ExternalForce make_push(const ModelSpec& model, int link, double impulse, double t_start, double duration) {
  ExternalForce f;
  f.link = link;
  f.point = model.links.at(link).com_local();
  f.force = {impulse / duration, 0.0};
  f.t_start = t_start;
  f.t_end = t_start + duration;
  return f;
}

int EnvConfig::substeps() const { return static_cast<int>(std::lround(control_hz / policy_hz)); }

int EnvConfig::max_steps() const { return static_cast<int>(std::lround(episode_seconds * policy_hz)); }

EnvConfig env_config_for(ModelSpec model) {
  EnvConfig c;
  c.model = std::move(model);
  const Simulator sim(c.model, c.contact);
  const SimState rest = sim.nominal_state(sim.static_penetration());
  c.reward.com_height_target = sim.com_state(rest.q, rest.qd).position.y();
  c.reward.grf_target = c.model.total_mass() * c.model.gravity / 2.0;
  return c;
}

namespace {

using json_io::read_opt;
using json_io::reject_unknown;
using json_io::vec_from;
using json_io::vec_json;

json term_json(const RewardTerm& t) { return {{"weight", t.weight}, {"alpha", t.alpha}}; }

void read_term(const json& obj, const char* key, RewardTerm& t) {
  if (!obj.contains(key)) return;
  const json& tj = obj.at(key);
  const std::string where = std::string("reward.") + key;
  reject_unknown(tj, {"weight", "alpha", "half_error"}, where);
  read_opt(tj, "weight", t.weight, where);
  read_opt(tj, "alpha", t.alpha, where);
  if (tj.contains("half_error")) {
    if (tj.contains("alpha")) throw ConfigError("give either alpha or half_error in " + where);
    double e = 0.0;
    read_opt(tj, "half_error", e, where);
    if (!(e > 0.0)) throw ConfigError("half_error must be > 0 in " + where);
    t.alpha = half_error_alpha(e);
  }
}

json force_json(const ExternalForce& f) {
  return {{"link", f.link},
          {"point", vec_json(f.point)},
          {"force", vec_json(f.force)},
          {"t_start", f.t_start},
          {"t_end", f.t_end}};
}

ExternalForce force_from(const json& j) {
  reject_unknown(j, {"link", "point", "force", "t_start", "t_end"}, "push");
  ExternalForce f;
  read_opt(j, "link", f.link, "push");
  if (j.contains("point")) f.point = vec_from(j.at("point"), "push.point");
  if (j.contains("force")) f.force = vec_from(j.at("force"), "push.force");
  read_opt(j, "t_start", f.t_start, "push");
  read_opt(j, "t_end", f.t_end, "push");
  return f;
}

}  // namespace

EnvConfig default_env_config(Plane plane) { return env_config_for(builtin_model(plane)); }

void validate(const EnvConfig& c) {
  validate(c.model);
  if (!c.model.floating_base) throw ConfigError("environment needs a floating-base model");
  if (c.model.foot_links[0] < 0 || c.model.foot_links[1] < 0) throw ConfigError("environment needs two feet");
  if (!(c.control_hz > 0.0) || !(c.policy_hz > 0.0)) throw ConfigError("control_hz and policy_hz must be > 0");
  const double ratio = c.control_hz / c.policy_hz;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || ratio < 1.0)
    throw ConfigError("control_hz must be an integer multiple of policy_hz");
  if (!(c.episode_seconds > 0.0)) throw ConfigError("episode_seconds must be > 0");
  if (!(c.filter_cutoff_hz > 0.0)) throw ConfigError("filter_cutoff_hz must be > 0");
  validate(c.disturbance, c.model);
  validate(c.reward);
  for (const auto& f : c.extra_pushes) {
    if (f.link < 0 || f.link >= static_cast<int>(c.model.links.size())) throw ConfigError("push link out of range");
    if (!(f.t_end > f.t_start)) throw ConfigError("push window must have t_end > t_start");
  }
  const int n_obs = observation_dim(c.model);
  if (c.obs_noise_sigma.size() > 1 && static_cast<int>(c.obs_noise_sigma.size()) != n_obs)
    throw ConfigError("obs_noise_sigma needs 1 or " + std::to_string(n_obs) + " entries");
  for (double s : c.obs_noise_sigma)
    if (!(s >= 0.0)) throw ConfigError("obs_noise_sigma entries must be >= 0");
  if (!(c.action_noise_sigma >= 0.0)) throw ConfigError("action_noise_sigma must be >= 0");
  if (!(c.init_joint_noise >= 0.0)) throw ConfigError("init_joint_noise must be >= 0");
  if (!(c.init_height >= 0.0)) throw ConfigError("init_height must be >= 0");
  if (!std::isfinite(c.init_base_x)) throw ConfigError("init_base_x must be finite");
  if (!(c.init_pitch_range[1] >= c.init_pitch_range[0])) throw ConfigError("init_pitch_range must be [lo, hi]");
  if (!(c.termination_height_ratio > 0.0 && c.termination_height_ratio < 1.0))
    throw ConfigError("termination_height_ratio must lie in (0, 1)");
  if (!(c.body_radius >= 0.0)) throw ConfigError("body_radius must be >= 0");
}

json to_json(const EnvConfig& c) {
  const auto& d = c.disturbance;
  json dj = {{"enabled", d.enabled},
             {"first_push", d.first_push},
             {"interval", d.interval},
             {"magnitude_range", d.magnitude_range},
             {"push_duration", d.push_duration},
             {"target_link", d.target_link}};
  if (d.point) dj["point"] = vec_json(*d.point);
  const auto& r = c.reward;
  json rj = {{"torso_pose", term_json(r.torso_pose)},
             {"pelvis_pose", term_json(r.pelvis_pose)},
             {"com_xy", term_json(r.com_xy)},
             {"com_z", term_json(r.com_z)},
             {"vel_xy", term_json(r.vel_xy)},
             {"vel_z", term_json(r.vel_z)},
             {"grf_left", term_json(r.grf_left)},
             {"grf_right", term_json(r.grf_right)},
             {"power_weight", r.power_weight},
             {"no_foot_penalty", r.no_foot_penalty},
             {"body_contact_penalty", r.body_contact_penalty},
             {"com_height_target", r.com_height_target},
             {"grf_target", r.grf_target}};
  json pushes = json::array();
  for (const auto& f : c.extra_pushes) pushes.push_back(force_json(f));
  return {{"model", to_json(c.model)},
          {"contact",
           {{"normal_stiffness", c.contact.normal_stiffness},
            {"normal_damping", c.contact.normal_damping},
            {"tangential_damping", c.contact.tangential_damping},
            {"friction", c.contact.friction}}},
          {"control_hz", c.control_hz},
          {"policy_hz", c.policy_hz},
          {"episode_seconds", c.episode_seconds},
          {"filter_cutoff_hz", c.filter_cutoff_hz},
          {"disturbance", dj},
          {"extra_pushes", pushes},
          {"reward", rj},
          {"obs_noise_sigma", c.obs_noise_sigma},
          {"action_noise_sigma", c.action_noise_sigma},
          {"init_joint_noise", c.init_joint_noise},
          {"init_height", c.init_height},
          {"init_base_x", c.init_base_x},
          {"init_pitch_range", c.init_pitch_range},
          {"termination_height_ratio", c.termination_height_ratio},
          {"body_radius", c.body_radius},
          {"rng_seed", c.rng_seed}};
}

EnvConfig env_config_from_json(const json& j) {
  reject_unknown(j,
                 {"model", "contact", "control_hz", "policy_hz", "episode_seconds", "filter_cutoff_hz", "disturbance",
                  "extra_pushes", "reward", "obs_noise_sigma", "action_noise_sigma", "init_joint_noise",
                  "init_height", "init_base_x", "init_pitch_range", "termination_height_ratio", "body_radius", "rng_seed"},
                 "env config");
  EnvConfig c = default_env_config(Plane::Sagittal);
  if (j.contains("model")) {
    const json& mj = j.at("model");
    try {
      c = env_config_for(mj.is_string() ? builtin_model(plane_from_string(mj.get<std::string>()))
                                          : model_from_json(mj));
    } catch (const ModelError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
  if (j.contains("contact")) {
    const json& cj = j.at("contact");
    reject_unknown(cj, {"normal_stiffness", "normal_damping", "tangential_damping", "friction"}, "contact");
    read_opt(cj, "normal_stiffness", c.contact.normal_stiffness, "contact");
    read_opt(cj, "normal_damping", c.contact.normal_damping, "contact");
    read_opt(cj, "tangential_damping", c.contact.tangential_damping, "contact");
    read_opt(cj, "friction", c.contact.friction, "contact");
  }
  read_opt(j, "control_hz", c.control_hz, "env config");
  read_opt(j, "policy_hz", c.policy_hz, "env config");
  read_opt(j, "episode_seconds", c.episode_seconds, "env config");
  read_opt(j, "filter_cutoff_hz", c.filter_cutoff_hz, "env config");
  if (j.contains("disturbance")) {
    const json& dj = j.at("disturbance");
    reject_unknown(dj, {"enabled", "first_push", "interval", "magnitude_range", "push_duration", "target_link", "point"},
                   "disturbance");
    auto& d = c.disturbance;
    read_opt(dj, "enabled", d.enabled, "disturbance");
    read_opt(dj, "first_push", d.first_push, "disturbance");
    read_opt(dj, "interval", d.interval, "disturbance");
    read_opt(dj, "magnitude_range", d.magnitude_range, "disturbance");
    read_opt(dj, "push_duration", d.push_duration, "disturbance");
    read_opt(dj, "target_link", d.target_link, "disturbance");
    if (dj.contains("point")) d.point = vec_from(dj.at("point"), "disturbance.point");
  }
  if (j.contains("extra_pushes")) {
    c.extra_pushes.clear();
    for (const auto& fj : j.at("extra_pushes")) c.extra_pushes.push_back(force_from(fj));
  }
  if (j.contains("reward")) {
    const json& rj = j.at("reward");
    reject_unknown(rj,
                   {"torso_pose", "pelvis_pose", "com_xy", "com_z", "vel_xy", "vel_z", "grf_left", "grf_right",
                    "power_weight", "no_foot_penalty", "body_contact_penalty", "com_height_target", "grf_target"},
                   "reward");
    auto& r = c.reward;
    read_term(rj, "torso_pose", r.torso_pose);
    read_term(rj, "pelvis_pose", r.pelvis_pose);
    read_term(rj, "com_xy", r.com_xy);
    read_term(rj, "com_z", r.com_z);
    read_term(rj, "vel_xy", r.vel_xy);
    read_term(rj, "vel_z", r.vel_z);
    read_term(rj, "grf_left", r.grf_left);
    read_term(rj, "grf_right", r.grf_right);
    read_opt(rj, "power_weight", r.power_weight, "reward");
    read_opt(rj, "no_foot_penalty", r.no_foot_penalty, "reward");
    read_opt(rj, "body_contact_penalty", r.body_contact_penalty, "reward");
    read_opt(rj, "com_height_target", r.com_height_target, "reward");
    read_opt(rj, "grf_target", r.grf_target, "reward");
  }
  if (j.contains("obs_noise_sigma")) {
    const json& nj = j.at("obs_noise_sigma");
    if (nj.is_number()) c.obs_noise_sigma = {nj.get<double>()};
    else read_opt(j, "obs_noise_sigma", c.obs_noise_sigma, "env config");
  }
  read_opt(j, "action_noise_sigma", c.action_noise_sigma, "env config");
  read_opt(j, "init_joint_noise", c.init_joint_noise, "env config");
  read_opt(j, "init_height", c.init_height, "env config");
  read_opt(j, "init_base_x", c.init_base_x, "env config");
  read_opt(j, "init_pitch_range", c.init_pitch_range, "env config");
  read_opt(j, "termination_height_ratio", c.termination_height_ratio, "env config");
  read_opt(j, "body_radius", c.body_radius, "env config");
  read_opt(j, "rng_seed", c.rng_seed, "env config");
  validate(c);
  return c;
}

EnvConfig load_env_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config file '" + path.string() + "': " + e.what());
  }
  return env_config_from_json(j);
}

int observation_dim(const ModelSpec& model) { return 2 * model.joint_count() + 18; }

std::string to_string(Termination t) {
  switch (t) {
    case Termination::None: return "none";
    case Termination::BodyGroundContact: return "body_ground_contact";
    case Termination::PelvisBelowThreshold: return "pelvis_below_threshold";
    case Termination::TimeLimit: return "time_limit";
    case Termination::NumericalFailure: return "numerical_failure";
  }
  return "unknown";
}

namespace {

EnvConfig validated(EnvConfig c) {
  validate(c);
  return c;
}

}  // namespace

Env::Env(EnvConfig config) : config_(validated(std::move(config))), sim_(config_.model, config_.contact) {
  cp_ = {config_.reward.com_height_target, config_.model.gravity, config_.model.total_mass()};
  obs_dim_ = pushrec::observation_dim(config_.model);
  const SimState rest = sim_.nominal_state(sim_.static_penetration());
  nominal_pelvis_height_ = rest.q[1];
}

Eigen::VectorXd Env::decode_action(const Eigen::VectorXd& action) const {
  if (action.size() != action_dim())
    throw DimensionError("action has " + std::to_string(action.size()) + " entries, expected " +
                         std::to_string(action_dim()));
  Eigen::VectorXd target(action_dim());
  for (int j = 0; j < action_dim(); ++j) {
    const auto& lim = config_.model.joints[j].angle_limits;
    const double a = std::clamp(action[j], -1.0, 1.0);
    const double t = 0.5 * (a + 1.0);
    target[j] = (1.0 - t) * lim[0] + t * lim[1];
  }
  return target;
}

Eigen::VectorXd Env::encode_targets(const Eigen::VectorXd& joint_angles) const {
  if (joint_angles.size() != action_dim()) throw DimensionError("joint target vector has the wrong size");
  Eigen::VectorXd a(action_dim());
  for (int j = 0; j < action_dim(); ++j) {
    const auto& lim = config_.model.joints[j].angle_limits;
    a[j] = 2.0 * (joint_angles[j] - lim[0]) / (lim[1] - lim[0]) - 1.0;
  }
  return a;
}

Eigen::VectorXd Env::nominal_action() const {
  Eigen::VectorXd q(action_dim());
  for (int j = 0; j < action_dim(); ++j) q[j] = config_.model.joints[j].nominal_angle;
  return encode_targets(q);
}

Eigen::VectorXd Env::raw_observation(const SimState& s) const {
  const ModelSpec& m = config_.model;
  const int nj = m.joint_count();
  const Kinematics kin = sim_.forward_kinematics(s.q, s.qd);
  Vec2 com{0.0, 0.0}, com_vel{0.0, 0.0};
  for (size_t l = 0; l < m.links.size(); ++l) {
    com += m.links[l].mass * kin.links[l].com;
    com_vel += m.links[l].mass * kin.links[l].com_velocity;
  }
  com /= m.total_mass();
  com_vel /= m.total_mass();
  const Vec2 pelvis = kin.links[m.base_link].origin;

  Eigen::VectorXd o(obs_dim_);
  int k = 0;
  o.segment(k, nj) = s.q.tail(nj);
  k += nj;
  o.segment(k, nj) = s.qd.tail(nj);
  k += nj;
  o[k++] = s.qd[0];
  o[k++] = s.qd[1];
  o[k++] = s.q[2];
  o[k++] = s.qd[2];
  o.segment<2>(k) = com_vel;
  k += 2;
  o.segment<2>(k) = com - pelvis;
  k += 2;
  for (int side = 0; side < 2; ++side) {
    Vec2 f{0.0, 0.0};
    if (!s.contacts.empty())
      for (int c : m.foot_contacts(side)) f += s.contacts[c].force;
    o.segment<2>(k) = f;
    k += 2;
  }
  o.segment<2>(k) = kin.links[m.torso_link].com - pelvis;
  k += 2;
  for (int side = 0; side < 2; ++side) {
    o.segment<2>(k) = kin.links[m.foot_links[side]].origin - pelvis;
    k += 2;
  }
  return o;
}

bool Env::body_contact(const SimState& s) const {
  const ModelSpec& m = config_.model;
  const Kinematics kin = sim_.forward_kinematics(s.q);
  for (int l : {m.base_link, m.torso_link}) {
    const LinkFrame& f = kin.links[l];
    const Vec2 tip = f.origin + rotate(f.angle, m.links[l].axis * m.links[l].length);
    for (const Vec2& p : {f.origin, f.com, tip})
      if (p.y() < config_.body_radius) return true;
  }
  return false;
}

RewardInputs Env::reward_inputs(const SimState& s, const Eigen::VectorXd& torques) const {
  const ModelSpec& m = config_.model;
  const Kinematics kin = sim_.forward_kinematics(s.q, s.qd);
  RewardInputs in;
  in.torso_angle = kin.links[m.torso_link].angle;
  in.pelvis_angle = kin.links[m.base_link].angle;
  const ComState com = sim_.com_state(s.q, s.qd);
  in.com_position = com.position;
  in.com_velocity = com.velocity;
  std::vector<ContactSample> samples, all;
  for (size_t c = 0; c < m.contacts.size(); ++c) {
    const bool active = !s.contacts.empty() && s.contacts[c].active;
    samples.push_back({active, kin.contact_position[c].x()});
    all.push_back({true, kin.contact_position[c].x()});
  }
  const auto support = support_interval(samples);
  in.support_center = support ? support->center() : support_interval(all)->center();
  for (int side = 0; side < 2; ++side) {
    for (int c : m.foot_contacts(side)) {
      if (s.contacts.empty() || !s.contacts[c].active) continue;
      in.foot_contact[side] = true;
      in.foot_normal_force[side] += s.contacts[c].force.y();
    }
  }
  in.body_contact = body_contact(s);
  in.joint_torques = torques;
  in.joint_velocities = s.qd.tail(m.joint_count());
  return in;
}

Eigen::VectorXd Env::reset(std::uint64_t seed) {
  rng_.seed(seed);
  const ModelSpec& m = config_.model;
  const int nb = m.base_dof();
  state_ = sim_.nominal_state(0.0);
  std::uniform_real_distribution<double> noise(-config_.init_joint_noise, config_.init_joint_noise);
  std::uniform_real_distribution<double> pitch(config_.init_pitch_range[0], config_.init_pitch_range[1]);
  if (config_.init_joint_noise > 0.0) {
    for (int j = 0; j < m.joint_count(); ++j) {
      const auto& lim = m.joints[j].angle_limits;
      state_.q[nb + j] = std::clamp(state_.q[nb + j] + noise(rng_), lim[0], lim[1]);
    }
  }
  if (config_.init_pitch_range[1] > config_.init_pitch_range[0]) state_.q[2] = pitch(rng_);
  else state_.q[2] = config_.init_pitch_range[0];
  const Kinematics kin = sim_.forward_kinematics(state_.q);
  double lowest = std::numeric_limits<double>::infinity();
  for (const Vec2& p : kin.contact_position) lowest = std::min(lowest, p.y());
  state_.q[1] += sim_.static_penetration() + config_.init_height - lowest;
  state_.q[0] += config_.init_base_x;

  pushes_ = config_.extra_pushes;
  if (config_.disturbance.enabled) {
    for (double t = config_.disturbance.first_push; t < config_.episode_seconds - 1e-9;
         t += config_.disturbance.interval)
      pushes_.push_back(sample_disturbance(config_.disturbance, m, t, rng_));
  }

  filter_ = FilterState::make(config_.filter_cutoff_hz, config_.control_hz);
  const Eigen::VectorXd raw = raw_observation(state_);
  filter_step(filter_, raw);
  steps_ = 0;
  done_ = false;
  return add_obs_noise(raw);
}

Eigen::VectorXd Env::add_obs_noise(Eigen::VectorXd obs) {
  if (config_.obs_noise_sigma.empty()) return obs;
  std::normal_distribution<double> n(0.0, 1.0);
  for (Eigen::Index i = 0; i < obs.size(); ++i) {
    const double s = config_.obs_noise_sigma.size() == 1 ? config_.obs_noise_sigma[0] : config_.obs_noise_sigma[i];
    if (s > 0.0) obs[i] += s * n(rng_);
  }
  return obs;
}

StepResult Env::step(const Eigen::VectorXd& action) {
  if (done_) throw std::logic_error("step called on a finished episode; call reset first");
  if (action.size() != action_dim())
    throw DimensionError("action has " + std::to_string(action.size()) + " entries, expected " +
                         std::to_string(action_dim()));
  Eigen::VectorXd a = action.cwiseMax(-1.0).cwiseMin(1.0);
  if (config_.action_noise_sigma > 0.0) {
    std::normal_distribution<double> n(0.0, config_.action_noise_sigma);
    for (Eigen::Index i = 0; i < a.size(); ++i) a[i] = std::clamp(a[i] + n(rng_), -1.0, 1.0);
  }
  const Eigen::VectorXd target = decode_action(a);
  const ModelSpec& m = config_.model;
  const double dt = config_.dt();

  StepResult r;
  Eigen::VectorXd torques = Eigen::VectorXd::Zero(m.joint_count());
  Eigen::VectorXd filtered;
  std::vector<ExternalForce> active;
  bool failed = false;
  for (int k = 0; k < config_.substeps(); ++k) {
    active.clear();
    for (const auto& f : pushes_)
      if (f.active_at(state_.t)) active.push_back(f);
    if (!active.empty()) r.info.disturbance = active.front();
    try {
      VecN applied;
      state_ = sim_.step_pd(state_, target, active, dt, &applied);
      torques = applied;
    } catch (const IntegrationFailure& e) {
      state_ = e.last_valid();
      failed = true;
      break;
    }
    filtered = filter_step(filter_, raw_observation(state_));
    if (observer_) {
      TickRecord rec;
      rec.t = state_.t;
      rec.q = state_.q;
      rec.qd = state_.qd;
      rec.torques = torques;
      rec.contacts = state_.contacts;
      rec.contact_position = sim_.forward_kinematics(state_.q).contact_position;
      rec.com = sim_.com_state(state_.q, state_.qd);
      observer_(rec);
    }
  }
  ++steps_;
  if (filtered.size() == 0) filtered = filter_.y_prev;
  r.observation = add_obs_noise(filtered);
  r.breakdown = compute_reward(config_.reward, cp_, reward_inputs(state_, torques));
  r.reward = r.breakdown.total();
  r.info.t = state_.t;
  r.info.contacts = state_.contacts;
  r.info.com = sim_.com_state(state_.q, state_.qd);

  if (failed) {
    r.reason = Termination::NumericalFailure;
  } else if (body_contact(state_)) {
    r.reason = Termination::BodyGroundContact;
  } else if (state_.q[1] < config_.termination_height_ratio * nominal_pelvis_height_) {
    r.reason = Termination::PelvisBelowThreshold;
  } else if (steps_ >= config_.max_steps()) {
    r.reason = Termination::TimeLimit;
  }
  r.terminated = r.reason != Termination::None;
  done_ = r.terminated;
  return r;
}

namespace {

json vector_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TrajectoryWriter::TrajectoryWriter(const std::filesystem::path& path, const EnvConfig& config, std::uint64_t seed,
                                   const Eigen::VectorXd& initial_observation)
    : out_(path) {
  if (!out_) throw ConfigError("cannot write trajectory log '" + path.string() + "'");
  json header = {{"type", "header"},
                 {"config", to_json(config)},
                 {"seed", seed},
                 {"observation", vector_json(initial_observation)}};
  out_ << header.dump() << '\n';
}

void TrajectoryWriter::write(const Eigen::VectorXd& action, const StepResult& r) {
  json contacts = json::array();
  for (const auto& c : r.info.contacts)
    contacts.push_back({{"active", c.active}, {"force", vec_json(c.force)}});
  json rec = {{"type", "step"},
              {"t", r.info.t},
              {"obs", vector_json(r.observation)},
              {"action", vector_json(action)},
              {"reward", to_json(r.breakdown)},
              {"contacts", contacts},
              {"com", {{"position", vec_json(r.info.com.position)}, {"velocity", vec_json(r.info.com.velocity)}}},
              {"terminated", r.terminated},
              {"reason", to_string(r.reason)}};
  if (r.info.disturbance) rec["disturbance"] = force_json(*r.info.disturbance);
  else rec["disturbance"] = nullptr;
  out_ << rec.dump() << '\n';
  out_.flush();
}

TrajectoryLog read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trajectory log '" + path.string() + "'");
  TrajectoryLog log;
  std::string line;
  bool have_header = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ConfigError("trajectory log line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!have_header) {
      if (j.value("type", "") != "header") throw ConfigError("trajectory log has no header line");
      log.config = env_config_from_json(j.at("config"));
      log.seed = j.at("seed").get<std::uint64_t>();
      log.initial_observation = vector_from(j.at("observation"));
      have_header = true;
      continue;
    }
    log.actions.push_back(vector_from(j.at("action")));
    log.observations.push_back(vector_from(j.at("obs")));
    log.rewards.push_back(j.at("reward").at("total").get<double>());
  }
  if (!have_header) throw ConfigError("trajectory log '" + path.string() + "' is empty");
  return log;
}

}  // namespace pushrec
