#include "pushrec/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <random>
#include <thread>

#include "pushrec/capture_point.hpp"
#include "pushrec/json_io.hpp"

namespace pushrec {

using nlohmann::json;
using json_io::read_opt;
using json_io::reject_unknown;

PolicySource hold_policy(const EnvConfig& env) {
  const Eigen::VectorXd nominal = Env(env).nominal_action();
  return [nominal](std::uint64_t) { return [nominal](const Eigen::VectorXd&) { return nominal; }; };
}

PolicySource mean_policy(ActorCritic model) {
  auto shared = std::make_shared<const ActorCritic>(std::move(model));
  return [shared](std::uint64_t) {
    return [shared](const Eigen::VectorXd& obs) -> Eigen::VectorXd { return shared->act(obs); };
  };
}

PolicySource random_policy(int action_dim) {
  return [action_dim](std::uint64_t seed) {
    auto rng = std::make_shared<std::mt19937_64>(seed);
    return [action_dim, rng](const Eigen::VectorXd&) {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      Eigen::VectorXd a(action_dim);
      for (int i = 0; i < action_dim; ++i) a[i] = u(*rng);
      return a;
    };
  };
}

void check_compatible(const ActorCritic& model, const EnvConfig& env) {
  const int obs = observation_dim(env.model);
  const int act = env.model.joint_count();
  if (model.policy.obs_dim() != obs || model.policy.act_dim() != act || model.value.input_dim() != obs)
    throw DimensionError("checkpoint expects observation " + std::to_string(model.policy.obs_dim()) + " / action " +
                         std::to_string(model.policy.act_dim()) + ", environment has observation " +
                         std::to_string(obs) + " / action " + std::to_string(act));
}

std::string to_string(Family f) {
  switch (f) {
    case Family::Quiet: return "quiet";
    case Family::Push: return "push";
    case Family::Drop: return "drop";
  }
  return "quiet";
}

Family family_from_string(const std::string& s) {
  if (s == "quiet") return Family::Quiet;
  if (s == "push") return Family::Push;
  if (s == "drop") return Family::Drop;
  throw ConfigError("unknown scenario family '" + s + "' (expected quiet, push or drop)");
}

double Scenario::disturbance_end() const {
  return family == Family::Push ? push_time + push_time_jitter + push_duration : 0.0;
}

namespace {

int link_index(const ModelSpec& model, const std::string& name) {
  for (int l = 0; l < static_cast<int>(model.links.size()); ++l)
    if (model.links[l].name == name) return l;
  std::string known;
  for (const auto& l : model.links) known += (known.empty() ? "" : ", ") + l.name;
  throw ConfigError("unknown link '" + name + "' (model has " + known + ")");
}

bool positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

void validate(const Scenario& s, const ModelSpec& model) {
  const std::string where = "scenario '" + s.name + "': ";
  if (s.name.empty()) throw ConfigError("scenario name must not be empty");
  if (!positive(s.success.settle_time) || !positive(s.success.com_speed) || !positive(s.success.pitch_bound))
    throw ConfigError(where + "success thresholds must be positive");
  if (!(std::isfinite(s.impulse) && s.impulse >= 0.0)) throw ConfigError(where + "impulse must be >= 0");
  if (s.direction != 1.0 && s.direction != -1.0) throw ConfigError(where + "direction must be +1 or -1");
  if (!(std::isfinite(s.push_time) && s.push_time >= 0.0)) throw ConfigError(where + "push_time must be >= 0");
  if (!(std::isfinite(s.push_time_jitter) && s.push_time_jitter >= 0.0))
    throw ConfigError(where + "push_time_jitter must be >= 0");
  if (!positive(s.push_duration)) throw ConfigError(where + "push_duration must be > 0");
  if (!(std::isfinite(s.drop_height) && s.drop_height >= 0.0)) throw ConfigError(where + "drop_height must be >= 0");
  if (!(s.init_pitch_range[0] <= s.init_pitch_range[1])) throw ConfigError(where + "init_pitch_range is reversed");
  if (!(s.init_joint_noise >= 0.0) || !(s.action_noise_sigma >= 0.0))
    throw ConfigError(where + "noise levels must be >= 0");
  for (double n : s.obs_noise_sigma)
    if (!(n >= 0.0)) throw ConfigError(where + "observation noise must be >= 0");
  switch (s.family) {
    case Family::Quiet:
      if (s.impulse != 0.0 || s.drop_height != 0.0) throw ConfigError(where + "quiet scenarios carry no disturbance");
      break;
    case Family::Push:
      if (s.drop_height != 0.0) throw ConfigError(where + "push scenarios start on the ground");
      link_index(model, s.target_link);
      break;
    case Family::Drop:
      if (s.impulse != 0.0) throw ConfigError(where + "drop scenarios carry no push");
      break;
  }
}

json to_json(const Scenario& s) {
  json j = {{"name", s.name},
            {"family", to_string(s.family)},
            {"target_link", s.target_link},
            {"impulse", s.impulse},
            {"direction", s.direction},
            {"push_time", s.push_time},
            {"push_time_jitter", s.push_time_jitter},
            {"push_duration", s.push_duration},
            {"drop_height", s.drop_height},
            {"init_pitch_range", s.init_pitch_range},
            {"init_joint_noise", s.init_joint_noise},
            {"obs_noise_sigma", s.obs_noise_sigma},
            {"action_noise_sigma", s.action_noise_sigma},
            {"success",
             {{"settle_time", s.success.settle_time},
              {"com_speed", s.success.com_speed},
              {"pitch_bound", s.success.pitch_bound}}}};
  if (s.point) j["point"] = json_io::vec_json(*s.point);
  return j;
}

Scenario scenario_from_json(const json& j) {
  reject_unknown(j,
                 {"name", "family", "target_link", "point", "impulse", "direction", "push_time", "push_time_jitter",
                  "push_duration", "drop_height", "init_pitch_range", "init_joint_noise", "obs_noise_sigma",
                  "action_noise_sigma", "success"},
                 "scenario");
  Scenario s;
  read_opt(j, "name", s.name, "scenario");
  if (j.contains("family")) s.family = family_from_string(j.at("family").get<std::string>());
  read_opt(j, "target_link", s.target_link, "scenario");
  if (j.contains("point")) s.point = json_io::vec_from(j.at("point"), "scenario.point");
  read_opt(j, "impulse", s.impulse, "scenario");
  read_opt(j, "direction", s.direction, "scenario");
  read_opt(j, "push_time", s.push_time, "scenario");
  read_opt(j, "push_time_jitter", s.push_time_jitter, "scenario");
  read_opt(j, "push_duration", s.push_duration, "scenario");
  read_opt(j, "drop_height", s.drop_height, "scenario");
  read_opt(j, "init_pitch_range", s.init_pitch_range, "scenario");
  read_opt(j, "init_joint_noise", s.init_joint_noise, "scenario");
  read_opt(j, "obs_noise_sigma", s.obs_noise_sigma, "scenario");
  read_opt(j, "action_noise_sigma", s.action_noise_sigma, "scenario");
  if (j.contains("success")) {
    const json& sj = j.at("success");
    reject_unknown(sj, {"settle_time", "com_speed", "pitch_bound"}, "scenario.success");
    read_opt(sj, "settle_time", s.success.settle_time, "scenario.success");
    read_opt(sj, "com_speed", s.success.com_speed, "scenario.success");
    read_opt(sj, "pitch_bound", s.success.pitch_bound, "scenario.success");
  }
  return s;
}

std::vector<std::string> builtin_scenario_names() {
  return {"quiet", "pelvis-push", "torso-push", "thigh-push", "shank-push", "drop"};
}

Scenario builtin_scenario(const std::string& name, double impulse) {
  Scenario s;
  s.name = name;
  if (name == "quiet") return s;
  if (name == "drop") {
    s.family = Family::Drop;
    s.drop_height = 0.4;
    s.init_pitch_range = {-0.0873, 0.0873};
    return s;
  }
  const std::pair<const char*, const char*> pushes[] = {
      {"pelvis-push", "pelvis"}, {"torso-push", "torso"}, {"thigh-push", "thigh_l"}, {"shank-push", "shank_l"}};
  for (const auto& [n, link] : pushes) {
    if (name == n) {
      s.family = Family::Push;
      s.target_link = link;
      s.impulse = impulse;
      return s;
    }
  }
  std::string known;
  for (const auto& n : builtin_scenario_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown scenario '" + name + "' (expected one of " + known + ")");
}

namespace {

double push_start(const Scenario& s, std::uint64_t seed) {
  if (s.push_time_jitter <= 0.0) return s.push_time;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x70757368u};
  std::mt19937_64 rng(seq);
  return s.push_time + std::uniform_real_distribution<double>(0.0, s.push_time_jitter)(rng);
}

}  // namespace

EnvConfig scenario_env(const EnvConfig& base, const Scenario& s, std::uint64_t seed) {
  validate(s, base.model);
  EnvConfig c = base;
  c.disturbance.enabled = false;
  c.extra_pushes.clear();
  if (s.family == Family::Push && s.impulse > 0.0) {
    ExternalForce f = make_push(c.model, link_index(c.model, s.target_link), s.direction * s.impulse,
                                push_start(s, seed), s.push_duration);
    if (s.point) f.point = *s.point;
    c.extra_pushes.push_back(f);
  }
  c.init_height = s.drop_height;
  c.init_pitch_range = s.init_pitch_range;
  c.init_base_x = 0.0;
  c.init_joint_noise = s.init_joint_noise;
  c.obs_noise_sigma = s.obs_noise_sigma;
  c.action_noise_sigma = s.action_noise_sigma;
  c.episode_seconds = s.horizon();
  c.rng_seed = seed;
  return c;
}

TrajectorySample sample_state(const Simulator& sim, const SimState& s, const Eigen::VectorXd& torque) {
  const ModelSpec& m = sim.model();
  TrajectorySample out;
  out.t = s.t;
  const ComState com = sim.com_state(s.q, s.qd);
  out.com = com.position;
  out.com_velocity = com.velocity;
  out.pelvis_pitch = m.floating_base ? s.q[2] : 0.0;
  const Kinematics kin = sim.forward_kinematics(s.q);
  for (int side = 0; side < 2; ++side) {
    const std::vector<int> idx = m.foot_contacts(side);
    double x = 0.0;
    bool contact = false;
    for (int c : idx) {
      x += kin.contact_position[c].x();
      const bool active = s.contacts.empty() ? kin.contact_position[c].y() <= 0.0
                                             : (c < static_cast<int>(s.contacts.size()) && s.contacts[c].active);
      contact = contact || active;
    }
    out.foot_contact[side] = contact;
    out.foot_x[side] = idx.empty() ? 0.0 : x / static_cast<double>(idx.size());
  }
  out.torque = torque;
  out.joint_velocity = s.qd.tail(m.joint_count());
  return out;
}

std::vector<int> cumulative_steps(const Trajectory& traj, const StepRule& rule) {
  std::vector<int> out(traj.size(), 0);
  if (traj.empty()) return out;
  struct Foot {
    bool in_contact = false;
    bool armed = false;  // a liftoff has been seen
    double lift_t = 0.0;
    double lift_x = 0.0;
  };
  std::array<Foot, 2> feet;
  for (int side = 0; side < 2; ++side) feet[side].in_contact = traj.front().foot_contact[side];
  int count = 0;
  for (size_t i = 1; i < traj.size(); ++i) {
    for (int side = 0; side < 2; ++side) {
      Foot& f = feet[side];
      const bool c = traj[i].foot_contact[side];
      if (f.in_contact && !c) {
        f.armed = true;
        f.lift_t = traj[i].t;
        f.lift_x = traj[i - 1].foot_x[side];
      } else if (!f.in_contact && c && f.armed) {
        const double flight = traj[i].t - f.lift_t;
        const double moved = std::abs(traj[i].foot_x[side] - f.lift_x);
        if (flight >= rule.min_flight - 1e-9 && moved >= rule.min_displacement) ++count;
        f.armed = false;
      }
      f.in_contact = c;
    }
    out[i] = count;
  }
  return out;
}

int count_steps(const Trajectory& traj, const StepRule& rule) {
  const std::vector<int> c = cumulative_steps(traj, rule);
  return c.empty() ? 0 : c.back();
}

PeakStats peak_stats(const Trajectory& traj, const ModelSpec& model) {
  const int nj = model.joint_count();
  PeakStats p;
  p.torque = Eigen::VectorXd::Zero(nj);
  p.velocity = Eigen::VectorXd::Zero(nj);
  for (const TrajectorySample& s : traj) {
    if (s.torque.size() == nj) p.torque = p.torque.cwiseMax(s.torque.cwiseAbs());
    if (s.joint_velocity.size() == nj) p.velocity = p.velocity.cwiseMax(s.joint_velocity.cwiseAbs());
  }
  p.velocity_exceeded.resize(nj);
  for (int j = 0; j < nj; ++j) {
    p.velocity_exceeded[j] = p.velocity[j] > model.joints[j].velocity_limit;
    p.any_velocity_exceeded = p.any_velocity_exceeded || p.velocity_exceeded[j];
  }
  return p;
}

namespace {

json vec_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

bool settled(const TrajectorySample& s, const SuccessCriteria& c) {
  return s.com_velocity.norm() < c.com_speed && std::abs(s.pelvis_pitch) < c.pitch_bound;
}

}  // namespace

json to_json(const EvalReport& r) {
  return {{"scenario", r.scenario},
          {"seed", r.seed},
          {"success", r.success},
          {"reason", r.reason},
          {"termination", to_string(r.termination)},
          {"steps_taken", r.steps_taken},
          {"peak_torque", vec_json(r.peaks.torque)},
          {"peak_velocity", vec_json(r.peaks.velocity)},
          {"velocity_exceeded", r.peaks.velocity_exceeded},
          {"settle_time", finite_or_null(r.settle_time)},
          {"impulse", r.impulse},
          {"normalized_impulse", r.normalized_impulse},
          {"push_time", r.push_time},
          {"final_com_speed", r.final_com_speed},
          {"final_pitch", r.final_pitch},
          {"trajectory", r.trajectory}};
}

EvalReport run_scenario(const PolicySource& policy, const Scenario& s, const EnvConfig& base, std::uint64_t seed,
                        const EvalOptions& options) {
  const EnvConfig cfg = scenario_env(base, s, seed);
  Env env(cfg);
  Trajectory local;
  Trajectory& traj = options.trajectory ? *options.trajectory : local;
  traj.clear();
  traj.reserve(static_cast<size_t>(cfg.max_steps() * cfg.substeps() + 1));
  const Simulator& sim = env.simulator();
  env.set_tick_observer([&](const TickRecord& rec) {
    SimState st;
    st.q = rec.q;
    st.qd = rec.qd;
    st.t = rec.t;
    st.contacts = rec.contacts;
    traj.push_back(sample_state(sim, st, rec.torques));
  });

  Eigen::VectorXd obs = env.reset(seed);
  traj.push_back(sample_state(sim, env.state(), Eigen::VectorXd::Zero(cfg.model.joint_count())));
  std::unique_ptr<TrajectoryWriter> writer;
  if (!options.trajectory_path.empty())
    writer = std::make_unique<TrajectoryWriter>(options.trajectory_path, cfg, seed, obs);
  const ActionFn act = policy(seed);

  EvalReport r;
  r.scenario = s.name;
  r.seed = seed;
  r.trajectory = options.trajectory_path.string();
  if (s.family == Family::Push) r.impulse = s.impulse;
  r.normalized_impulse = r.impulse / cfg.model.total_mass();
  r.push_time = cfg.extra_pushes.empty() ? 0.0 : cfg.extra_pushes.front().t_start;

  StepResult step;
  do {
    const Eigen::VectorXd a = act(obs);
    step = env.step(a);
    if (writer) writer->write(a, step);
    obs = step.observation;
  } while (!step.terminated);
  r.termination = step.reason;

  const TrajectorySample& last = traj.back();
  r.final_com_speed = last.com_velocity.norm();
  r.final_pitch = last.pelvis_pitch;
  r.steps_taken = count_steps(traj);
  r.peaks = peak_stats(traj, cfg.model);

  const double end = cfg.extra_pushes.empty() ? 0.0 : cfg.extra_pushes.front().t_end;
  if (settled(last, s.success)) {
    size_t i = traj.size();
    while (i > 0 && settled(traj[i - 1], s.success) && traj[i - 1].t >= end) --i;
    r.settle_time = std::max(0.0, traj[i < traj.size() ? i : traj.size() - 1].t - end);
  }

  if (step.reason != Termination::TimeLimit) {
    r.reason = "terminated: " + to_string(step.reason);
  } else if (r.final_com_speed >= s.success.com_speed) {
    r.reason = "CoM still moving";
  } else if (std::abs(r.final_pitch) >= s.success.pitch_bound) {
    r.reason = "pelvis not upright";
  }
  r.success = r.reason.empty();
  return r;
}

EvalReport drop_test(const PolicySource& policy, const EnvConfig& base, double height,
                     std::array<double, 2> init_pitch_range, std::uint64_t seed) {
  Scenario s = builtin_scenario("drop");
  s.drop_height = height;
  s.init_pitch_range = init_pitch_range;
  return run_scenario(policy, s, base, seed);
}

double analytic_impulse_bound(const EnvConfig& env, double direction) {
  Scenario quiet;
  const EnvConfig c = scenario_env(env, quiet, 0);
  Env e(c);
  e.reset(0);
  const Simulator& sim = e.simulator();
  const Kinematics kin = sim.forward_kinematics(e.state().q);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const Vec2& p : kin.contact_position) {
    lo = std::min(lo, p.x());
    hi = std::max(hi, p.x());
  }
  const double com_x = sim.com_state(e.state().q, e.state().qd).position.x();
  const CpParams cp{c.reward.com_height_target, c.model.gravity, c.model.total_mass()};
  return max_rejectable_impulse(cp, std::max(0.0, direction > 0.0 ? hi - com_x : com_x - lo));
}

SearchResult search_max_impulse(const PolicySource& policy, const Scenario& family, const EnvConfig& base,
                                std::uint64_t seed, double resolution, double j_hi) {
  if (!positive(resolution)) throw ConfigError("search resolution must be > 0");
  if (j_hi < 0.0) j_hi = 4.0 * analytic_impulse_bound(base, family.direction);
  SearchResult r;
  if (!(j_hi > 0.0)) return r;
  const auto probe = [&](double j) {
    Scenario s = family;
    s.family = Family::Push;
    s.impulse = j;
    const bool ok = run_scenario(policy, s, base, seed).success;
    r.probes.emplace_back(j, ok);
    return ok;
  };
  double lo = 0.0;
  double hi = j_hi;
  if (probe(hi)) {
    lo = hi;
  } else {
    while (hi - lo > resolution) {
      const double mid = 0.5 * (lo + hi);
      (probe(mid) ? lo : hi) = mid;
    }
  }
  r.max_impulse = lo;
  r.bracket_lo = lo;
  r.bracket_hi = hi;
  return r;
}

std::vector<EvalReport> run_sweep(const PolicySource& policy, const std::vector<SweepItem>& items,
                                  const EnvConfig& base, int workers) {
  std::vector<EvalReport> out(items.size());
  const int n = static_cast<int>(items.size());
  workers = std::max(1, std::min(workers, n));
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(workers);
  const auto work = [&](int w) {
    try {
      for (int i = next++; i < n; i = next++) out[i] = run_scenario(policy, items[i].scenario, base, items[i].seed);
    } catch (...) {
      errors[w] = std::current_exception();
      next = n;
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::string sweep_csv_row(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%.10g,%.10g,%d,%d,%.10g,%.10g", r.impulse, r.normalized_impulse, r.success ? 1 : 0,
                r.steps_taken, r.peaks.torque.size() ? r.peaks.torque.maxCoeff() : 0.0,
                r.peaks.velocity.size() ? r.peaks.velocity.maxCoeff() : 0.0);
  return r.scenario + "," + buf;
}

void write_reports(const std::filesystem::path& jsonl, const std::vector<EvalReport>& reports) {
  std::ofstream out(jsonl);
  if (!out) throw ConfigError("cannot write '" + jsonl.string() + "'");
  for (const auto& r : reports) out << to_json(r).dump() << '\n';
}

void write_sweep_csv(const std::filesystem::path& csv, const std::vector<EvalReport>& reports) {
  std::ofstream out(csv);
  if (!out) throw ConfigError("cannot write '" + csv.string() + "'");
  out << kSweepCsvHeader << '\n';
  for (const auto& r : reports) out << sweep_csv_row(r) << '\n';
}

}  // namespace pushrec
