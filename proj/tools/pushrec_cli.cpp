#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "pushrec/eval.hpp"
#include "pushrec/json_io.hpp"
#include "pushrec/train.hpp"

using namespace pushrec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> workers;
};

/// Optional config bundle: {"env": ..., "train": ..., "scenario": ..., "eval": ...}.
struct RunConfig {
  EnvConfig env = default_env_config(Plane::Sagittal);
  TrainConfig train;
  std::optional<Scenario> scenario;
  json eval = json::object();
  json raw = json::object();
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  if (!fs::exists(path)) throw ConfigError("config file '" + path + "' does not exist");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  try {
    rc.raw = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  json_io::reject_unknown(rc.raw, {"env", "train", "scenario", "eval"}, "config file '" + path + "'");
  if (rc.raw.contains("env")) rc.env = env_config_from_json(rc.raw.at("env"));
  if (rc.raw.contains("train")) rc.train = train_config_from_json(rc.raw.at("train"));
  if (rc.raw.contains("scenario")) rc.scenario = scenario_from_json(rc.raw.at("scenario"));
  if (rc.raw.contains("eval")) {
    rc.eval = rc.raw.at("eval");
    json_io::reject_unknown(rc.eval, {"seeds", "resolution", "j_hi"}, "eval");
  }
  return rc;
}

/// Builtin variant name or a model JSON file.
EnvConfig env_for_model(const std::string& model, const EnvConfig& base) {
  EnvConfig c = base;
  ModelSpec m;
  if (model == "sagittal" || model == "frontal") {
    m = builtin_model(plane_from_string(model));
  } else {
    if (!fs::exists(model)) throw ConfigError("model file '" + model + "' does not exist");
    m = load_model(model);
  }
  const EnvConfig fresh = env_config_for(m);
  c.model = fresh.model;
  c.reward.com_height_target = fresh.reward.com_height_target;
  c.reward.grf_target = fresh.reward.grf_target;
  return c;
}

std::string git_blob_sha1(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return "";
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(data.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, data.data(), data.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class Manifest {
 public:
  Manifest(std::string command, int argc, char** argv) {
    j_["command"] = std::move(command);
    j_["argv"] = std::vector<std::string>(argv, argv + argc);
    j_["binary_sha1"] = git_blob_sha1("/proc/self/exe");
    j_["started_utc"] = utc_now();
  }
  json& operator[](const char* key) { return j_[key]; }
  void write(const fs::path& dir) {
    j_["finished_utc"] = utc_now();
    fs::create_directories(dir);
    std::ofstream out(dir / "manifest.json");
    if (!out) throw ConfigError("cannot write '" + (dir / "manifest.json").string() + "'");
    out << j_.dump(2) << '\n';
  }

 private:
  json j_ = json::object();
};

struct PolicyArgs {
  std::string checkpoint;
  std::string policy = "hold";
};

PolicySource make_policy_source(const PolicyArgs& a, const EnvConfig& env) {
  if (!a.checkpoint.empty()) {
    if (!fs::exists(a.checkpoint)) throw ConfigError("checkpoint '" + a.checkpoint + "' does not exist");
    ActorCritic ac = load_checkpoint(a.checkpoint);
    check_compatible(ac, env);
    return mean_policy(std::move(ac));
  }
  if (a.policy == "hold") return hold_policy(env);
  if (a.policy == "random") return random_policy(env.model.joint_count());
  throw ConfigError("unknown policy '" + a.policy + "' (expected hold or random, or pass --checkpoint)");
}

void add_policy_options(CLI::App* cmd, PolicyArgs& a) {
  cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint whose policy mean is evaluated");
  cmd->add_option("--policy", a.policy, "Builtin policy when no checkpoint is given: hold or random")
      ->capture_default_str();
}

json policy_json(const PolicyArgs& a) {
  return a.checkpoint.empty() ? json{{"builtin", a.policy}} : json{{"checkpoint", a.checkpoint}};
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

// train -----------------------------------------------------------------

struct TrainArgs {
  std::string algo;
  std::string model;
  std::optional<int> iters;
  std::optional<int> checkpoint_every;
  std::optional<int> batch;
  bool quiet = false;
};

int cmd_train(const Globals& g, const TrainArgs& a, Manifest& manifest) {
  RunConfig rc = load_run_config(g.config);
  if (!a.model.empty()) rc.env = env_for_model(a.model, rc.env);
  TrainConfig& tc = rc.train;
  if (!a.algo.empty()) tc.algo = algo_from_string(a.algo);
  if (a.iters) tc.iterations = *a.iters;
  if (a.checkpoint_every) tc.checkpoint_every = *a.checkpoint_every;
  if (a.batch) tc.trpo.batch_steps = tc.ppo.batch_steps = *a.batch;
  if (g.seed) tc.seed = *g.seed;
  if (g.workers) tc.workers = *g.workers;
  validate(rc.env);
  validate(tc);
  const fs::path out = g.out.empty() ? fs::path("runs/train") : fs::path(g.out);
  fs::create_directories(out);
  manifest["seed"] = tc.seed;
  manifest["workers"] = tc.workers;
  manifest["env"] = to_json(rc.env);
  manifest["train"] = to_json(tc);
  manifest.write(out);
  const TrainResult r = train(rc.env, tc, {out}, [&](const IterationLog& l) {
    if (!a.quiet)
      std::cout << "iter " << l.iter << " steps " << l.steps << " return " << fmt(l.mean_return) << " ep_len "
                << fmt(l.mean_ep_len) << " kl " << fmt(l.mean_kl) << " ev " << fmt(l.explained_var)
                << (l.policy.note.empty() ? "" : " (" + l.policy.note + ")") << '\n';
  });
  manifest["iterations_completed"] = r.log.size();
  manifest.write(out);
  std::cout << "wrote " << (out / "checkpoint.bin").string() << '\n';
  return kExitOk;
}

// eval ------------------------------------------------------------------

struct EvalArgs {
  PolicyArgs policy;
  std::string model;
  std::vector<std::string> scenarios;
  std::optional<double> impulse;
  std::optional<double> direction;
  std::optional<int> seeds;
  std::string trajectory;
};

/// With `push_only`, an impulse is applied to push scenarios and ignored elsewhere.
Scenario resolve_scenario(const std::string& name, const RunConfig& rc, std::optional<double> impulse,
                          std::optional<double> direction, bool push_only = false) {
  Scenario s = (rc.scenario && rc.scenario->name == name) ? *rc.scenario : builtin_scenario(name);
  if (impulse && !(push_only && s.family != Family::Push)) {
    if (s.family != Family::Push) throw ConfigError("--impulse applies to push scenarios, not '" + name + "'");
    s.impulse = *impulse;
  }
  if (direction) s.direction = *direction;
  return s;
}

int cmd_eval(const Globals& g, const EvalArgs& a, Manifest& manifest) {
  RunConfig rc = load_run_config(g.config);
  if (!a.model.empty()) rc.env = env_for_model(a.model, rc.env);
  validate(rc.env);
  const int n_seeds = a.seeds.value_or(rc.eval.value("seeds", 1));
  if (n_seeds <= 0) throw ConfigError("--seeds must be > 0");
  std::vector<std::string> names = a.scenarios;
  if (names.empty()) names.push_back(rc.scenario ? rc.scenario->name : "quiet");
  const bool all = names.size() == 1 && names[0] == "all";
  if (all) names = builtin_scenario_names();
  const std::uint64_t seed0 = g.seed.value_or(0);
  std::vector<SweepItem> items;
  for (const auto& n : names) {
    const Scenario s = resolve_scenario(n, rc, a.impulse, a.direction, all);
    validate(s, rc.env.model);
    for (int k = 0; k < n_seeds; ++k) items.push_back({s, seed0 + static_cast<std::uint64_t>(k)});
  }
  const PolicySource policy = make_policy_source(a.policy, rc.env);
  const fs::path out = g.out.empty() ? fs::path("runs/eval") : fs::path(g.out);
  fs::create_directories(out);

  std::vector<EvalReport> reports;
  if (!a.trajectory.empty()) {
    EvalOptions opt;
    opt.trajectory_path = a.trajectory;
    reports.push_back(run_scenario(policy, items.front().scenario, rc.env, items.front().seed, opt));
    items.erase(items.begin());
  }
  for (auto& r : run_sweep(policy, items, rc.env, g.workers.value_or(1))) reports.push_back(std::move(r));
  write_reports(out / "eval_reports.jsonl", reports);
  write_sweep_csv(out / "eval_summary.csv", reports);
  for (const auto& r : reports)
    std::cout << r.scenario << " seed " << r.seed << " impulse " << fmt(r.impulse) << " normalized "
              << fmt(r.normalized_impulse) << ' ' << (r.success ? "success" : "failure: " + r.reason) << " steps "
              << r.steps_taken << '\n';
  json sc = json::array();
  for (const auto& n : names) sc.push_back(to_json(resolve_scenario(n, rc, a.impulse, a.direction, all)));
  manifest["seed"] = seed0;
  manifest["seeds"] = n_seeds;
  manifest["env"] = to_json(rc.env);
  manifest["scenarios"] = sc;
  manifest["policy"] = policy_json(a.policy);
  manifest.write(out);
  return kExitOk;
}

// search ----------------------------------------------------------------

struct SearchArgs {
  PolicyArgs policy;
  std::string model;
  std::string family = "pelvis-push";
  std::optional<double> resolution;
  std::optional<double> j_hi;
  std::optional<double> direction;
};

int cmd_search(const Globals& g, const SearchArgs& a, Manifest& manifest) {
  RunConfig rc = load_run_config(g.config);
  std::string family = a.family;
  std::string model = a.model;
  // "<plane>-<link>" shorthand selects the model too.
  for (const char* plane : {"sagittal", "frontal"}) {
    const std::string prefix = std::string(plane) + "-";
    if (family.rfind(prefix, 0) == 0) {
      if (model.empty()) model = plane;
      family = family.substr(prefix.size()) + "-push";
    }
  }
  if (!model.empty()) rc.env = env_for_model(model, rc.env);
  validate(rc.env);
  Scenario s = resolve_scenario(family, rc, std::nullopt, a.direction);
  if (s.family != Family::Push) throw ConfigError("search needs a push family, got '" + family + "'");
  const double resolution = a.resolution.value_or(rc.eval.value("resolution", 1.0));
  const double j_hi = a.j_hi.value_or(rc.eval.value("j_hi", -1.0));
  const std::uint64_t seed = g.seed.value_or(0);
  const PolicySource policy = make_policy_source(a.policy, rc.env);
  const SearchResult r = search_max_impulse(policy, s, rc.env, seed, resolution, j_hi);
  const fs::path out = g.out.empty() ? fs::path("runs/search") : fs::path(g.out);
  fs::create_directories(out);
  json probes = json::array();
  for (const auto& [j, ok] : r.probes) probes.push_back({{"impulse", j}, {"success", ok}});
  const json result = {{"family", s.name},
                       {"max_impulse", r.max_impulse},
                       {"normalized", r.max_impulse / rc.env.model.total_mass()},
                       {"bracket", {r.bracket_lo, r.bracket_hi}},
                       {"resolution", resolution},
                       {"probes", probes}};
  std::ofstream(out / "search.json") << result.dump(2) << '\n';
  std::cout << "max_impulse " << fmt(r.max_impulse) << " N s (normalized "
            << fmt(r.max_impulse / rc.env.model.total_mass()) << " N s/kg) bracket [" << fmt(r.bracket_lo) << ", "
            << fmt(r.bracket_hi) << "] probes " << r.probes.size() << '\n';
  manifest["seed"] = seed;
  manifest["env"] = to_json(rc.env);
  manifest["scenario"] = to_json(s);
  manifest["policy"] = policy_json(a.policy);
  manifest["result"] = result;
  manifest.write(out);
  return kExitOk;
}

// replay ----------------------------------------------------------------

struct ReplayArgs {
  std::string trajectory;
  std::string csv;
};

int cmd_replay(const Globals& g, const ReplayArgs& a, Manifest& manifest) {
  if (!fs::exists(a.trajectory)) throw ConfigError("trajectory log '" + a.trajectory + "' does not exist");
  const TrajectoryLog log = read_trajectory(a.trajectory);
  Env env(log.config);
  Trajectory traj;
  const Simulator& sim = env.simulator();
  env.set_tick_observer([&](const TickRecord& rec) {
    SimState st;
    st.q = rec.q;
    st.qd = rec.qd;
    st.t = rec.t;
    st.contacts = rec.contacts;
    traj.push_back(sample_state(sim, st, rec.torques));
  });
  const Eigen::VectorXd obs0 = env.reset(log.seed);
  traj.push_back(sample_state(sim, env.state(), Eigen::VectorXd::Zero(log.config.model.joint_count())));
  if (obs0 != log.initial_observation) {
    std::cerr << "replay diverged: initial observation differs from the log\n";
    return kExitNumerical;
  }
  for (size_t k = 0; k < log.actions.size(); ++k) {
    const StepResult r = env.step(log.actions[k]);
    if (r.observation != log.observations[k] || r.reward != log.rewards[k]) {
      std::cerr << "replay diverged at step " << k << '\n';
      return kExitNumerical;
    }
    if (r.terminated && k + 1 < log.actions.size()) {
      std::cerr << "replay terminated early at step " << k << '\n';
      return kExitNumerical;
    }
  }
  const fs::path out_dir = g.out.empty() ? fs::path("runs/replay") : fs::path(g.out);
  const fs::path csv = a.csv.empty() ? out_dir / "replay.csv" : fs::path(a.csv);
  if (csv.has_parent_path()) fs::create_directories(csv.parent_path());
  std::ofstream out(csv);
  if (!out) throw ConfigError("cannot write '" + csv.string() + "'");
  const std::vector<int> steps = cumulative_steps(traj);
  out << "t,com_x,com_z,pelvis_pitch,foot_l_x,foot_r_x,contact_l,contact_r,steps\n";
  char buf[256];
  for (size_t i = 0; i < traj.size(); ++i) {
    const TrajectorySample& s = traj[i];
    std::snprintf(buf, sizeof buf, "%.4f,%.17g,%.17g,%.17g,%.17g,%.17g,%d,%d,%d\n", s.t, s.com.x(), s.com.y(),
                  s.pelvis_pitch, s.foot_x[0], s.foot_x[1], s.foot_contact[0] ? 1 : 0, s.foot_contact[1] ? 1 : 0,
                  steps[i]);
    out << buf;
  }
  std::cout << "replayed " << log.actions.size() << " steps bit-identically; " << steps.back()
            << " foot steps; wrote " << csv.string() << '\n';
  manifest["trajectory"] = a.trajectory;
  manifest["seed"] = log.seed;
  manifest["csv"] = csv.string();
  manifest.write(out_dir);
  return kExitOk;
}

// model-validate --------------------------------------------------------

struct ModelArgs {
  std::string model = "sagittal";
  std::string dump;
};

int cmd_model_validate(const Globals&, const ModelArgs& a) {
  const EnvConfig env = env_for_model(a.model, EnvConfig{});
  const ModelSpec& m = env.model;
  validate(m);
  std::cout << "model ok: " << to_string(m.plane) << ", " << m.links.size() << " links, " << m.joint_count()
            << " joints, " << m.contacts.size() << " contacts, dof " << m.dof() << ", mass " << fmt(m.total_mass())
            << " kg, observation " << observation_dim(m) << ", resting CoM height "
            << fmt(env.reward.com_height_target) << " m\n";
  if (!a.dump.empty()) save_model(m, a.dump);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Push-recovery biped: training, evaluation and analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON bundle with env, train, scenario and eval sections")
      ->envname("PUSHREC_CONFIG");
  app.add_option("--seed", g.seed, "Base seed")->envname("PUSHREC_SEED");
  app.add_option("--out", g.out, "Output directory")->envname("PUSHREC_OUT");
  app.add_option("--workers", g.workers, "Parallel environment workers")->envname("PUSHREC_WORKERS");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a policy");
  train_cmd->add_option("--algo", ta.algo, "trpo or ppo");
  train_cmd->add_option("--model", ta.model, "sagittal, frontal or a model JSON file");
  train_cmd->add_option("--iters", ta.iters, "Training iterations");
  train_cmd->add_option("--checkpoint-every", ta.checkpoint_every, "Iterations between checkpoints (0: final only)");
  train_cmd->add_option("--batch", ta.batch, "Environment steps per iteration");
  train_cmd->add_flag("--quiet", ta.quiet, "No per-iteration output");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Run evaluation scenarios");
  add_policy_options(eval_cmd, ea.policy);
  eval_cmd->add_option("--model", ea.model, "sagittal, frontal or a model JSON file");
  eval_cmd->add_option("--scenario", ea.scenarios, "Scenario name, repeatable, or 'all'");
  eval_cmd->add_option("--impulse", ea.impulse, "Push impulse magnitude, N s");
  eval_cmd->add_option("--direction", ea.direction, "Push direction, +1 or -1");
  eval_cmd->add_option("--seeds", ea.seeds, "Seeds per scenario, counting up from --seed (default 1)");
  eval_cmd->add_option("--trajectory", ea.trajectory, "Write the first run's trajectory log here");

  SearchArgs sa;
  auto* search_cmd = app.add_subcommand("search", "Bisect the largest rejectable impulse");
  add_policy_options(search_cmd, sa.policy);
  search_cmd->add_option("--model", sa.model, "sagittal, frontal or a model JSON file");
  search_cmd->add_option("--family", sa.family, "Push scenario, or <plane>-<link> such as sagittal-pelvis")
      ->capture_default_str();
  search_cmd->add_option("--resolution", sa.resolution, "Bracket width at exit, N s");
  search_cmd->add_option("--j-hi", sa.j_hi, "Upper impulse bound, N s (default: 4x the capture-point bound)");
  search_cmd->add_option("--direction", sa.direction, "Push direction, +1 or -1");

  ReplayArgs ra;
  auto* replay_cmd = app.add_subcommand("replay", "Re-simulate a trajectory log and emit kinematics CSV");
  replay_cmd->add_option("--trajectory", ra.trajectory, "Trajectory log (JSONL)")->required();
  replay_cmd->add_option("--csv", ra.csv, "Output CSV (default: <out>/replay.csv)");

  ModelArgs ma;
  auto* model_cmd = app.add_subcommand("model-validate", "Validate a model and print its summary");
  model_cmd->add_option("--model", ma.model, "sagittal, frontal or a model JSON file")->capture_default_str();
  model_cmd->add_option("--dump", ma.dump, "Write the validated model JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train_cmd->parsed()) {
      Manifest m("train", argc, argv);
      return cmd_train(g, ta, m);
    }
    if (eval_cmd->parsed()) {
      Manifest m("eval", argc, argv);
      return cmd_eval(g, ea, m);
    }
    if (search_cmd->parsed()) {
      Manifest m("search", argc, argv);
      return cmd_search(g, sa, m);
    }
    if (replay_cmd->parsed()) {
      Manifest m("replay", argc, argv);
      return cmd_replay(g, ra, m);
    }
    if (model_cmd->parsed()) return cmd_model_validate(g, ma);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const IntegrationFailure& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  return kExitConfig;
}
