#include "pushrec/train.hpp"

#include <bit>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <thread>

#include "pushrec/json_io.hpp"

namespace pushrec {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::string to_string(Algo a) { return a == Algo::Trpo ? "trpo" : "ppo"; }

Algo algo_from_string(const std::string& s) {
  if (s == "trpo") return Algo::Trpo;
  if (s == "ppo") return Algo::Ppo;
  throw ConfigError("unknown algorithm '" + s + "' (expected trpo or ppo)");
}

void validate(const TrainConfig& c) {
  validate(c.trpo);
  validate(c.ppo);
  if (c.iterations < 0) throw ConfigError("iterations must be >= 0");
  if (c.workers <= 0) throw ConfigError("workers must be > 0");
  if (c.workers > c.batch_steps()) throw ConfigError("more workers than steps per batch");
  if (c.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (!std::isfinite(c.log_std_init)) throw ConfigError("log_std_init must be finite");
  if (c.hidden.empty()) throw ConfigError("hidden layer list must not be empty");
  for (int h : c.hidden)
    if (h <= 0) throw ConfigError("hidden layer widths must be > 0");
}

namespace {

using json_io::read_opt;
using json_io::reject_unknown;

json trpo_json(const TrpoConfig& c) {
  return {{"batch_steps", c.batch_steps},     {"max_kl", c.max_kl},
          {"kl_slack", c.kl_slack},           {"cg_iterations", c.cg_iterations},
          {"cg_damping", c.cg_damping},       {"backtrack_steps", c.backtrack_steps},
          {"fvp_stride", c.fvp_stride},       {"entropy_coef", c.entropy_coef},   {"value_epochs", c.value_epochs},
          {"value_minibatch", c.value_minibatch}, {"value_lr", c.value_lr},
          {"gamma", c.gamma},                 {"lambda", c.lambda}};
}

json ppo_json(const PpoConfig& c) {
  return {{"batch_steps", c.batch_steps},   {"clip", c.clip},
          {"epochs", c.epochs},             {"minibatch", c.minibatch},
          {"lr", c.lr},                     {"entropy_coef", c.entropy_coef},
          {"value_epochs", c.value_epochs}, {"value_minibatch", c.value_minibatch},
          {"value_lr", c.value_lr},         {"gamma", c.gamma},
          {"lambda", c.lambda}};
}

}  // namespace

json to_json(const TrainConfig& c) {
  return {{"algo", to_string(c.algo)},
          {"iterations", c.iterations},
          {"workers", c.workers},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"log_std_init", c.log_std_init},
          {"normalize_observations", c.normalize_observations},
          {"normalize_advantages", c.normalize_advantages},
          {"hidden", c.hidden},
          {"trpo", trpo_json(c.trpo)},
          {"ppo", ppo_json(c.ppo)}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"algo", "iterations", "workers", "seed", "checkpoint_every", "log_std_init",
                  "normalize_observations", "normalize_advantages", "hidden", "trpo", "ppo"},
                 "train config");
  TrainConfig c;
  if (j.contains("algo")) c.algo = algo_from_string(j.at("algo").get<std::string>());
  read_opt(j, "iterations", c.iterations, "train");
  read_opt(j, "workers", c.workers, "train");
  read_opt(j, "seed", c.seed, "train");
  read_opt(j, "checkpoint_every", c.checkpoint_every, "train");
  read_opt(j, "log_std_init", c.log_std_init, "train");
  read_opt(j, "normalize_observations", c.normalize_observations, "train");
  read_opt(j, "normalize_advantages", c.normalize_advantages, "train");
  read_opt(j, "hidden", c.hidden, "train");
  if (j.contains("trpo")) {
    const json& t = j.at("trpo");
    reject_unknown(t,
                   {"batch_steps", "max_kl", "kl_slack", "cg_iterations", "cg_damping", "backtrack_steps",
                    "fvp_stride", "entropy_coef", "value_epochs", "value_minibatch", "value_lr", "gamma", "lambda"},
                   "trpo");
    auto& r = c.trpo;
    read_opt(t, "batch_steps", r.batch_steps, "trpo");
    read_opt(t, "max_kl", r.max_kl, "trpo");
    read_opt(t, "kl_slack", r.kl_slack, "trpo");
    read_opt(t, "cg_iterations", r.cg_iterations, "trpo");
    read_opt(t, "cg_damping", r.cg_damping, "trpo");
    read_opt(t, "backtrack_steps", r.backtrack_steps, "trpo");
    read_opt(t, "fvp_stride", r.fvp_stride, "trpo");
    read_opt(t, "entropy_coef", r.entropy_coef, "trpo");
    read_opt(t, "value_epochs", r.value_epochs, "trpo");
    read_opt(t, "value_minibatch", r.value_minibatch, "trpo");
    read_opt(t, "value_lr", r.value_lr, "trpo");
    read_opt(t, "gamma", r.gamma, "trpo");
    read_opt(t, "lambda", r.lambda, "trpo");
  }
  if (j.contains("ppo")) {
    const json& t = j.at("ppo");
    reject_unknown(t,
                   {"batch_steps", "clip", "epochs", "minibatch", "lr", "entropy_coef", "value_epochs",
                    "value_minibatch", "value_lr", "gamma", "lambda"},
                   "ppo");
    auto& r = c.ppo;
    read_opt(t, "batch_steps", r.batch_steps, "ppo");
    read_opt(t, "clip", r.clip, "ppo");
    read_opt(t, "epochs", r.epochs, "ppo");
    read_opt(t, "minibatch", r.minibatch, "ppo");
    read_opt(t, "lr", r.lr, "ppo");
    read_opt(t, "entropy_coef", r.entropy_coef, "ppo");
    read_opt(t, "value_epochs", r.value_epochs, "ppo");
    read_opt(t, "value_minibatch", r.value_minibatch, "ppo");
    read_opt(t, "value_lr", r.value_lr, "ppo");
    read_opt(t, "gamma", r.gamma, "ppo");
    read_opt(t, "lambda", r.lambda, "ppo");
  }
  validate(c);
  return c;
}

Eigen::MatrixXd ActorCritic::prepare(const Eigen::MatrixXd& raw_obs) const {
  return normalize_observations ? obs_norm.apply(raw_obs) : raw_obs;
}

Eigen::VectorXd ActorCritic::prepare_one(const Eigen::VectorXd& raw_obs) const {
  return normalize_observations ? obs_norm.apply_one(raw_obs) : raw_obs;
}

Eigen::VectorXd ActorCritic::act(const Eigen::VectorXd& raw_obs) const {
  return policy.mean_action(prepare_one(raw_obs));
}

ActorCritic make_actor_critic(int obs_dim, int act_dim, const TrainConfig& cfg, std::mt19937_64& rng) {
  ActorCritic ac;
  ac.policy = make_policy(obs_dim, act_dim, cfg.log_std_init, rng, cfg.hidden);
  ac.value = make_value_function(obs_dim, rng, cfg.hidden);
  ac.obs_norm = RunningNorm(obs_dim);
  ac.normalize_observations = cfg.normalize_observations;
  return ac;
}

namespace {

class Writer {
 public:
  explicit Writer(const std::filesystem::path& p) : out_(p, std::ios::binary) {
    if (!out_) throw CheckpointError("cannot write checkpoint '" + p.string() + "'");
  }
  void u32(std::uint32_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64s(const double* p, Eigen::Index n) { out_.write(reinterpret_cast<const char*>(p), n * sizeof(double)); }
  void bytes(const char* p, size_t n) { out_.write(p, static_cast<std::streamsize>(n)); }
  void finish(const std::filesystem::path& p) {
    out_.flush();
    if (!out_) throw CheckpointError("failed writing checkpoint '" + p.string() + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& p) : in_(p, std::ios::binary), path_(p.string()) {
    if (!in_) throw CheckpointError("cannot open checkpoint '" + path_ + "'");
  }
  std::uint32_t u32() {
    std::uint32_t v;
    read(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    read(&v, sizeof v);
    return v;
  }
  void f64s(double* p, Eigen::Index n) { read(p, n * sizeof(double)); }
  void read(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in_) throw CheckpointError("checkpoint '" + path_ + "' is truncated");
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& path() const { return path_; }

 private:
  std::ifstream in_;
  std::string path_;
};

void write_table(Writer& w, const Mlp& m) {
  w.u32(static_cast<std::uint32_t>(m.dims().size()));
  for (int d : m.dims()) w.u32(static_cast<std::uint32_t>(d));
  w.u32(m.hidden() == Activation::Tanh ? 0u : 1u);
}

Mlp read_table(Reader& r) {
  const std::uint32_t n = r.u32();
  if (n < 2 || n > 64) throw CheckpointError("checkpoint '" + r.path() + "' has a corrupt layer table");
  std::vector<int> dims(n);
  for (auto& d : dims) {
    d = static_cast<int>(r.u32());
    if (d <= 0 || d > 1 << 20) throw CheckpointError("checkpoint '" + r.path() + "' has a corrupt layer width");
  }
  const std::uint32_t act = r.u32();
  if (act > 1) throw CheckpointError("checkpoint '" + r.path() + "' has an unknown activation tag");
  return Mlp(dims, act == 0 ? Activation::Tanh : Activation::Relu);
}

void write_weights(Writer& w, const Mlp& m) {
  for (int l = 0; l < m.layer_count(); ++l) w.f64s(m.weight(l).data(), m.weight(l).size());
}
void write_biases(Writer& w, const Mlp& m) {
  for (int l = 0; l < m.layer_count(); ++l) w.f64s(m.bias(l).data(), m.bias(l).size());
}
void read_weights(Reader& r, Mlp& m) {
  for (int l = 0; l < m.layer_count(); ++l) r.f64s(m.weight(l).data(), m.weight(l).size());
}
void read_biases(Reader& r, Mlp& m) {
  for (int l = 0; l < m.layer_count(); ++l) r.f64s(m.bias(l).data(), m.bias(l).size());
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ActorCritic& ac) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    Writer w(tmp);
    w.bytes("BLRL", 4);
    w.u32(kCheckpointVersion);
    w.u32(ac.normalize_observations ? 1u : 0u);
    write_table(w, ac.policy.mean);
    write_table(w, ac.value);
    write_weights(w, ac.policy.mean);
    write_biases(w, ac.policy.mean);
    w.f64s(ac.policy.log_std.data(), ac.policy.log_std.size());
    write_weights(w, ac.value);
    write_biases(w, ac.value);
    w.f64(ac.obs_norm.count);
    w.f64(ac.obs_norm.clip);
    w.f64s(ac.obs_norm.mean.data(), ac.obs_norm.mean.size());
    w.f64s(ac.obs_norm.var.data(), ac.obs_norm.var.size());
    w.finish(tmp);
  }
  std::filesystem::rename(tmp, path);
}

ActorCritic load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[4];
  r.read(magic, 4);
  if (std::memcmp(magic, "BLRL", 4) != 0) throw CheckpointError("'" + path.string() + "' is not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint '" + path.string() + "' has unsupported version " + std::to_string(version));
  const std::uint32_t flags = r.u32();
  ActorCritic ac;
  ac.normalize_observations = (flags & 1u) != 0;
  Mlp actor = read_table(r);
  ac.value = read_table(r);
  if (ac.value.output_dim() != 1 || ac.value.input_dim() != actor.input_dim())
    throw CheckpointError("checkpoint '" + path.string() + "' has inconsistent actor and critic shapes");
  read_weights(r, actor);
  read_biases(r, actor);
  Eigen::VectorXd log_std(actor.output_dim());
  r.f64s(log_std.data(), log_std.size());
  ac.policy = GaussianPolicy(std::move(actor), std::move(log_std));
  read_weights(r, ac.value);
  read_biases(r, ac.value);
  ac.obs_norm = RunningNorm(ac.policy.obs_dim());
  ac.obs_norm.count = r.f64();
  ac.obs_norm.clip = r.f64();
  r.f64s(ac.obs_norm.mean.data(), ac.obs_norm.mean.size());
  r.f64s(ac.obs_norm.var.data(), ac.obs_norm.var.size());
  if (!r.at_end()) throw CheckpointError("checkpoint '" + path.string() + "' has trailing bytes");
  return ac;
}

std::string csv_row(const IterationLog& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%lld,%.17g,%.17g,%.17g,%.17g,%.3f", r.iter, static_cast<long long>(r.steps),
                r.mean_return, r.mean_ep_len, r.mean_kl, r.explained_var, r.wall_s);
  return buf;
}

std::uint64_t worker_seed(std::uint64_t seed, int worker) {
  // splitmix64 of (seed, worker) so neighbouring seeds give unrelated streams.
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(worker) + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

class Worker {
 public:
  Worker(const EnvConfig& cfg, std::uint64_t seed) : env_(cfg), rng_(seed) { start_episode(); }

  void collect(const ActorCritic& ac, int steps, Rollout& out) {
    const int od = env_.observation_dim();
    out = Rollout{};
    out.raw_obs.resize(od, steps);
    out.actions.resize(env_.action_dim(), steps);
    out.logp.resize(steps);
    out.rewards.resize(steps);
    int seg_start = 0;
    for (int i = 0; i < steps; ++i) {
      out.raw_obs.col(i) = obs_;
      const auto [a, lp] = ac.policy.sample(ac.prepare_one(obs_), rng_);
      out.actions.col(i) = a;
      out.logp[i] = lp;
      const StepResult r = env_.step(a);
      out.rewards[i] = r.reward;
      ret_ += r.reward;
      ++len_;
      if (r.terminated) {
        out.segments.push_back({seg_start, i + 1 - seg_start, r.reason != Termination::TimeLimit, r.observation});
        out.episode_returns.push_back(ret_);
        out.episode_lengths.push_back(len_);
        start_episode();
        seg_start = i + 1;
      } else {
        obs_ = r.observation;
      }
    }
    if (seg_start < steps) out.segments.push_back({seg_start, steps - seg_start, false, obs_});
  }

 private:
  void start_episode() {
    obs_ = env_.reset(rng_());
    ret_ = 0.0;
    len_ = 0;
  }

  Env env_;
  std::mt19937_64 rng_;
  Eigen::VectorXd obs_;
  double ret_ = 0.0;
  int len_ = 0;
};

void write_checkpoint(const TrainOutput& out, const std::string& name, const ActorCritic& ac) {
  if (out.dir.empty()) return;
  save_checkpoint(out.dir / name, ac);
}

}  // namespace

TrainResult train(const EnvConfig& env_config, const TrainConfig& cfg, const TrainOutput& out,
                  const std::function<void(const IterationLog&)>& on_iteration) {
  validate(env_config);
  validate(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const Env probe(env_config);
  std::mt19937_64 init_rng(worker_seed(cfg.seed, -1));
  std::mt19937_64 update_rng(worker_seed(cfg.seed, -2));
  TrainResult result;
  ActorCritic& ac = result.model;
  ac = make_actor_critic(probe.observation_dim(), probe.action_dim(), cfg, init_rng);
  Adam value_opt(ac.value.param_count(), cfg.value_lr());
  Adam policy_opt(ac.policy.param_count(), cfg.ppo.lr);

  std::ofstream csv;
  if (!out.dir.empty()) {
    std::filesystem::create_directories(out.dir);
    csv.open(out.dir / "train_log.csv");
    if (!csv) throw ConfigError("cannot write '" + (out.dir / "train_log.csv").string() + "'");
    csv << kTrainCsvHeader << '\n';
  }

  std::vector<Worker> workers;
  workers.reserve(cfg.workers);
  for (int w = 0; w < cfg.workers; ++w) workers.emplace_back(env_config, worker_seed(cfg.seed, w));

  std::int64_t total_steps = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    const int n = cfg.batch_steps();
    std::vector<Rollout> parts(cfg.workers);
    std::vector<std::exception_ptr> errors(cfg.workers);
    auto run = [&](int w) {
      try {
        const int quota = n / cfg.workers + (w < n % cfg.workers ? 1 : 0);
        workers[w].collect(ac, quota, parts[w]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    };
    if (cfg.workers == 1) {
      run(0);
    } else {
      std::vector<std::thread> threads;
      for (int w = 0; w < cfg.workers; ++w) threads.emplace_back(run, w);
      for (auto& t : threads) t.join();
    }
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);

    // Merge in worker order.
    Rollout all;
    all.raw_obs.resize(probe.observation_dim(), n);
    all.actions.resize(probe.action_dim(), n);
    all.logp.resize(n);
    int offset = 0;
    for (const Rollout& p : parts) {
      const int m = static_cast<int>(p.rewards.size());
      all.raw_obs.middleCols(offset, m) = p.raw_obs;
      all.actions.middleCols(offset, m) = p.actions;
      all.logp.segment(offset, m) = p.logp;
      all.rewards.insert(all.rewards.end(), p.rewards.begin(), p.rewards.end());
      for (Rollout::End s : p.segments) {
        s.start += offset;
        all.segments.push_back(std::move(s));
      }
      all.episode_returns.insert(all.episode_returns.end(), p.episode_returns.begin(), p.episode_returns.end());
      all.episode_lengths.insert(all.episode_lengths.end(), p.episode_lengths.begin(), p.episode_lengths.end());
      offset += m;
    }

    Batch batch;
    batch.obs = ac.prepare(all.raw_obs);
    batch.actions = all.actions;
    batch.logp = all.logp;
    const Eigen::VectorXd values = ac.value.forward(batch.obs).row(0).transpose();
    std::vector<Segment> segments;
    for (const auto& s : all.segments) {
      const double boot = s.terminal ? 0.0 : ac.value.forward_one(ac.prepare_one(s.next_obs))[0];
      segments.push_back({s.start, s.length, boot});
    }
    compute_targets(all.rewards, values, segments, cfg.gamma(), cfg.lambda(), batch);

    IterationLog log;
    log.iter = it;
    total_steps += n;
    log.steps = total_steps;
    log.episodes = static_cast<int>(all.episode_returns.size());
    if (log.episodes > 0) {
      double sr = 0.0, sl = 0.0;
      for (size_t e = 0; e < all.episode_returns.size(); ++e) {
        sr += all.episode_returns[e];
        sl += all.episode_lengths[e];
      }
      log.mean_return = sr / log.episodes;
      log.mean_ep_len = sl / log.episodes;
    }
    log.explained_var = explained_variance(values, batch.returns);
    log.value = value_fit(ac.value, value_opt, batch.obs, batch.returns, cfg.value_epochs(), cfg.value_minibatch(),
                          update_rng);
    if (cfg.normalize_advantages) normalize_advantages(batch.advantages);
    log.policy = cfg.algo == Algo::Trpo ? trpo_update(ac.policy, batch, cfg.trpo)
                                        : ppo_update(ac.policy, policy_opt, batch, cfg.ppo, update_rng);
    log.mean_kl = log.policy.kl;
    if (cfg.normalize_observations) ac.obs_norm.update(all.raw_obs);
    log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (csv.is_open()) csv << csv_row(log) << '\n' << std::flush;
    if (cfg.checkpoint_every > 0 && (it + 1) % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "checkpoint_%04d.bin", it + 1);
      write_checkpoint(out, name, ac);
    }
    if (on_iteration) on_iteration(log);
    result.log.push_back(std::move(log));
  }
  write_checkpoint(out, "checkpoint.bin", ac);
  return result;
}

}  // namespace pushrec
