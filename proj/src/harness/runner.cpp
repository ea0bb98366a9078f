#include "mfsc/harness/runner.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mfsc/util/random.hpp"

namespace mfsc::harness {

namespace fs = std::filesystem;

namespace {

constexpr const char* kStateFile = "trainer_state.json";
constexpr const char* kMetricsFile = "metrics.jsonl";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_atomic(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return json::parse(in);
}

json obs_to_json(const envs::MultiViewObservation& o) {
  json status = json::array();
  for (auto s : o.status) status.push_back(int(s));
  return {{"height", o.height}, {"width", o.width}, {"channels", o.channels}, {"views", o.views}, {"status", status}};
}

envs::MultiViewObservation obs_from_json(const json& j) {
  envs::MultiViewObservation o;
  o.height = j.at("height");
  o.width = j.at("width");
  o.channels = j.at("channels");
  o.views = j.at("views").get<std::vector<std::vector<float>>>();
  for (int s : j.at("status")) o.status.push_back(envs::ViewStatus(s));
  return o;
}

json pool_to_json(const agent::PoolSnapshot& p) {
  json envs = json::array();
  for (const auto& e : p.envs) {
    envs.push_back({{"rng", e.rng}, {"state", e.state}, {"t", e.t}, {"started", e.started}, {"over", e.over},
                    {"history", e.history}});
  }
  json current = json::array();
  for (const auto& o : p.current) current.push_back(obs_to_json(o));
  return {{"envs", envs},
          {"current", current},
          {"state", p.state},
          {"start", p.start},
          {"running_length", p.running_length},
          {"running_return", p.running_return},
          {"restarts", p.restarts},
          {"env_steps", p.env_steps}};
}

agent::PoolSnapshot pool_from_json(const json& j) {
  agent::PoolSnapshot p;
  for (const auto& e : j.at("envs")) {
    envs::EpisodeSnapshot s;
    s.rng = e.at("rng");
    s.state = e.at("state");
    s.t = e.at("t");
    s.started = e.at("started");
    s.over = e.at("over");
    s.history = e.at("history").get<std::vector<std::vector<float>>>();
    p.envs.push_back(std::move(s));
  }
  for (const auto& o : j.at("current")) p.current.push_back(obs_from_json(o));
  p.state = j.at("state").get<std::vector<std::size_t>>();
  p.start = j.at("start").get<std::vector<std::size_t>>();
  p.running_length = j.at("running_length").get<std::vector<std::size_t>>();
  p.running_return = j.at("running_return").get<std::vector<double>>();
  p.restarts = j.at("restarts");
  p.env_steps = j.at("env_steps");
  return p;
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_load(std::mt19937_64& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw std::runtime_error("corrupt rng state in trainer state");
}

json eval_json(const agent::EvalResult& r) {
  return {{"mean_return", r.mean_return},
          {"success_rate", r.success_rate},
          {"mean_length", r.mean_length},
          {"episodes", r.returns.size()}};
}

class MetricsLog {
 public:
  MetricsLog(const fs::path& path, std::uintmax_t keep_bytes, std::function<void(const json&)> hook)
      : hook_(std::move(hook)) {
    if (fs::exists(path)) fs::resize_file(path, keep_bytes);
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw std::runtime_error("cannot open " + path.string());
  }
  void write(const json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (hook_) hook_(record);
  }
  std::uintmax_t bytes() { return std::uintmax_t(out_.tellp()); }

 private:
  std::ofstream out_;
  std::function<void(const json&)> hook_;
};

}  // namespace

json evaluation_record(const ExperimentConfig& cfg, const agent::Agent& agent, std::uint64_t seed,
                       std::uint64_t step, SeedResult* into) {
  const envs::GridWorld env(eval_env_config(cfg.env));
  const auto starts = env.start_states();
  const double oracle = oracle_return(env, starts);
  json modes = json::object();
  for (const auto& mode : cfg.eval_modes) {
    const auto r = evaluate_mode(agent, cfg.env, mode, cfg.eval_episodes, seed);
    auto j = eval_json(r);
    j["fraction_of_oracle"] = oracle != 0.0 ? r.mean_return / oracle : 0.0;
    modes[mode.name()] = j;
    if (into) into->final_eval[mode.name()] = r;
  }
  const auto rep = representation_quality(agent, env, cfg.metric_pairs, cfg.agent.weights.c_t, seed);
  if (into) {
    into->oracle_return = oracle;
    into->representation = rep;
  }
  return {{"kind", "eval"},
          {"step", step},
          {"oracle_return", oracle},
          {"modes", modes},
          {"representation",
           {{"spearman", rep.spearman},
            {"pairs", rep.pairs},
            {"states", rep.states},
            {"spearman_all_states", rep.spearman_all_states}}}};
}

agent::Agent load_agent(const ExperimentConfig& cfg, const fs::path& seed_dir) {
  const auto state = read_json(seed_dir / kStateFile);
  agent::Agent a(cfg.agent, envs::kNumActions, state.at("seed").get<std::uint64_t>());
  a.load_state(tensor::read_checkpoint(seed_dir / state.at("checkpoint").get<std::string>()));
  return a;
}

SeedResult train_seed(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& dir, const RunOptions& opts) {
  fs::create_directories(dir);
  const auto hash = config_hash(cfg);
  const auto& ppo = cfg.agent.ppo;

  agent::Agent agent(cfg.agent, envs::kNumActions, seed);
  agent::WorkerPool pool(cfg.env, ppo.workers, seed);
  std::mt19937_64 rng(util::derive_seed(seed, 600));

  SeedResult result;
  result.seed = seed;
  result.dir = dir;
  std::size_t iteration = 0;
  std::uint64_t next_eval = cfg.eval_every;
  std::uintmax_t metrics_bytes = 0;
  std::string checkpoint;

  const auto state_path = dir / kStateFile;
  if (opts.resume && fs::exists(state_path)) {
    const auto st = read_json(state_path);
    if (st.at("config_hash") != hash || st.at("seed") != seed) {
      throw ConfigError("resume: " + state_path.string() + " belongs to a different config or seed");
    }
    if (st.at("status") == "complete") {
      // Nothing to train; report the finished run again.
      auto done = load_agent(cfg, dir);
      evaluation_record(cfg, done, seed, st.at("env_steps"), &result);
      result.status = "complete";
      result.env_steps = st.at("env_steps");
      result.iterations = st.at("iteration");
      result.episode_returns = st.at("episode_returns").get<std::vector<double>>();
      return result;
    }
    checkpoint = st.at("checkpoint");
    agent.load_state(tensor::read_checkpoint(dir / checkpoint));
    pool.restore(pool_from_json(st.at("pool")));
    rng_load(rng, st.at("rng"));
    iteration = st.at("iteration");
    next_eval = st.at("next_eval");
    metrics_bytes = st.at("metrics_bytes");
    result.episode_returns = st.at("episode_returns").get<std::vector<double>>();
    std::clog << "[mfsc] seed " << seed << ": resuming at iteration " << iteration << " (" << pool.env_steps()
              << " steps)\n";
  } else if (fs::exists(dir / kMetricsFile)) {
    fs::remove(dir / kMetricsFile);
  }
  MetricsLog log(dir / kMetricsFile, metrics_bytes, opts.on_record);

  auto save = [&](const std::string& status) {
    const auto name = "checkpoint_" + std::to_string(iteration) + ".bin";
    tensor::write_checkpoint(dir / (name + ".tmp"), agent.state());
    fs::rename(dir / (name + ".tmp"), dir / name);
    const json st = {{"config_hash", hash},
                     {"seed", seed},
                     {"status", status},
                     {"iteration", iteration},
                     {"env_steps", pool.env_steps()},
                     {"next_eval", next_eval},
                     {"metrics_bytes", log.bytes()},
                     {"checkpoint", name},
                     {"rng", rng_text(rng)},
                     {"pool", pool_to_json(pool.snapshot())},
                     {"episode_returns", result.episode_returns}};
    write_atomic(state_path, st.dump());
    if (!checkpoint.empty() && checkpoint != name) fs::remove(dir / checkpoint);
    checkpoint = name;
  };

  std::size_t run_here = 0;
  while (pool.env_steps() < cfg.total_steps) {
    if (opts.stop_after_iterations && run_here == opts.stop_after_iterations) {
      result.status = "stopped";
      result.env_steps = pool.env_steps();
      result.iterations = iteration;
      return result;
    }
    if (ppo.lr_schedule == agent::LrSchedule::linear) {
      agent.set_learning_rate_scale(1.0 - double(pool.env_steps()) / double(cfg.total_steps));
    }
    auto buffer = agent::collect_rollout(pool, agent.actor(), ppo.rollout_length, rng, &agent.normalizer());
    agent::compute_gae(buffer, ppo.discount, ppo.gae_lambda);
    agent::UpdateStats stats;
    try {
      stats = agent.update(buffer, rng);
    } catch (const agent::UpdateAborted& e) {
      const json dump = {{"kind", "aborted"},
                         {"iteration", iteration},
                         {"step", pool.env_steps()},
                         {"error", e.what()},
                         {"minibatch", e.minibatch},
                         {"losses", {{"policy", e.loss_values.at(0)},
                                     {"value", e.loss_values.at(1)},
                                     {"fusion", e.loss_values.at(2)},
                                     {"reconstruction", e.loss_values.at(3)},
                                     {"dynamics", e.loss_values.at(4)}}}};
      write_atomic(dir / ("aborted_" + std::to_string(iteration) + ".json"), dump.dump(2));
      log.write(dump);
      std::clog << "[mfsc] seed " << seed << ": update aborted at iteration " << iteration << ": " << e.what() << '\n';
      result.status = "aborted";
      result.env_steps = pool.env_steps();
      result.iterations = iteration;
      return result;
    }
    ++iteration;
    ++run_here;

    json episodes = json::array();
    double sum = 0;
    const auto finished = pool.take_finished();
    for (const auto& ep : finished) {
      episodes.push_back({{"return", ep.raw_return}, {"length", ep.length}, {"goal", ep.reached_goal}});
      result.episode_returns.push_back(ep.raw_return);
      sum += ep.raw_return;
    }
    const auto& norm = agent.normalizer();
    log.write({{"kind", "train"},
               {"iteration", iteration},
               {"step", pool.env_steps()},
               {"episodes", episodes},
               {"episode_return_raw", finished.empty() ? json(nullptr) : json(sum / double(finished.size()))},
               {"epochs", stats.epochs_completed},
               {"early_stopped", stats.early_stopped},
               {"kl", stats.approx_kl},
               {"max_kl", stats.max_kl},
               {"clip_fraction", stats.clip_fraction},
               {"grad_norm", stats.grad_norm},
               {"losses",
                {{"policy", stats.policy_loss},
                 {"value", stats.value_loss},
                 {"entropy", stats.entropy},
                 {"fusion", stats.l_fus},
                 {"reconstruction", stats.l_rec},
                 {"dynamics", stats.l_dyn}}},
               {"reward_stats", {{"mean", norm.mean()}, {"std", norm.stddev()}, {"count", norm.count()}}},
               {"worker_restarts", pool.restarts()}});

    if (cfg.eval_every > 0 && pool.env_steps() >= next_eval && pool.env_steps() < cfg.total_steps) {
      log.write(evaluation_record(cfg, agent, seed, pool.env_steps()));
      while (next_eval <= pool.env_steps()) next_eval += cfg.eval_every;
    }
    save("running");
  }

  auto final_record = evaluation_record(cfg, agent, seed, pool.env_steps(), &result);
  final_record["final"] = true;
  log.write(final_record);
  save("complete");
  result.status = "complete";
  result.env_steps = pool.env_steps();
  result.iterations = iteration;
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  ExperimentResult out;
  out.dir = resolve_output(cfg.output_dir);
  fs::create_directories(out.dir);
  const auto manifest_path = out.dir / "manifest.json";
  json manifest = {{"version", MFSC_VERSION},
                   {"metrics_schema", kMetricsSchema},
                   {"config_hash", config_hash(cfg)},
                   {"config", to_json(cfg)},
                   {"started", utc_now()},
                   {"status", "running"},
                   {"seeds", json::array()}};
  for (auto s : cfg.seeds) {
    manifest["seeds"].push_back({{"seed", s},
                                 {"dir", "seed_" + std::to_string(s)},
                                 {"metrics", "seed_" + std::to_string(s) + "/" + kMetricsFile},
                                 {"status", "pending"}});
  }
  write_atomic(manifest_path, manifest.dump(2));

  std::string overall = "complete";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const auto seed = cfg.seeds[i];
    auto r = train_seed(cfg, seed, out.dir / ("seed_" + std::to_string(seed)), opts);
    auto& entry = manifest["seeds"][i];
    entry["status"] = r.status;
    entry["env_steps"] = r.env_steps;
    entry["finished"] = utc_now();
    if (r.status != "complete") overall = r.status;
    write_atomic(manifest_path, manifest.dump(2));
    out.seeds.push_back(std::move(r));
  }
  manifest["status"] = overall;
  manifest["finished"] = utc_now();
  write_atomic(manifest_path, manifest.dump(2));
  return out;
}

}  // namespace mfsc::harness
