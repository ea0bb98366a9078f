// mfsc: command-line driver.
//
// Exit codes: 0 success, 1 verification or run failure, 2 usage or config error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "mfsc/envs/export.hpp"
#include "mfsc/harness/config.hpp"
#include "mfsc/harness/evaluation.hpp"
#include "mfsc/harness/runner.hpp"
#include "mfsc/harness/theory.hpp"

namespace fs = std::filesystem;
using namespace mfsc;
using harness::json;

namespace {

constexpr int kOk = 0, kFail = 1, kUsage = 2;

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------- verify-theory

struct TheoryArgs {
  std::string suite = "all";
  std::size_t count = 0;
  double c = -1.0;
  double gamma = 0.9;
  double slack = 1e-6;
  std::size_t max_states = 12, max_actions = 4;
  std::uint64_t seed = 1;
  std::string report;
  std::string failures_dir = "theory_failures";
};

int run_verify_theory(const TheoryArgs& a) {
  const bool fixed = a.suite == "all" || a.suite == "fixed-point";
  const bool bound = a.suite == "all" || a.suite == "bound";
  if (bound && a.c >= 0 && a.c < a.gamma) {
    throw UsageError("--c " + fmt(a.c) + " is below --gamma " + fmt(a.gamma) + "; the bound needs c >= gamma");
  }
  json report = {{"suites", json::array()}};
  bool ok = true;
  json failures = json::array();
  if (fixed) {
    harness::FixedPointSweepOptions o;
    if (a.count) o.count = a.count;
    if (a.c >= 0) o.c = a.c;
    o.discount = a.gamma;
    o.max_states = a.max_states;
    o.max_actions = a.max_actions;
    o.seed = a.seed;
    auto r = harness::fixed_point_sweep(o);
    std::cout << "fixed-point: " << r["mdps"] << " MDPs, c=" << o.c << ", max ratio " << r["max_contraction_ratio"]
              << ", max residual " << r["max_residual"] << ", max iterations " << r["max_iterations"]
              << ", init gap " << r["max_init_gap"] << ", " << r["failures"].size() << " failures, "
              << std::setprecision(3) << r["seconds"].get<double>() << " s\n";
    ok = ok && r["passed"].get<bool>();
    for (const auto& f : r["failures"]) failures.push_back(f);
    r.erase("seconds");  // keeps the report byte-identical across reruns
    report["suites"].push_back(std::move(r));
  }
  if (bound) {
    harness::BoundSweepOptions o;
    if (a.count) o.count = a.count;
    if (a.c >= 0) o.c = a.c;
    o.discount = a.gamma;
    o.slack = a.slack;
    o.max_states = a.max_states;
    o.max_actions = a.max_actions;
    o.seed = a.seed + 1;
    auto r = harness::value_bound_sweep(o);
    std::cout << "value-bound: " << r["mdps"] << " MDPs, gamma=" << o.discount << ", c=" << o.c << ", min slack "
              << r["min_slack"] << ", max gap/bound " << r["max_gap_over_bound"] << ", " << r["violations"].size()
              << " violations, " << std::setprecision(3) << r["seconds"].get<double>() << " s\n";
    ok = ok && r["passed"].get<bool>();
    for (const auto& f : r["violations"]) failures.push_back(f);
    r.erase("seconds");
    report["suites"].push_back(std::move(r));
  }
  report["passed"] = ok;
  if (!a.report.empty()) write_text(a.report, report.dump(2) + "\n");
  if (!failures.empty()) {
    const auto dir = harness::resolve_output(a.failures_dir);
    fs::create_directories(dir);
    for (std::size_t i = 0; i < failures.size(); ++i) {
      const auto path = dir / ("mdp_" + std::to_string(i) + ".txt");
      write_text(path, failures[i]["mdp"].get<std::string>());
      std::cout << "  offending MDP written to " << path.string() << "\n";
    }
  }
  return ok ? kOk : kFail;
}

// ---------------------------------------------------------------- grad-check

int run_grad_check(std::uint64_t seed, std::size_t points, double threshold, bool as_json) {
  const auto r = harness::grad_check_suite(seed, points);
  if (as_json) {
    std::cout << r.to_json().dump(2) << "\n";
  } else {
    for (const auto& e : r.entries) {
      std::cout << std::left << std::setw(22) << e.name << std::scientific << std::setprecision(2) << e.rel_error
                << (e.non_finite ? "  non-finite" : "") << (e.rel_error < threshold ? "" : "  FAIL") << "\n";
    }
    std::cout << "max relative error " << r.max_rel_error << " (" << r.worst << ")\n";
  }
  if (!r.passed(threshold)) {
    std::cerr << "grad-check failed: worst " << r.worst << "\n";
    return kFail;
  }
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::vector<double> lambdas;
  std::vector<std::uint64_t> seeds;
  std::string output;
  std::size_t total_steps = 0;
  bool no_fusion = false, no_reconstruction = false, no_dynamics = false;
  bool fresh = false;
};

std::string lambda_tag(double l) {
  std::ostringstream os;
  os << "lambda_" << l;
  return os.str();
}

int run_train(const TrainArgs& a) {
  auto cfg = harness::load_config(a.config);
  if (!a.seeds.empty()) cfg.seeds = a.seeds;
  if (!a.output.empty()) cfg.output_dir = a.output;
  if (a.total_steps) cfg.total_steps = a.total_steps;
  if (a.no_fusion) cfg.agent.switches.fusion = false;
  if (a.no_reconstruction) cfg.agent.switches.reconstruction = false;
  if (a.no_dynamics) cfg.agent.switches.dynamics = false;
  std::vector<harness::ExperimentConfig> runs;
  if (a.lambdas.empty()) {
    runs.push_back(cfg);
  } else {
    for (double l : a.lambdas) {
      auto c = cfg;
      c.agent.weights.lambda = l;
      if (a.lambdas.size() > 1) c.output_dir = (fs::path(cfg.output_dir) / lambda_tag(l)).string();
      runs.push_back(std::move(c));
    }
  }
  for (const auto& r : runs) r.validate();

  harness::RunOptions opts;
  opts.resume = !a.fresh;
  bool ok = true;
  for (const auto& r : runs) {
    const auto res = harness::run_experiment(r, opts);
    std::cout << res.dir.string() << "\n";
    for (const auto& s : res.seeds) {
      std::cout << "  seed " << s.seed << ": " << s.status << ", " << s.env_steps << " steps";
      if (s.status == "complete") {
        const auto& full = s.final_eval.begin()->second;
        std::cout << ", " << s.final_eval.begin()->first << " return " << full.mean_return << " (oracle "
                  << s.oracle_return << "), spearman " << s.representation.spearman;
      }
      std::cout << "\n";
      ok = ok && s.status == "complete";
    }
  }
  return ok ? kOk : kFail;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string run;
  std::string config;
  bool untrained = false;
  std::vector<std::string> modes;
  std::vector<std::uint64_t> seeds;
  std::size_t episodes = 0;
  bool episodes_set = false;
  std::string csv, json_out;
};

int run_eval(const EvalArgs& a) {
  harness::ExperimentConfig cfg;
  fs::path run_dir;
  if (!a.run.empty()) {
    run_dir = a.run;
    std::ifstream in(run_dir / "manifest.json");
    if (!in) throw UsageError("no manifest.json in " + run_dir.string());
    cfg = harness::config_from_json(json::parse(in).at("config"));
  } else if (!a.config.empty() && a.untrained) {
    cfg = harness::load_config(a.config);
  } else {
    throw UsageError("eval needs --run DIR, or --config FILE with --untrained");
  }
  if (!a.modes.empty()) {
    cfg.eval_modes.clear();
    for (const auto& m : a.modes) cfg.eval_modes.push_back(harness::EvalMode::parse(m));
  }
  if (!a.seeds.empty()) cfg.seeds = a.seeds;
  if (a.episodes_set) cfg.eval_episodes = a.episodes;
  cfg.validate();

  std::ostringstream csv;
  csv << "seed,mode,episodes,mean_return,success_rate,mean_length,oracle_return,fraction_of_oracle,spearman,pairs\n";
  json summary = {{"config_hash", harness::config_hash(cfg)}, {"seeds", json::array()}};
  for (auto seed : cfg.seeds) {
    auto agent = a.untrained ? agent::Agent(cfg.agent, envs::kNumActions, seed)
                             : harness::load_agent(cfg, run_dir / ("seed_" + std::to_string(seed)));
    harness::SeedResult r;
    auto rec = harness::evaluation_record(cfg, agent, seed, 0, &r);
    rec.erase("kind");
    rec.erase("step");
    rec["seed"] = seed;
    for (const auto& mode : cfg.eval_modes) {
      const auto& e = r.final_eval.at(mode.name());
      csv << seed << "," << mode.name() << "," << e.returns.size() << "," << fmt(e.mean_return) << ","
          << fmt(e.success_rate) << "," << fmt(e.mean_length) << "," << fmt(r.oracle_return) << ","
          << fmt(r.oracle_return != 0 ? e.mean_return / r.oracle_return : 0.0) << ","
          << fmt(r.representation.spearman) << "," << r.representation.pairs << "\n";
    }
    summary["seeds"].push_back(std::move(rec));
  }
  if (!a.csv.empty()) write_text(a.csv, csv.str());
  if (!a.json_out.empty()) write_text(a.json_out, summary.dump(2) + "\n");
  if (a.csv.empty() && a.json_out.empty()) std::cout << csv.str();
  return kOk;
}

// ---------------------------------------------------------------- export

int run_export(const std::string& config, const std::string& run, const std::string& out) {
  if (config.empty() == run.empty()) throw UsageError("export needs exactly one of --config or --run");
  if (!config.empty()) {
    const auto cfg = harness::load_config(config);
    const envs::GridWorld env(cfg.env);
    const auto dir = harness::resolve_output(out.empty() ? "render" : out);
    envs::export_render_table(env, dir);
    std::cout << dir.string() << "\n";
    return kOk;
  }
  // Metrics to plot-ready CSV: one file of training curves and one of evaluations.
  const fs::path run_dir(run);
  std::ifstream in(run_dir / "manifest.json");
  if (!in) throw UsageError("no manifest.json in " + run_dir.string());
  const auto manifest = json::parse(in);
  std::ostringstream train, eval;
  train << "seed,iteration,step,episode_return_raw,policy_loss,value_loss,entropy,fusion,reconstruction,dynamics,kl\n";
  eval << "seed,step,mode,mean_return,success_rate,oracle_return,spearman\n";
  for (const auto& s : manifest.at("seeds")) {
    std::ifstream lines(run_dir / s.at("metrics").get<std::string>());
    std::string line;
    while (std::getline(lines, line)) {
      const auto r = json::parse(line);
      const auto seed = s.at("seed").get<std::uint64_t>();
      if (r.at("kind") == "train") {
        const auto& l = r.at("losses");
        train << seed << "," << r.at("iteration") << "," << r.at("step") << ","
              << (r.at("episode_return_raw").is_null() ? "" : fmt(r.at("episode_return_raw"))) << ","
              << fmt(l.at("policy")) << "," << fmt(l.at("value")) << "," << fmt(l.at("entropy")) << ","
              << fmt(l.at("fusion")) << "," << fmt(l.at("reconstruction")) << "," << fmt(l.at("dynamics")) << ","
              << fmt(r.at("kl")) << "\n";
      } else if (r.at("kind") == "eval") {
        for (const auto& [mode, m] : r.at("modes").items()) {
          eval << seed << "," << r.at("step") << "," << mode << "," << fmt(m.at("mean_return")) << ","
               << fmt(m.at("success_rate")) << "," << fmt(r.at("oracle_return")) << ","
               << fmt(r.at("representation").at("spearman")) << "\n";
        }
      }
    }
  }
  const fs::path dir = out.empty() ? run_dir : harness::resolve_output(out);
  write_text(dir / "train.csv", train.str());
  write_text(dir / "eval.csv", eval.str());
  std::cout << (dir / "train.csv").string() << "\n" << (dir / "eval.csv").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view fusion with self-consistent representations: experiment driver"};
  app.require_subcommand(1);
  app.footer("Relative output paths resolve under $MFSC_OUTPUT_ROOT when set.");

  TheoryArgs th;
  auto* vt = app.add_subcommand("verify-theory", "Fixed-point and value-bound sweeps over random MDPs");
  vt->add_option("--suite", th.suite, "Which sweep")->check(CLI::IsMember({"all", "fixed-point", "bound"}))
      ->capture_default_str();
  vt->add_option("--count", th.count, "MDPs per sweep (default 50 fixed-point, 100 bound)");
  vt->add_option("--c", th.c, "Contraction weight (default 0.9 fixed-point, 0.95 bound)");
  vt->add_option("--gamma", th.gamma, "MDP discount")->capture_default_str();
  vt->add_option("--tolerance", th.slack, "Slack allowed on the value bound")->capture_default_str();
  vt->add_option("--max-states", th.max_states, "Largest |S|")->capture_default_str()->check(CLI::PositiveNumber);
  vt->add_option("--max-actions", th.max_actions, "Largest |A|")->capture_default_str()->check(CLI::PositiveNumber);
  vt->add_option("--seed", th.seed, "Sweep seed")->capture_default_str();
  vt->add_option("--report", th.report, "Write the JSON report here");
  vt->add_option("--failures-dir", th.failures_dir, "Where offending MDPs are written")->capture_default_str();

  std::uint64_t gc_seed = 10;
  std::size_t gc_points = 3;
  double gc_threshold = 1e-4;
  bool gc_json = false;
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of every primitive, block and loss");
  gc->add_option("--seed", gc_seed, "Point seed")->capture_default_str();
  gc->add_option("--points", gc_points, "Random points per primitive")->capture_default_str();
  gc->add_option("--threshold", gc_threshold, "Max relative error")->capture_default_str();
  gc->add_flag("--json", gc_json, "Print the report as JSON");

  TrainArgs tr;
  auto* tn = app.add_subcommand("train", "Train every seed of a config");
  tn->add_option("config", tr.config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  tn->add_option("--lambda", tr.lambdas, "Reconstruction weight; several values give one run each");
  tn->add_option("--seeds", tr.seeds, "Override the seed list");
  tn->add_option("--output", tr.output, "Override output_dir");
  tn->add_option("--total-steps", tr.total_steps, "Override total_steps");
  tn->add_flag("--no-fusion", tr.no_fusion, "Disable the fusion (bisimulation target) loss");
  tn->add_flag("--no-reconstruction", tr.no_reconstruction, "Disable the reconstruction loss");
  tn->add_flag("--no-dynamics", tr.no_dynamics, "Disable the dynamics ensemble loss");
  tn->add_flag("--fresh", tr.fresh, "Ignore existing trainer state and start over");

  EvalArgs ev;
  auto* el = app.add_subcommand("eval", "Evaluate trained seeds under view-corruption modes");
  el->add_option("--run", ev.run, "Run directory (holds manifest.json)");
  el->add_option("--config", ev.config, "Config file, with --untrained");
  el->add_flag("--untrained", ev.untrained, "Evaluate freshly initialized agents");
  el->add_option("--modes", ev.modes, "full, missing_view(i), noisy_view(i)");
  el->add_option("--seeds", ev.seeds, "Subset of seeds");
  el->add_option("--episodes", ev.episodes, "Episodes per mode; 0 = every start state once");
  el->add_option("--csv", ev.csv, "Write the per-mode CSV here");
  el->add_option("--json", ev.json_out, "Write the JSON summary here");

  std::string ex_config, ex_run, ex_out;
  auto* ex = app.add_subcommand("export", "Render table of an environment, or a run's metrics as CSV");
  ex->add_option("--config", ex_config, "Config file: export layout and render table");
  ex->add_option("--run", ex_run, "Run directory: export train.csv and eval.csv");
  ex->add_option("--out", ex_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*vt) return run_verify_theory(th);
    if (*gc) return run_grad_check(gc_seed, gc_points, gc_threshold, gc_json);
    if (*tn) return run_train(tr);
    if (*el) {
      ev.episodes_set = el->count("--episodes") > 0;
      return run_eval(ev);
    }
    if (*ex) return run_export(ex_config, ex_run, ex_out);
  } catch (const harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
  return kUsage;
}
