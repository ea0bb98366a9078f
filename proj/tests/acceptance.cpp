// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Training runs resume from --work-dir, so a second
// invocation only re-evaluates finished seeds.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "mfsc/harness/config.hpp"
#include "mfsc/harness/evaluation.hpp"
#include "mfsc/harness/runner.hpp"
#include "mfsc/harness/theory.hpp"
#include "mfsc/losses/losses.hpp"
#include "mfsc/mdp/bisimulation.hpp"
#include "mfsc/tensor/ops.hpp"
#include "mfsc/util/random.hpp"

using namespace mfsc;
using harness::json;
using tensor::Tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Tensor<double> random_tensor(tensor::Shape shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(tensor::numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor<double>(std::move(shape), std::move(v));
}

double cos_dist(const double* a, const double* b, std::size_t d) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < d; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return 1.0 - ab / std::sqrt(aa * bb);
}

double huber(double e, double delta) {
  return std::abs(e) <= delta ? 0.5 * e * e : delta * (std::abs(e) - 0.5 * delta);
}

// ---------------------------------------------------------------------------

Outcome fixed_point_theory() {
  const auto r = harness::fixed_point_sweep({});
  const double secs = r["seconds"].get<double>();
  const bool ok = r["passed"].get<bool>() && secs < 30.0;
  return {ok, std::to_string(r["mdps"].get<std::size_t>()) + " MDPs x 2 couplings, max ratio " +
                  fmt(r["max_contraction_ratio"].get<double>(), 10) + ", max residual " +
                  fmt(r["max_residual"].get<double>(), 3) + ", max iterations " +
                  std::to_string(r["max_iterations"].get<std::size_t>()) + ", init gap " +
                  fmt(r["max_init_gap"].get<double>(), 3) + ", " + std::to_string(r["failures"].size()) +
                  " failures, " + fmt(secs, 3) + " s"};
}

Outcome value_bound() {
  const auto r = harness::value_bound_sweep({});
  const double secs = r["seconds"].get<double>();
  const bool ok = r["passed"].get<bool>() && secs < 120.0;
  return {ok, std::to_string(r["mdps"].get<std::size_t>()) + " MDPs, " + std::to_string(r["violations"].size()) +
                  " violations, min slack " + fmt(r["min_slack"].get<double>()) + ", max gap/bound " +
                  fmt(r["max_gap_over_bound"].get<double>()) + ", " + fmt(secs, 3) + " s"};
}

Outcome gradients() {
  const auto r = harness::grad_check_suite(10, 3);
  return {r.passed(1e-4), std::to_string(r.entries.size()) + " checks, max rel error " + fmt(r.max_rel_error, 3) +
                              " (" + r.worst + ")" + (r.non_finite ? ", non-finite values" : "")};
}

Outcome loss_identities() {
  std::mt19937_64 rng(41);
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  const auto w = losses::LossWeights::from_gamma(0.99);

  // Identical transitions.
  const auto one = random_tensor({1, 8}, rng);
  std::vector<double> rep;
  for (int b = 0; b < 6; ++b) rep.insert(rep.end(), one.data().begin(), one.data().end());
  const Tensor<double> same({6, 8}, rep);
  const std::vector<double> r_same(6, 0.3);
  expect(std::abs(losses::fusion_loss<double>(same, r_same, same, w).item()) < 1e-12, "fusion identical");

  const auto p = random_tensor({4, 5, 8}, rng);
  expect(std::abs(losses::reconstruction_loss(p, p).item()) < 1e-12, "reconstruction equal");
  expect(std::abs(losses::reconstruction_loss(tensor::scale(p, -1.0), p).item() - 2.0) < 1e-12,
         "reconstruction negated");

  losses::EnsembleDynamics<double> ens(8, 4, {5, 32}, 3);
  const auto z = random_tensor({6, 8}, rng);
  const std::vector<std::size_t> acts{0, 1, 2, 3, 1, 0};
  // A one-member ensemble lets the target equal the prediction exactly.
  losses::EnsembleDynamics<double> single(8, 4, {1, 32}, 5);
  const auto perfect = losses::dynamics_loss(single, z, acts, single.predict(0, z, acts)).item();
  expect(std::abs(perfect) < 1e-12, "dynamics perfect");

  // Brute-force oracles on random inputs.
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t B = 4 + std::size_t(trial % 5), d = 6;
    const auto zt = random_tensor({B, d}, rng), nt = random_tensor({B, d}, rng);
    std::vector<double> r(B);
    for (auto& v : r) v = std::normal_distribution<double>(0, 2)(rng);
    auto wt = losses::LossWeights::from_gamma(trial % 2 ? 0.9 : 0.99);
    wt.robust = trial % 3 == 0 ? losses::Robust::squared : losses::Robust::huber;
    double oracle = 0;
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < B; ++j) {
        if (i == j) continue;
        const double e = cos_dist(&zt.data()[i * d], &zt.data()[j * d], d) -
                         (wt.c_r * std::abs(r[i] - r[j]) + wt.c_t * cos_dist(&nt.data()[i * d], &nt.data()[j * d], d));
        oracle += wt.robust == losses::Robust::squared ? e * e : huber(e, wt.huber_delta);
      }
    }
    oracle /= double(B * (B - 1));
    worst = std::max(worst, std::abs(losses::fusion_loss<double>(zt, r, nt, wt).item() - oracle));

    const auto pred = random_tensor({B, 3, d}, rng), tgt = random_tensor({B, 3, d}, rng);
    double cos_sum = 0;
    for (std::size_t t = 0; t < B * 3; ++t) cos_sum += 1.0 - cos_dist(&pred.data()[t * d], &tgt.data()[t * d], d);
    worst = std::max(worst, std::abs(losses::reconstruction_loss(pred, tgt).item() - (1.0 - cos_sum / double(B * 3))));

    std::vector<std::size_t> a(B);
    for (auto& x : a) x = util::uniform_index(rng, 4);
    const auto zn = random_tensor({B, 8}, rng), zz = random_tensor({B, 8}, rng);
    double dyn = 0;
    for (std::size_t k = 0; k < ens.size(); ++k) {
      const auto pk = ens.predict(k, zz, a);
      for (std::size_t b = 0; b < B; ++b) dyn += cos_dist(&pk.data()[b * 8], &zn.data()[b * 8], 8);
    }
    dyn /= double(ens.size() * B);
    worst = std::max(worst, std::abs(losses::dynamics_loss(ens, zz, a, zn).item() - dyn));
  }
  expect(worst < 1e-6, "brute-force agreement");

  std::string detail = "identities hold, max brute-force gap " + fmt(worst, 3);
  if (!failed.empty()) {
    detail = "failed:";
    for (const auto& f : failed) detail += " " + f;
    detail += ", max brute-force gap " + fmt(worst, 3);
  }
  return {failed.empty(), detail};
}

Outcome tabular_equivalence() {
  std::mt19937_64 rng(53);
  double worst = 0;
  std::size_t n_mdps = 0;
  for (const double gamma : {0.5, 0.9, 0.99}) {
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t S = 2 + util::uniform_index(rng, 11), A = 1 + util::uniform_index(rng, 4);
      const auto m = mdp::random_mdp(rng, S, A, gamma);
      const auto pi = mdp::random_policy(rng, S, A);
      const auto w = losses::LossWeights::from_gamma(gamma);
      const auto tab = losses::tabular_target_iteration(m, pi, w, 1e-12, 1'000'000);
      const mdp::MetricOperator op(m, pi, gamma, mdp::CouplingKind::independent);
      const auto fp = mdp::solve_fixed_point(op, mdp::MetricMatrix(S), 1e-12, 1'000'000);
      for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = 0; j < S; ++j) worst = std::max(worst, std::abs(tab.metric[i * S + j] - fp.metric(i, j)));
      }
      ++n_mdps;
    }
  }
  return {worst < 1e-6, std::to_string(n_mdps) + " MDPs (gamma .5/.9/.99), max entry difference " + fmt(worst, 3)};
}

// ---------------------------------------------------------------------------

struct TrainingRuns {
  harness::ExperimentConfig cfg;
  harness::ExperimentResult result;
  std::vector<std::size_t> redundant;
};

Outcome desk_training(const TrainingRuns& t) {
  constexpr std::uint64_t kStepBudget = 200'000;
  bool ok = t.result.seeds.size() >= 4;
  std::ostringstream os;
  for (const auto& s : t.result.seeds) {
    const auto& full = s.final_eval.at("full");
    const double frac = full.mean_return / s.oracle_return;
    const bool seed_ok = s.status == "complete" && s.env_steps <= kStepBudget && frac >= 0.9 &&
                         s.representation.pairs >= 500 && s.representation.spearman >= 0.7;
    ok = ok && seed_ok;
    os << " [seed " << s.seed << (seed_ok ? "" : " FAIL") << ": " << s.env_steps << " steps, return "
       << fmt(full.mean_return) << "/" << fmt(s.oracle_return) << " = " << fmt(100 * frac, 3) << "%, spearman "
       << fmt(s.representation.spearman, 3) << " on " << s.representation.pairs << " pairs]";
  }
  return {ok, std::to_string(t.result.seeds.size()) + " seeds" + os.str()};
}

double mean_over_seeds(const TrainingRuns& t, const std::string& mode) {
  double acc = 0;
  for (const auto& s : t.result.seeds) acc += s.final_eval.at(mode).mean_return;
  return acc / double(t.result.seeds.size());
}

Outcome missing_view_robustness(const TrainingRuns& t) {
  if (t.redundant.empty()) return {false, "no redundant view in this layout"};
  const double full = mean_over_seeds(t, "full");
  if (full <= 0) return {false, "full-view mean return " + fmt(full) + " is not positive"};
  bool ok = true;
  std::ostringstream os;
  os << "full " << fmt(full);
  for (const auto v : t.redundant) {
    const auto masked = mean_over_seeds(t, harness::EvalMode{harness::EvalMode::Kind::missing_view, v}.name());
    const auto noisy = mean_over_seeds(t, harness::EvalMode{harness::EvalMode::Kind::noisy_view, v}.name());
    const double degradation = (full - masked) / full;
    const bool view_ok = degradation <= 0.25 && masked >= noisy;
    ok = ok && view_ok;
    os << "; view " << v << (view_ok ? "" : " FAIL") << ": mask " << fmt(masked) << " (" << fmt(100 * degradation, 3)
       << "% drop), noise " << fmt(noisy);
  }
  return {ok, os.str()};
}

Outcome ablations(const harness::ExperimentConfig& base, const fs::path& dir) {
  auto short_cfg = base;
  short_cfg.seeds = {0};
  short_cfg.total_steps = 4096;
  short_cfg.eval_every = 2048;
  short_cfg.eval_modes = {harness::EvalMode{}};

  auto no_rec = short_cfg;
  no_rec.agent.weights.lambda = 0.0;
  no_rec.output_dir = (dir / "lambda_0").string();
  auto no_fus = short_cfg;
  no_fus.agent.switches.fusion = false;
  no_fus.output_dir = (dir / "no_fusion").string();

  std::vector<std::vector<std::pair<std::string, std::uint64_t>>> curves;
  std::set<std::string> keys[2];
  std::ostringstream os;
  bool ok = true;
  int k = 0;
  for (const auto* cfg : {&no_rec, &no_fus}) {
    const auto r = harness::run_experiment(*cfg);
    const auto& s = r.seeds.at(0);
    ok = ok && s.status == "complete";
    std::vector<std::pair<std::string, std::uint64_t>> curve;
    std::istringstream lines(slurp(s.dir / "metrics.jsonl"));
    for (std::string line; std::getline(lines, line);) {
      const auto rec = json::parse(line);
      curve.emplace_back(rec["kind"].get<std::string>(), rec["step"].get<std::uint64_t>());
      if (rec["kind"] == "train") {
        for (const auto& [key, _] : rec["losses"].items()) keys[k].insert(key);
      }
    }
    os << (k ? "; fusion off: " : "lambda 0: ") << s.status << ", " << curve.size() << " records";
    curves.push_back(std::move(curve));
    ++k;
  }
  const bool comparable = curves[0] == curves[1] && keys[0] == keys[1] && !curves[0].empty();
  os << (comparable ? ", same record schedule and loss keys" : ", curves differ in schedule or keys");
  return {ok && comparable, os.str()};
}

Outcome determinism(const harness::ExperimentConfig& base, const fs::path& dir) {
  auto cfg = base;
  cfg.seeds = {0, 1};
  cfg.total_steps = 2048;
  cfg.eval_every = 1024;
  std::vector<std::string> files;
  for (const char* run : {"a", "b"}) {
    cfg.output_dir = (dir / run).string();
    harness::RunOptions opts;
    opts.resume = false;
    harness::run_experiment(cfg, opts);
    std::string all;
    for (const auto seed : cfg.seeds) all += slurp(dir / run / ("seed_" + std::to_string(seed)) / "metrics.jsonl");
    files.push_back(std::move(all));
  }
  harness::FixedPointSweepOptions fo;
  fo.count = 10;
  auto t1 = harness::fixed_point_sweep(fo), t2 = harness::fixed_point_sweep(fo);
  t1.erase("seconds");
  t2.erase("seconds");
  const auto g1 = harness::grad_check_suite(10, 1).to_json().dump(), g2 = harness::grad_check_suite(10, 1).to_json().dump();

  const bool train_same = !files[0].empty() && files[0] == files[1];
  const bool theory_same = t1.dump() == t2.dump();
  const bool grad_same = g1 == g2;
  return {train_same && theory_same && grad_same,
          "training metrics (2 seeds, " + std::to_string(files[0].size()) + " bytes) " +
              (train_same ? "identical" : "DIFFER") + ", theory report " + (theory_same ? "identical" : "DIFFERS") +
              ", grad report " + (grad_same ? "identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string config = MFSC_SOURCE_DIR "/configs/gridworld_7x7.json";
  std::string work_dir = "acceptance_runs";
  std::set<int> only;
  app.add_option("--config", config, "Training config for the desk-scale criteria")->check(CLI::ExistingFile);
  app.add_option("--work-dir", work_dir, "Where training runs are written and resumed from");
  app.add_option("--only", only, "Run these criteria only")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const fs::path work = fs::absolute(work_dir);
  fs::create_directories(work);
  auto want = [&](int c) { return only.empty() || only.count(c) > 0; };

  int failures = 0;
  auto report = [&](int id, const std::string& name, const std::function<Outcome()>& fn) {
    if (!want(id)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
              << fmt(secs, 3) << " s]" << std::endl;
  };

  report(1, "metric fixed point", fixed_point_theory);
  report(2, "aggregation value bound", value_bound);
  report(3, "gradients", gradients);
  report(4, "loss identities", loss_identities);
  report(5, "tabular target equivalence", tabular_equivalence);

  if (want(6) || want(7) || want(8) || want(9)) {
    harness::ExperimentConfig cfg;
    try {
      cfg = harness::load_config(config);
    } catch (const std::exception& e) {
      std::cerr << "cannot load " << config << ": " << e.what() << "\n";
      return 2;
    }
    std::optional<TrainingRuns> runs;
    auto trained = [&]() -> const TrainingRuns& {
      if (!runs) {
        TrainingRuns t;
        t.cfg = cfg;
        t.cfg.output_dir = (work / ("desk_" + harness::config_hash(cfg))).string();
        t.result = harness::run_experiment(t.cfg);
        t.redundant = harness::redundant_views(envs::GridWorld(harness::eval_env_config(t.cfg.env)));
        runs = std::move(t);
      }
      return *runs;
    };
    report(6, "desk-scale training", [&] { return desk_training(trained()); });
    report(7, "missing-view robustness", [&] { return missing_view_robustness(trained()); });
    report(8, "ablation switches", [&] { return ablations(cfg, work / "ablation"); });
    report(9, "determinism", [&] { return determinism(cfg, work / "determinism"); });
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
