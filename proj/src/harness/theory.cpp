#include "mfsc/harness/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mfsc/losses/losses.hpp"
#include "mfsc/mdp/aggregation.hpp"
#include "mfsc/mdp/bisimulation.hpp"
#include "mfsc/model/fusion_model.hpp"
#include "mfsc/tensor/ops.hpp"

namespace mfsc::harness {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string mdp_text(const mdp::TabularMDP& m) {
  std::ostringstream os;
  mdp::write_mdp(os, m);
  return os.str();
}

std::string coupling_name(mdp::CouplingKind k) {
  return k == mdp::CouplingKind::wasserstein ? "wasserstein" : "independent";
}

}  // namespace

json fixed_point_sweep(const FixedPointSweepOptions& o) {
  if (o.c <= 0.0 || o.c >= 1.0) throw std::invalid_argument("fixed_point_sweep: c must lie in (0, 1)");
  if (o.max_states < 1 || o.max_actions < 1) throw std::invalid_argument("fixed_point_sweep: empty MDP sizes");
  const auto t0 = Clock::now();
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> states(std::min<std::size_t>(2, o.max_states), o.max_states);
  std::uniform_int_distribution<std::size_t> actions(1, o.max_actions);

  json failures = json::array();
  double max_ratio = 0, max_residual = 0, max_gap = 0;
  std::size_t max_iters = 0;
  for (std::size_t trial = 0; trial < o.count; ++trial) {
    const auto S = states(rng), A = actions(rng);
    const auto m = mdp::random_mdp(rng, S, A, o.discount);
    const auto pi = mdp::random_policy(rng, S, A);
    const auto init = mdp::random_metric(rng, S, 10.0);
    for (auto kind : {mdp::CouplingKind::wasserstein, mdp::CouplingKind::independent}) {
      const mdp::MetricOperator op(m, pi, o.c, kind);
      std::string problem;
      try {
        const auto a = mdp::solve_fixed_point(op, mdp::MetricMatrix(S), o.tolerance, o.max_iterations);
        const auto b = mdp::solve_fixed_point(op, init, o.tolerance, o.max_iterations);
        const double gap = mdp::MetricMatrix::distance(a.metric, b.metric);
        const double ratio = std::max(a.max_contraction_ratio, b.max_contraction_ratio);
        const double residual = std::max(a.residual, b.residual);
        max_ratio = std::max(max_ratio, ratio);
        max_residual = std::max(max_residual, residual);
        max_gap = std::max(max_gap, gap);
        max_iters = std::max({max_iters, a.iterations, b.iterations});
        if (!a.contraction_ok || !b.contraction_ok) problem = "contraction ratio " + std::to_string(ratio);
        else if (residual >= o.residual_limit) problem = "residual " + std::to_string(residual);
        else if (gap > o.init_agreement) problem = "initializations disagree by " + std::to_string(gap);
      } catch (const mdp::ConvergenceError& e) {
        problem = e.what();
      }
      if (!problem.empty()) {
        failures.push_back({{"trial", trial}, {"coupling", coupling_name(kind)}, {"problem", problem},
                            {"mdp", mdp_text(m)}});
      }
    }
  }
  return {{"suite", "fixed_point"},
          {"mdps", o.count},
          {"c", o.c},
          {"discount", o.discount},
          {"max_states", o.max_states},
          {"max_actions", o.max_actions},
          {"seed", o.seed},
          {"max_contraction_ratio", max_ratio},
          {"max_residual", max_residual},
          {"max_init_gap", max_gap},
          {"max_iterations", max_iters},
          {"failures", failures},
          {"passed", failures.empty()},
          {"seconds", seconds_since(t0)}};
}

json value_bound_sweep(const BoundSweepOptions& o) {
  if (o.c < o.discount) throw std::invalid_argument("value_bound_sweep: c must be at least the discount");
  if (o.c >= 1.0 || o.discount <= 0.0 || o.discount >= 1.0) {
    throw std::invalid_argument("value_bound_sweep: need 0 < discount <= c < 1");
  }
  const auto t0 = Clock::now();
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> states(std::min<std::size_t>(2, o.max_states), o.max_states);
  std::uniform_int_distribution<std::size_t> actions(1, o.max_actions);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  mdp::CertifyOptions copts;
  copts.c = o.c;
  json violations = json::array();
  double min_slack = std::numeric_limits<double>::infinity(), max_ratio = 0;
  std::size_t merged = 0;
  for (std::size_t trial = 0; trial < o.count; ++trial) {
    const auto m = mdp::random_mdp(rng, states(rng), actions(rng), o.discount);
    const auto metric = mdp::certification_metric(m, copts);
    const double eps = unit(rng) * metric.max_entry();
    const auto rep = mdp::verify_value_bound(m, metric, eps, o.c);
    min_slack = std::min(min_slack, rep.slack);
    if (rep.bound > 0) max_ratio = std::max(max_ratio, rep.max_difference / rep.bound);
    if (rep.epsilon > 0) ++merged;
    if (rep.max_difference > rep.bound + o.slack) {
      violations.push_back({{"trial", trial}, {"report", json::parse(rep.to_json_line())}, {"mdp", mdp_text(m)}});
    }
  }
  return {{"suite", "value_bound"},
          {"mdps", o.count},
          {"c", o.c},
          {"discount", o.discount},
          {"max_states", o.max_states},
          {"max_actions", o.max_actions},
          {"seed", o.seed},
          {"min_slack", min_slack},
          {"max_gap_over_bound", max_ratio},
          {"nontrivial_aggregations", merged},
          {"violations", violations},
          {"passed", violations.empty()},
          {"seconds", seconds_since(t0)}};
}

json GradSuiteResult::to_json() const {
  json list = json::array();
  for (const auto& e : entries) {
    list.push_back({{"name", e.name}, {"rel_error", e.rel_error}, {"non_finite", e.non_finite}});
  }
  return {{"max_rel_error", max_rel_error}, {"worst", worst}, {"non_finite", non_finite}, {"checks", list}};
}

GradSuiteResult grad_check_suite(std::uint64_t seed, std::size_t points) {
  using namespace tensor;
  using T64 = Tensor<double>;
  std::mt19937_64 rng(seed);
  auto random = [&](Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = dist(rng);
    return T64(std::move(shape), std::move(v), grad);
  };

  GradSuiteResult out;
  auto record = [&](const std::string& name, const GradCheckReport& r) {
    GradCheckEntry e{name, r.max_rel_error, 0, r.non_finite};
    auto it = std::find_if(out.entries.begin(), out.entries.end(), [&](const auto& x) { return x.name == name; });
    if (it == out.entries.end()) {
      out.entries.push_back(e);
    } else {
      it->rel_error = std::max(it->rel_error, e.rel_error);
      it->non_finite = it->non_finite || e.non_finite;
    }
    out.non_finite = out.non_finite || r.non_finite;
    if (r.max_rel_error >= out.max_rel_error) {
      out.max_rel_error = r.max_rel_error;
      out.worst = name + ": " + r.worst;
    }
  };

  using Fn = std::function<T64(const std::vector<T64>&)>;
  struct Case {
    std::vector<Shape> shapes;
    Fn fn;
    double lo = -1.0, hi = 1.0;
  };
  std::map<std::string, Case> cases;
  cases["identity"] = {{{4}}, [](auto& v) { return v[0]; }};
  cases["add"] = {{{3, 4}, {4}}, [](auto& v) { return add(v[0], v[1]); }};
  cases["sub"] = {{{3, 1}, {3, 4}}, [](auto& v) { return sub(v[0], v[1]); }};
  cases["mul"] = {{{2, 3, 4}, {3, 1}}, [](auto& v) { return mul(v[0], v[1]); }};
  cases["minimum"] = {{{5}, {5}}, [](auto& v) { return minimum(v[0], v[1]); }};
  cases["scale"] = {{{4}}, [](auto& v) { return scale(v[0], 1.7); }};
  cases["add_scalar"] = {{{4}}, [](auto& v) { return add_scalar(v[0], 0.3); }};
  cases["matmul"] = {{{2, 3, 4}, {4, 5}}, [](auto& v) { return matmul(v[0], v[1]); }};
  cases["matmul_batched"] = {{{2, 3, 4}, {2, 4, 2}}, [](auto& v) { return matmul(v[0], v[1]); }};
  cases["conv2d"] = {{{2, 5, 5, 2}, {3, 3, 3, 2}, {3}},
                     [](auto& v) { return conv2d(v[0], v[1], v[2], 2, Padding::same); }};
  cases["relu"] = {{{6}}, [](auto& v) { return relu(v[0]); }};
  cases["gelu"] = {{{6}}, [](auto& v) { return gelu(v[0]); }, -3.0, 3.0};
  cases["exp"] = {{{6}}, [](auto& v) { return exp(v[0]); }};
  cases["log"] = {{{6}}, [](auto& v) { return log(v[0]); }, 0.5, 2.0};
  cases["abs"] = {{{6}}, [](auto& v) { return abs(v[0]); }};
  cases["clamp"] = {{{6}}, [](auto& v) { return clamp(v[0], -0.5, 0.5); }};
  cases["softmax"] = {{{3, 5}}, [](auto& v) { return softmax(v[0]); }, -3.0, 3.0};
  cases["log_softmax"] = {{{3, 5}}, [](auto& v) { return log_softmax(v[0]); }, -3.0, 3.0};
  cases["layer_norm"] = {{{3, 6}, {6}, {6}}, [](auto& v) { return layer_norm(v[0], v[1], v[2]); }};
  cases["l2_normalize"] = {{{3, 4}}, [](auto& v) { return l2_normalize(v[0]); }};
  cases["cosine_similarity"] = {{{3, 4}, {3, 4}}, [](auto& v) { return cosine_similarity(v[0], v[1]); }};
  cases["huber"] = {{{7}, {7}}, [](auto& v) { return huber(v[0], v[1], 0.5); }, -2.0, 2.0};
  cases["concat"] = {{{2, 3}, {2, 2}}, [](auto& v) { return concat<double>({v[0], v[1]}, 1); }};
  cases["reshape"] = {{{2, 6}}, [](auto& v) { return reshape(v[0], {3, 4}); }};
  cases["transpose"] = {{{2, 3, 4}}, [](auto& v) { return transpose(v[0], 0, 2); }};
  cases["permute"] = {{{2, 3, 4}}, [](auto& v) { return permute(v[0], {1, 2, 0}); }};
  cases["slice"] = {{{3, 5}}, [](auto& v) { return slice(v[0], 1, 1, 3); }};
  cases["select"] = {{{3, 4, 2}}, [](auto& v) { return select(v[0], 1, 2); }};
  cases["gather_last"] = {{{3, 4}}, [](auto& v) { return gather_last(v[0], {0, 3, 1}); }};
  cases["take_rows"] = {{{3, 4}}, [](auto& v) { return take_rows(v[0], {2, 0, 2, 1}); }};
  cases["sum"] = {{{3, 4}}, [](auto& v) { return sum(v[0]); }};
  cases["mean"] = {{{3, 4}}, [](auto& v) { return mean(v[0]); }};
  cases["sum_axis"] = {{{3, 4}}, [](auto& v) { return sum(v[0], 0); }};
  cases["mean_axis"] = {{{3, 4, 2}}, [](auto& v) { return mean(v[0], 1); }};

  for (const auto& [name, c] : cases) {
    for (std::size_t p = 0; p < points; ++p) {
      std::vector<T64> inputs;
      std::vector<NamedTensor> named;
      for (std::size_t i = 0; i < c.shapes.size(); ++i) {
        inputs.push_back(random(c.shapes[i], c.lo, c.hi));
        named.push_back({name + "/" + std::to_string(i), inputs.back()});
      }
      const auto proj = random(c.fn(inputs).shape(), -1.0, 1.0, false);
      record(name, grad_check([&] { return sum(mul(c.fn(inputs), proj)); }, named));
    }
  }

  model::ModelConfig mc;
  mc.embed_dim = 8;
  mc.depth = 1;
  mc.heads = 2;
  mc.mlp_ratio = 2;
  mc.num_views = 3;
  mc.view_height = mc.view_width = 6;
  mc.channels = 3;
  mc.encoder = {{4, 3, 2}};
  auto random_obs = [&](bool missing) {
    envs::MultiViewObservation obs;
    obs.height = mc.view_height;
    obs.width = mc.view_width;
    obs.channels = mc.channels;
    std::uniform_real_distribution<float> unit(0.05f, 1.0f);
    for (std::size_t k = 0; k < mc.num_views; ++k) {
      std::vector<float> v(obs.view_size());
      for (auto& x : v) x = unit(rng);
      obs.views.push_back(std::move(v));
      obs.status.push_back(missing && k == 1 ? envs::ViewStatus::missing : envs::ViewStatus::present);
    }
    return obs;
  };

  for (std::size_t p = 0; p < points; ++p) {
    ParameterStore<double> store;
    model::AttentionBlock<double> block(store, "attention", 8, 2, 2, rng);
    const auto x = random({2, 4, 8});
    const auto proj = random({2, 4, 8}, -1, 1, false);
    std::vector<NamedTensor> named{{"x", x}};
    for (const auto& prm : store.parameters()) named.push_back({prm.name, prm.value});
    record("attention_block", grad_check([&] { return sum(mul(block(x), proj)); }, named));
  }

  {
    model::FusionModel<double> fm(mc, seed);
    std::vector<envs::MultiViewObservation> obs{random_obs(false), random_obs(true), random_obs(false)};
    const auto batch = model::ViewBatch::from(obs);
    const auto proj = random({3, 4, 8}, -1, 1, false);
    const auto proj2 = random({3, 8}, -1, 1, false);
    std::vector<NamedTensor> named;
    for (const auto& prm : fm.parameters().parameters()) named.push_back({prm.name, prm.value});
    record("fusion_model", grad_check(
                               [&] {
                                 const auto out = fm.forward(batch);
                                 return add(sum(mul(fm.predict(out.tokens), proj)), sum(mul(out.fused, proj2)));
                               },
                               named));
  }

  for (std::size_t p = 0; p < points; ++p) {
    const auto z = random({5, 4});
    const auto next = random({5, 4}, -1, 1, false);
    std::vector<double> r(5);
    std::uniform_real_distribution<double> rd(-2.0, 2.0);
    for (auto& v : r) v = rd(rng);
    for (auto mode : {losses::Robust::huber, losses::Robust::squared}) {
      auto w = losses::LossWeights::from_gamma(0.9);
      w.robust = mode;
      record(mode == losses::Robust::huber ? "fusion_loss_huber" : "fusion_loss_squared",
             grad_check([&] { return losses::fusion_loss<double>(z, r, next, w); }, {{"z", z}}));
    }
    const auto pred = random({3, 4, 6});
    const auto target = random({3, 4, 6}, -1, 1, false);
    record("reconstruction_loss",
           grad_check([&] { return losses::reconstruction_loss(pred, target); }, {{"pred", pred}}));

    losses::EnsembleDynamics<double> ens(6, 3, {3, 16}, seed + p);
    const auto zc = random({4, 6}, -1, 1, false);
    const auto zn = random({4, 6}, -1, 1, false);
    const std::vector<std::size_t> a{2, 0, 1, 2};
    std::vector<NamedTensor> named;
    for (const auto& prm : ens.parameters().parameters()) named.push_back({prm.name, prm.value});
    record("dynamics_loss", grad_check([&] { return losses::dynamics_loss(ens, zc, a, zn); }, named));
  }
  return out;
}

}  // namespace mfsc::harness
