#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "mfsc/mdp/aggregation.hpp"
#include "mfsc/mdp/bisimulation.hpp"
#include "mfsc/mdp/tabular.hpp"
#include "mfsc/mdp/transport.hpp"
#include "mfsc/mdp/value_iteration.hpp"

using namespace mfsc::mdp;

namespace {

// Appends a copy of state 0. Every row splits its mass on state 0 evenly
// between state 0 and the copy, so the two are exactly bisimilar.
TabularMDP with_duplicate(const TabularMDP& base) {
  const auto S = base.num_states, A = base.num_actions;
  TabularMDP out(S + 1, A, base.discount);
  for (std::size_t s = 0; s <= S; ++s) {
    const auto src_s = s == S ? 0 : s;
    for (std::size_t a = 0; a < A; ++a) {
      out.R(s, a) = base.R(src_s, a);
      for (std::size_t s2 = 0; s2 < S; ++s2) out.P(s, a, s2) = base.P(src_s, a, s2);
      out.P(s, a, 0) *= 0.5;
      out.P(s, a, S) = out.P(s, a, 0);
    }
  }
  out.initial.assign(S + 1, 1.0 / double(S + 1));
  out.validate();
  return out;
}

TabularMDP random_deterministic_mdp(std::mt19937_64& rng, std::size_t S, std::size_t A, double gamma) {
  TabularMDP m(S, A, gamma);
  std::uniform_int_distribution<std::size_t> pick(0, S - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      m.P(s, a, pick(rng)) = 1.0;
      m.R(s, a) = unit(rng);
    }
  }
  m.initial.assign(S, 1.0 / double(S));
  return m;
}

TabularMDP chain3() {
  TabularMDP m(3, 1, 0.9);
  m.P(0, 0, 1) = 1.0;
  m.P(1, 0, 2) = 1.0;
  m.P(2, 0, 2) = 1.0;
  m.R(0, 0) = 0.0;
  m.R(1, 0) = 0.5;
  m.R(2, 0) = 1.0;
  m.initial = {1.0, 0.0, 0.0};
  return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("value iteration: one state geometric series") {
  TabularMDP m(1, 1, 0.99);
  m.P(0, 0, 0) = 1.0;
  m.R(0, 0) = 1.0;
  m.initial = {1.0};
  const auto vi = value_iteration(m, 1e-9);
  CHECK(std::abs(vi.values[0] - 100.0) < 1e-6);
}

TEST_CASE("value iteration: zero rewards give zero values") {
  std::mt19937_64 rng(3);
  auto m = random_mdp(rng, 6, 3, 0.9);
  std::fill(m.rewards.begin(), m.rewards.end(), 0.0);
  for (double v : value_iteration(m, 1e-12).values) CHECK(v == 0.0);
}

TEST_CASE("value iteration: matches truncated rollout under the greedy policy") {
  std::mt19937_64 rng(11);
  const auto m = random_mdp(rng, 8, 3, 0.9);
  const auto vi = value_iteration(m, 1e-10);
  CHECK(vi.residual <= 1e-10);
  const auto pi = Policy::deterministic(vi.greedy_actions, m.num_actions);
  const auto P = policy_transitions(m, pi);
  const auto r = policy_rewards(m, pi);
  const std::size_t n = m.num_states;
  // sum_t gamma^t P^t r, accumulated one matrix-vector product at a time.
  std::vector<double> term = r, total(n, 0.0), next(n);
  for (int t = 0; t < 10000; ++t) {
    for (std::size_t i = 0; i < n; ++i) total[i] += term[i];
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = 0.0;
      for (std::size_t j = 0; j < n; ++j) next[i] += m.discount * P[i * n + j] * term[j];
    }
    term.swap(next);
  }
  CHECK(max_abs_diff(vi.values, total) < 1e-4);
  CHECK(max_abs_diff(policy_evaluation(m, pi), total) < 1e-8);
}

TEST_CASE("value iteration: iteration cap raises with a residual trace") {
  std::mt19937_64 rng(5);
  const auto m = random_mdp(rng, 5, 2, 0.99);
  try {
    value_iteration(m, 1e-12, 3);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual_trace.size() == 3);
    CHECK(std::string(e.what()).find("value_iteration") != std::string::npos);
  }
  CHECK_THROWS_AS(value_iteration(m, 0.0), MdpError);
}

TEST_CASE("transport: uniform marginals match the best permutation") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> cost(n * n);
      for (auto& c : cost) c = unit(rng);
      const std::vector<double> marg(n, 1.0 / double(n));
      std::vector<std::size_t> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      double best = 1e300;
      do {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cost[i * n + perm[i]] / double(n);
        best = std::min(best, s);
      } while (std::next_permutation(perm.begin(), perm.end()));
      const auto plan = solve_transport(marg, marg, cost);
      CHECK(std::abs(plan.cost - best) < 1e-12);
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row += plan.flow[i * n + j];
          col += plan.flow[j * n + i];
          CHECK(plan.flow[i * n + j] >= -1e-15);
        }
        CHECK(std::abs(row - marg[i]) < 1e-12);
        CHECK(std::abs(col - marg[i]) < 1e-12);
      }
    }
  }
}

TEST_CASE("transport: optimal coupling never costs more than the product coupling") {
  std::mt19937_64 rng(4);
  const std::size_t n = 7;
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_metric(rng, n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> p(n), q(n);
    for (auto& v : p) v = unit(rng);
    for (auto& v : q) v = unit(rng);
    const double sp = std::accumulate(p.begin(), p.end(), 0.0), sq = std::accumulate(q.begin(), q.end(), 0.0);
    for (auto& v : p) v /= sp;
    for (auto& v : q) v /= sq;
    double product = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) product += p[i] * q[j] * g(i, j);
    const double w = wasserstein(p, q, g.values(), n);
    CHECK(w <= product + 1e-12);
    CHECK(w >= 0.0);
    CHECK(wasserstein(p, p, g.values(), n) < 1e-12);
  }
  CHECK_THROWS_AS(solve_transport(std::vector<double>{1.0}, std::vector<double>{0.5}, std::vector<double>{1.0}),
                  std::invalid_argument);
}

TEST_CASE("wasserstein operator: indistinguishable states, zero metric, hand example") {
  std::mt19937_64 rng(8);
  const auto m = with_duplicate(random_mdp(rng, 4, 2, 0.9));
  const auto pi = Policy::uniform(m.num_states, m.num_actions);
  const auto g = random_metric(rng, m.num_states);
  const auto out = bisim_operator_wasserstein(m, pi, g, 0.7);
  CHECK(out(0, 4) < 1e-12);
  CHECK(out.is_valid());

  const auto r = policy_rewards(m, pi);
  const auto zero = bisim_operator_wasserstein(m, pi, MetricMatrix(m.num_states), 0.7);
  for (std::size_t i = 0; i < m.num_states; ++i)
    for (std::size_t j = 0; j < m.num_states; ++j) CHECK(zero(i, j) == (1.0 - 0.7) * std::abs(r[i] - r[j]));

  const auto c3 = chain3();
  const auto d = bisim_operator_wasserstein(c3, Policy::uniform(3, 1), MetricMatrix(3), 0.5);
  CHECK(d(0, 2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(d(0, 1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_AS(bisim_operator_wasserstein(c3, Policy::uniform(3, 1), MetricMatrix(3), 1.0), MdpError);
  CHECK_THROWS_AS(bisim_operator_mico(c3, Policy::uniform(3, 1), MetricMatrix(3), 1.5), MdpError);
}

TEST_CASE("mico operator: agrees with wasserstein on deterministic transitions") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = random_deterministic_mdp(rng, 7, 3, 0.9);
    std::vector<std::size_t> acts(7);
    for (auto& a : acts) a = std::size_t(rng() % 3);
    const auto det = Policy::deterministic(acts, 3);
    const auto g = random_metric(rng, 7);
    const auto a = bisim_operator_mico(m, det, g, 0.8);
    const auto b = bisim_operator_wasserstein(m, det, g, 0.8);
    CHECK(MetricMatrix::distance(a, b) < 1e-12);
  }
  std::mt19937_64 rng2(1);
  const auto m = random_mdp(rng2, 5, 2, 0.9);
  const auto pi = Policy::uniform(5, 2);
  const auto r = policy_rewards(m, pi);
  const auto zero = bisim_operator_mico(m, pi, MetricMatrix(5), 0.6);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(zero(i, j) - 0.4 * std::abs(r[i] - r[j])) < 1e-15);
}

TEST_CASE("mico operator: matches a paired-sample estimate") {
  std::mt19937_64 rng(2024);
  const std::size_t n = 6;
  const double c = 0.9;
  const auto m = random_mdp(rng, n, 2, 0.9, 4);
  const auto pi = random_policy(rng, n, 2);
  const auto g = random_metric(rng, n);
  const auto exact = bisim_operator_mico(m, pi, g, c);
  const auto P = policy_transitions(m, pi);
  const auto r = policy_rewards(m, pi);
  std::vector<std::discrete_distribution<std::size_t>> next;
  for (std::size_t i = 0; i < n; ++i) next.emplace_back(P.begin() + long(i * n), P.begin() + long((i + 1) * n));
  const int samples = 1'000'000;
  int outside = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double sum = 0.0, sum2 = 0.0;
      for (int k = 0; k < samples; ++k) {
        const double v = g(next[i](rng), next[j](rng));
        sum += v;
        sum2 += v * v;
      }
      const double mean = sum / samples;
      const double se = std::sqrt(std::max(0.0, sum2 / samples - mean * mean) / samples);
      const double estimate = (1 - c) * std::abs(r[i] - r[j]) + c * mean;
      if (std::abs(estimate - exact(i, j)) > 3.0 * c * se + 1e-15) ++outside;
    }
  }
  // 15 pairs at 3 standard errors: allow one excursion.
  CHECK(outside <= 1);
}

TEST_CASE("operators: monotone contractions") {
  std::mt19937_64 rng(17);
  for (auto kind : {CouplingKind::wasserstein, CouplingKind::independent}) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 6;
      const auto m = random_mdp(rng, n, 3, 0.9);
      const auto pi = random_policy(rng, n, 3);
      const MetricOperator op(m, pi, 0.85, kind);
      const auto g = random_metric(rng, n);
      auto h = g;
      std::uniform_real_distribution<double> bump(0.0, 0.5);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) h.set(i, j, g(i, j) + bump(rng));
      const auto fg = op.apply(g), fh = op.apply(h);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) CHECK(fg(i, j) <= fh(i, j) + 1e-12);
      CHECK(MetricMatrix::distance(fg, fh) <= 0.85 * MetricMatrix::distance(g, h) + 1e-12);
      CHECK(fg.is_valid());
    }
  }
}

TEST_CASE("fixed point: bisimilar duplicates sit at distance zero") {
  std::mt19937_64 rng(31);
  const auto m = with_duplicate(random_mdp(rng, 5, 2, 0.9));
  auto pi = random_policy(rng, 6, 2);
  for (std::size_t a = 0; a < 2; ++a) pi(5, a) = pi(0, a);
  const MetricOperator op(m, pi, 0.9, CouplingKind::wasserstein);
  const auto fp = solve_fixed_point(op, random_metric(rng, 6), 1e-11, 5000);
  CHECK(fp.metric(0, 5) < 1e-9);
  CHECK(fp.contraction_ok);

  // With independent next states the duplicates only coincide when the
  // successors are point masses.
  const auto d = with_duplicate(random_deterministic_mdp(rng, 5, 2, 0.9));
  std::vector<std::size_t> acts{0, 1, 1, 0, 1};
  acts.push_back(acts[0]);
  const MetricOperator mico(d, Policy::deterministic(acts, 2), 0.9, CouplingKind::independent);
  const auto fm = solve_fixed_point(mico, random_metric(rng, 6), 1e-11, 5000);
  CHECK(fm.metric(0, 5) < 1e-9);
}

TEST_CASE("fixed point: single state") {
  TabularMDP m(1, 2, 0.5);
  m.P(0, 0, 0) = m.P(0, 1, 0) = 1.0;
  m.R(0, 0) = 1.0;
  m.initial = {1.0};
  const MetricOperator op(m, Policy::uniform(1, 2), 0.5, CouplingKind::independent);
  const auto fp = solve_fixed_point(op, MetricMatrix(1), 1e-12, 10);
  CHECK(fp.metric.size() == 1);
  CHECK(fp.metric(0, 0) == 0.0);
}

TEST_CASE("fixed point: random 10-state MDP is initialization independent") {
  std::mt19937_64 rng(77);
  const auto m = random_mdp(rng, 10, 3, 0.9);
  const auto pi = random_policy(rng, 10, 3);
  for (auto kind : {CouplingKind::independent, CouplingKind::wasserstein}) {
    const MetricOperator op(m, pi, 0.9, kind);
    const auto a = solve_fixed_point(op, MetricMatrix(10), 1e-10, 2000);
    const auto b = solve_fixed_point(op, random_metric(rng, 10, 5.0), 1e-10, 2000);
    CHECK(a.residual < 1e-9);
    CHECK(b.residual < 1e-9);
    CHECK(a.iterations <= 2000);
    CHECK(MetricMatrix::distance(a.metric, b.metric) < 1e-8);
    CHECK(a.contraction_ok);
    CHECK(b.contraction_ok);
    CHECK(b.max_contraction_ratio <= 0.9 + 1e-6);
  }
}

TEST_CASE("fixed point: deterministic MDPs give identical metrics under both couplings") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = random_deterministic_mdp(rng, 8, 2, 0.9);
    std::vector<std::size_t> acts(8);
    for (auto& a : acts) a = std::size_t(rng() % 2);
    const auto pi = Policy::deterministic(acts, 2);
    const auto a = solve_fixed_point(MetricOperator(m, pi, 0.9, CouplingKind::independent), MetricMatrix(8),
                                     1e-12, 5000);
    const auto b = solve_fixed_point(MetricOperator(m, pi, 0.9, CouplingKind::wasserstein), MetricMatrix(8),
                                     1e-12, 5000);
    CHECK(MetricMatrix::distance(a.metric, b.metric) < 1e-11);
  }
}

TEST_CASE("fixed point: iteration cap raises with the step trace") {
  std::mt19937_64 rng(3);
  const auto m = random_mdp(rng, 4, 2, 0.9);
  const MetricOperator op(m, Policy::uniform(4, 2), 0.99, CouplingKind::independent);
  try {
    solve_fixed_point(op, MetricMatrix(4), 1e-14, 5);
    FAIL("expected ConvergenceError");
  } catch (const ConvergenceError& e) {
    CHECK(e.residual_trace.size() == 5);
  }
}

TEST_CASE("aggregation: radius extremes and duplicates") {
  std::mt19937_64 rng(41);
  auto g = random_metric(rng, 6);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i + 1; j < 6; ++j) g.set(i, j, g(i, j) + 0.01);
  const auto singles = aggregate_epsilon(g, 0.0);
  CHECK(singles.num_clusters() == 6);
  CHECK(singles.epsilon == 0.0);
  const auto one = aggregate_epsilon(g, g.max_entry());
  CHECK(one.num_clusters() == 1);
  CHECK(one.epsilon <= g.max_entry());
  for (std::size_t s = 0; s < 6; ++s) CHECK(one.cluster_of[s] == 0);

  const auto m = with_duplicate(random_mdp(rng, 5, 2, 0.9));
  CertifyOptions opts;
  opts.coupling = CouplingKind::wasserstein;
  const auto metric = certification_metric(m, opts);
  const auto agg = aggregate_epsilon(metric, 1e-9);
  CHECK(agg.num_clusters() == 5);
  CHECK(agg.cluster_of[5] == agg.cluster_of[0]);
  CHECK_THROWS_AS(aggregate_epsilon(g, -1.0), MdpError);
}

TEST_CASE("aggregation: members within twice the radius") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = random_mdp(rng, 9, 2, 0.9);
    const auto metric = certification_metric(m);
    std::uniform_real_distribution<double> radius(0.0, metric.max_entry());
    const auto agg = aggregate_epsilon(metric, radius(rng));
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 9; ++j)
        if (agg.cluster_of[i] == agg.cluster_of[j]) CHECK(metric(i, j) <= 2 * agg.epsilon + 1e-12);
  }
}

TEST_CASE("latent MDP: identity, duplicates, averaging") {
  std::mt19937_64 rng(51);
  const auto m = random_mdp(rng, 6, 3, 0.9);
  const auto same = build_latent_mdp(m, Aggregation::identity(6));
  CHECK(max_abs_diff(same.transitions, m.transitions) < 1e-12);
  CHECK(max_abs_diff(same.rewards, m.rewards) < 1e-12);
  CHECK(max_abs_diff(same.initial, m.initial) < 1e-12);
  CHECK(measure_eta(m, Aggregation::identity(6), same) < 1e-12);

  const auto d = with_duplicate(m);
  CertifyOptions opts;
  opts.coupling = CouplingKind::wasserstein;
  const auto agg = aggregate_epsilon(certification_metric(d, opts), 1e-9);
  const auto latent = build_latent_mdp(d, agg);
  latent.validate();
  const auto v = value_iteration(d, 1e-12).values;
  const auto vl = value_iteration(latent, 1e-12).values;
  for (std::size_t k = 0; k < agg.num_clusters(); ++k) CHECK(std::abs(v[agg.representatives[k]] - vl[k]) < 1e-8);

  TabularMDP two(2, 1, 0.5);
  two.P(0, 0, 0) = two.P(1, 0, 1) = 1.0;
  two.R(1, 0) = 1.0;
  two.initial = {0.5, 0.5};
  Aggregation all;
  all.cluster_of = {0, 0};
  all.representatives = {0};
  const auto merged = build_latent_mdp(two, all);
  CHECK(merged.num_states == 1);
  CHECK(merged.R(0, 0) == doctest::Approx(0.5));
  CHECK(merged.P(0, 0, 0) == doctest::Approx(1.0));
}

TEST_CASE("latent MDP: zero-mass cluster falls back to uniform weights") {
  TabularMDP two(2, 1, 0.5);
  two.P(0, 0, 0) = two.P(1, 0, 1) = 1.0;
  two.R(0, 0) = 0.2;
  two.R(1, 0) = 0.6;
  two.initial = {0.0, 1.0};
  Aggregation agg = Aggregation::identity(2);
  agg.cluster_of = {0, 0};
  agg.representatives = {0};
  CHECK(build_latent_mdp(two, agg).R(0, 0) == doctest::Approx(0.6));
  TabularMDP three(3, 1, 0.5);
  three.P(0, 0, 0) = three.P(1, 0, 1) = three.P(2, 0, 2) = 1.0;
  three.R(0, 0) = 0.2;
  three.R(1, 0) = 0.6;
  three.initial = {0.0, 0.0, 1.0};
  Aggregation pair;
  pair.cluster_of = {0, 0, 1};
  pair.representatives = {0, 2};
  CHECK(build_latent_mdp(three, pair).R(0, 0) == doctest::Approx(0.4));
}

TEST_CASE("value bound: identity and duplicate merges") {
  std::mt19937_64 rng(61);
  const auto m = random_mdp(rng, 7, 2, 0.9);
  const auto metric = certification_metric(m);
  const auto id = verify_value_bound(m, metric, 0.0, 0.95);
  CHECK(id.bound == 0.0);
  CHECK_FALSE(id.violation);
  for (double x : id.differences) CHECK(x < 1e-9);

  const auto d = with_duplicate(m);
  CertifyOptions opts;
  opts.coupling = CouplingKind::wasserstein;
  const auto dup = certify(d, 1e-9, opts);
  CHECK_FALSE(dup.violation);
  CHECK(dup.max_difference <= 1e-8);
  CHECK(dup.differences.size() == 8);

  const auto line = nlohmann::json::parse(dup.to_json_line());
  CHECK(line["violation"] == false);
  CHECK(line["differences"].size() == 8);
  CHECK_THROWS_AS(verify_value_bound(m, metric, 0.1, 0.8), MdpError);
}

TEST_CASE("value bound: randomized sweep has no violations") {
  std::mt19937_64 rng(2718);
  std::uniform_int_distribution<std::size_t> states(2, 12), actions(1, 4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = random_mdp(rng, states(rng), actions(rng), 0.9);
    const auto metric = certification_metric(m);
    const auto report = verify_value_bound(m, metric, unit(rng) * metric.max_entry(), 0.95);
    if (report.violation) {
      ++violations;
      MESSAGE(report.to_json_line());
    }
  }
  CHECK(violations == 0);
}

TEST_CASE("value bound: greedy-policy metric can merge states with different best actions") {
  // Both states look identical under their own best action, yet no single
  // latent action serves both.
  TabularMDP m(3, 2, 0.9);
  m.P(0, 0, 2) = m.P(0, 1, 2) = m.P(1, 0, 2) = m.P(1, 1, 2) = m.P(2, 0, 2) = m.P(2, 1, 2) = 1.0;
  m.R(0, 0) = 1.0;
  m.R(1, 1) = 1.0;
  m.initial = {0.5, 0.5, 0.0};
  CertifyOptions greedy;
  greedy.source = MetricSource::optimal_policy;
  const auto bad = certify(m, 0.0, greedy);
  CHECK(bad.bound == 0.0);
  CHECK(bad.violation);
  const auto good = certify(m, 0.0);
  CHECK_FALSE(good.violation);
  CHECK(good.max_difference == 0.0);
}

TEST_CASE("all-action metric dominates every single-action metric") {
  std::mt19937_64 rng(19);
  const auto m = random_mdp(rng, 7, 3, 0.9);
  const auto all = solve_fixed_point(MetricOperator(m, 0.9, CouplingKind::wasserstein), MetricMatrix(7), 1e-11, 5000);
  CHECK(all.contraction_ok);
  for (std::size_t a = 0; a < 3; ++a) {
    const auto pi = Policy::deterministic(std::vector<std::size_t>(7, a), 3);
    const auto one = solve_fixed_point(MetricOperator(m, pi, 0.9, CouplingKind::wasserstein), MetricMatrix(7), 1e-11, 5000);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) CHECK(one.metric(i, j) <= all.metric(i, j) + 1e-9);
  }
}

TEST_CASE("text format round trip is exact") {
  std::mt19937_64 rng(7);
  const auto m = random_mdp(rng, 5, 3, 0.95);
  std::stringstream ss;
  write_mdp(ss, m);
  const auto back = read_mdp(ss);
  CHECK(back.num_states == 5);
  CHECK(back.num_actions == 3);
  CHECK(back.discount == m.discount);
  CHECK(back.transitions == m.transitions);
  CHECK(back.rewards == m.rewards);
  CHECK(back.initial == m.initial);

  std::stringstream bad("mdp 2 1 0.9\nP 0 0 0.5 0.4\nP 1 0 0 1\nR 0 0\nR 1 0\np0 1 0\n");
  CHECK_THROWS_AS(read_mdp(bad), MdpError);
}
