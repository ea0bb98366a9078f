#include "mfsc/mdp/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "mfsc/mdp/value_iteration.hpp"

namespace mfsc::mdp {

std::vector<std::vector<std::size_t>> Aggregation::members() const {
  std::vector<std::vector<std::size_t>> out(representatives.size());
  for (std::size_t s = 0; s < cluster_of.size(); ++s) out[cluster_of[s]].push_back(s);
  return out;
}

Aggregation Aggregation::identity(std::size_t n) {
  Aggregation agg;
  for (std::size_t s = 0; s < n; ++s) {
    agg.cluster_of.push_back(s);
    agg.representatives.push_back(s);
  }
  return agg;
}

Aggregation aggregate_epsilon(const MetricMatrix& metric, double epsilon) {
  if (!(epsilon >= 0.0)) throw MdpError("aggregate_epsilon: epsilon must be nonnegative");
  Aggregation agg;
  const auto n = metric.size();
  agg.cluster_of.assign(n, 0);
  for (std::size_t s = 0; s < n; ++s) {
    bool placed = false;
    for (std::size_t k = 0; k < agg.representatives.size(); ++k) {
      const double d = metric(agg.representatives[k], s);
      if (d <= epsilon) {
        agg.cluster_of[s] = k;
        agg.epsilon = std::max(agg.epsilon, d);
        placed = true;
        break;
      }
    }
    if (!placed) {
      agg.cluster_of[s] = agg.representatives.size();
      agg.representatives.push_back(s);
    }
  }
  return agg;
}

namespace {

std::vector<double> member_weights(const TabularMDP& mdp, const std::vector<std::size_t>& members) {
  std::vector<double> w(members.size(), 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < members.size(); ++k) {
    w[k] = mdp.initial.empty() ? 0.0 : mdp.initial[members[k]];
    total += w[k];
  }
  if (total <= 0.0) {
    std::fill(w.begin(), w.end(), 1.0 / double(members.size()));
  } else {
    for (auto& v : w) v /= total;
  }
  return w;
}

}  // namespace

TabularMDP build_latent_mdp(const TabularMDP& mdp, const Aggregation& agg) {
  if (agg.cluster_of.size() != mdp.num_states) {
    throw MdpError("build_latent_mdp: aggregation does not cover every state");
  }
  const auto K = agg.num_clusters();
  const auto A = mdp.num_actions;
  TabularMDP latent(K, A, mdp.discount);
  latent.initial.assign(K, 0.0);
  const auto groups = agg.members();
  for (std::size_t k = 0; k < K; ++k) {
    if (groups[k].empty()) throw MdpError("build_latent_mdp: empty cluster");
    const auto w = member_weights(mdp, groups[k]);
    for (std::size_t a = 0; a < A; ++a) {
      double reward = 0.0;
      auto row = latent.next(k, a);
      std::fill(row.begin(), row.end(), 0.0);
      for (std::size_t m = 0; m < groups[k].size(); ++m) {
        const auto s = groups[k][m];
        reward += w[m] * mdp.R(s, a);
        const auto src = mdp.next(s, a);
        for (std::size_t s2 = 0; s2 < mdp.num_states; ++s2) row[agg.cluster_of[s2]] += w[m] * src[s2];
      }
      double total = 0.0;
      for (auto v : row) total += v;
      for (auto& v : row) v /= total;
      latent.R(k, a) = reward;
    }
    for (auto s : groups[k]) latent.initial[k] += mdp.initial.empty() ? 1.0 / double(mdp.num_states) : mdp.initial[s];
  }
  double total = 0.0;
  for (auto v : latent.initial) total += v;
  for (auto& v : latent.initial) v /= total;
  return latent;
}

double measure_eta(const TabularMDP& mdp, const Aggregation& agg, const TabularMDP& latent) {
  const auto K = agg.num_clusters();
  double eta = 0.0;
  std::vector<double> mapped(K);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    const auto k = agg.cluster_of[s];
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      std::fill(mapped.begin(), mapped.end(), 0.0);
      const auto src = mdp.next(s, a);
      for (std::size_t s2 = 0; s2 < mdp.num_states; ++s2) mapped[agg.cluster_of[s2]] += src[s2];
      double tv = 0.0;
      const auto row = latent.next(k, a);
      for (std::size_t j = 0; j < K; ++j) tv += std::abs(mapped[j] - row[j]);
      eta = std::max(eta, 0.5 * tv + std::abs(mdp.R(s, a) - latent.R(k, a)));
    }
  }
  return eta;
}

std::string BoundReport::to_json_line() const {
  nlohmann::json j;
  j["epsilon"] = epsilon;
  j["discount"] = discount;
  j["c"] = c;
  j["bound"] = bound;
  j["max_difference"] = max_difference;
  j["slack"] = slack;
  j["violation"] = violation;
  j["differences"] = differences;
  return j.dump();
}

BoundReport verify_value_bound(const TabularMDP& mdp, const MetricMatrix& metric, double epsilon, double c) {
  if (c < mdp.discount) {
    throw MdpError("verify_value_bound: c = " + std::to_string(c) + " is below the discount " +
                   std::to_string(mdp.discount));
  }
  if (!(c < 1.0)) throw MdpError("verify_value_bound: c must be below 1");
  if (metric.size() != mdp.num_states) throw MdpError("verify_value_bound: metric size does not match the MDP");

  const auto agg = aggregate_epsilon(metric, epsilon);
  const auto latent = build_latent_mdp(mdp, agg);
  const auto v = value_iteration(mdp, 1e-11).values;
  const auto v_latent = value_iteration(latent, 1e-11).values;

  BoundReport report;
  report.epsilon = agg.epsilon;
  report.discount = mdp.discount;
  report.c = c;
  report.bound = 2.0 * agg.epsilon / ((1.0 - mdp.discount) * (1.0 - c));
  report.differences.resize(mdp.num_states);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    report.differences[s] = std::abs(v[s] - v_latent[agg.cluster_of[s]]);
    report.max_difference = std::max(report.max_difference, report.differences[s]);
  }
  report.slack = report.bound - report.max_difference;
  report.violation = report.max_difference > report.bound + 1e-6;
  return report;
}

MetricMatrix certification_metric(const TabularMDP& mdp, const CertifyOptions& options) {
  auto solve = [&](const MetricOperator& op) {
    return solve_fixed_point(op, MetricMatrix(mdp.num_states), options.metric_tolerance, options.max_iterations)
        .metric;
  };
  if (options.source == MetricSource::all_actions) return solve(MetricOperator(mdp, options.c, options.coupling));
  const auto vi = value_iteration(mdp, options.value_tolerance);
  const auto policy = Policy::deterministic(vi.greedy_actions, mdp.num_actions);
  return solve(MetricOperator(mdp, policy, options.c, options.coupling));
}

BoundReport certify(const TabularMDP& mdp, double epsilon, const CertifyOptions& options) {
  return verify_value_bound(mdp, certification_metric(mdp, options), epsilon, options.c);
}

}  // namespace mfsc::mdp
