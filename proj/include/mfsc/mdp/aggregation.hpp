#pragma once

#include <limits>
#include <string>
#include <vector>

#include "mfsc/mdp/bisimulation.hpp"
#include "mfsc/mdp/tabular.hpp"

namespace mfsc::mdp {

struct Aggregation {
  std::vector<std::size_t> cluster_of;       // state -> cluster id
  std::vector<std::size_t> representatives;  // cluster id -> first member
  double epsilon = 0.0;                      // max distance from a member to its representative
  double eta = std::numeric_limits<double>::quiet_NaN();  // filled in by measure_eta

  std::size_t num_clusters() const { return representatives.size(); }
  std::vector<std::vector<std::size_t>> members() const;
  static Aggregation identity(std::size_t n);
};

/// Greedy first-fit: states in index order join the first cluster whose
/// representative lies within epsilon, else open a new cluster.
Aggregation aggregate_epsilon(const MetricMatrix& metric, double epsilon);

/// Latent MDP over clusters. Member rows are averaged with p0 weights
/// renormalized inside the cluster (uniform when the cluster has no p0 mass).
TabularMDP build_latent_mdp(const TabularMDP& mdp, const Aggregation& agg);

/// Worst deviation of a member's aggregated transition row and reward from
/// the latent MDP's row, in total variation plus absolute reward.
double measure_eta(const TabularMDP& mdp, const Aggregation& agg, const TabularMDP& latent);

struct BoundReport {
  std::vector<double> differences;  // |V*(s) - V*_latent(cluster_of[s])|
  double epsilon = 0.0;
  double discount = 0.0;
  double c = 0.0;
  double bound = 0.0;  // 2 eps / ((1 - gamma)(1 - c))
  double max_difference = 0.0;
  double slack = 0.0;  // bound - max_difference
  bool violation = false;

  std::string to_json_line() const;
};

/// Checks |V*(s) - V*_latent(phi(s))| <= 2 eps / ((1 - gamma)(1 - c)), where
/// eps is the radius of the aggregation of `metric` at `epsilon`.
BoundReport verify_value_bound(const TabularMDP& mdp, const MetricMatrix& metric, double epsilon, double c);

enum class MetricSource {
  all_actions,     // maximum over actions; bounds every action's gap
  optimal_policy,  // fixed point under the greedy-optimal policy only
};

struct CertifyOptions {
  double c = 0.95;
  MetricSource source = MetricSource::all_actions;
  CouplingKind coupling = CouplingKind::independent;
  double value_tolerance = 1e-10;
  double metric_tolerance = 1e-10;
  std::size_t max_iterations = 20000;
};

/// Full chain: metric fixed point -> aggregation at `epsilon` -> bound check.
BoundReport certify(const TabularMDP& mdp, double epsilon, const CertifyOptions& options = {});

/// Fixed-point metric selected by options.source.
MetricMatrix certification_metric(const TabularMDP& mdp, const CertifyOptions& options = {});

}  // namespace mfsc::mdp
