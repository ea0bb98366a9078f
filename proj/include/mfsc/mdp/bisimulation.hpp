#pragma once

#include <vector>

#include "mfsc/mdp/tabular.hpp"
#include "mfsc/mdp/value_iteration.hpp"

namespace mfsc::mdp {

enum class CouplingKind {
  wasserstein,  // optimal coupling of next-state distributions
  independent,  // MICo-style expectation under independent next states
};

/// F(g)(i, j) = (1 - c) |r_i - r_j| + c * W_g(P_i, P_j), with W solved exactly.
MetricMatrix bisim_operator_wasserstein(const TabularMDP& mdp, const Policy& policy,
                                        const MetricMatrix& g, double c);

/// F(g)(i, j) = (1 - c) |r_i - r_j| + c * sum_{x, y} P_i(x) P_j(y) g(x, y) for
/// i != j; the diagonal stays zero.
MetricMatrix bisim_operator_mico(const TabularMDP& mdp, const Policy& policy, const MetricMatrix& g,
                                 double c);

/// Either operator bound to an MDP and policy. Policy-dependent quantities
/// (r^pi, P^pi) are computed once.
///
/// The policy-free form takes the maximum over actions of the per-action
/// update, giving a metric that bounds every action's reward and next-state
/// gap at once.
class MetricOperator {
 public:
  MetricOperator(const TabularMDP& mdp, const Policy& policy, double c, CouplingKind kind);
  MetricOperator(const TabularMDP& mdp, double c, CouplingKind kind);

  MetricMatrix apply(const MetricMatrix& g) const;
  /// Same operator with explicit reward and next-state weights:
  /// w_r |r_i - r_j| + w_t * coupling(g).
  MetricMatrix apply_weighted(const MetricMatrix& g, double reward_weight, double transition_weight) const;

  double contraction() const { return c_; }
  CouplingKind kind() const { return kind_; }
  std::size_t num_states() const { return n_; }
  std::size_t num_branches() const { return rewards_.size(); }
  /// r and P of branch b (the policy, or action b in the policy-free form).
  const std::vector<double>& rewards(std::size_t b = 0) const { return rewards_.at(b); }
  const std::vector<double>& transitions(std::size_t b = 0) const { return transitions_.at(b); }

 private:
  MetricMatrix apply_branch(std::size_t b, const MetricMatrix& g, double reward_weight,
                            double transition_weight) const;

  std::size_t n_ = 0;
  std::vector<std::vector<double>> rewards_;
  std::vector<std::vector<double>> transitions_;
  double c_;
  CouplingKind kind_;
};

struct FixedPointResult {
  MetricMatrix metric;
  std::size_t iterations = 0;
  double residual = 0.0;             // ||F(g) - g||_inf at the returned iterate's predecessor
  std::vector<double> step_sizes;    // ||g_{t+1} - g_t||_inf per iteration
  double max_contraction_ratio = 0;  // max step_{t+1} / step_t over steps above 1e-6 of the metric scale
  bool contraction_ok = true;        // every ratio <= c + 1e-9 (up to round-off)
};

/// Iterates g <- F(g) until ||F(g) - g||_inf <= tolerance. Throws
/// ConvergenceError carrying the step trace if max_iterations is hit.
FixedPointResult solve_fixed_point(const MetricOperator& op, const MetricMatrix& initial,
                                   double tolerance, std::size_t max_iterations);

/// Random valid starting metric with entries in [0, scale).
MetricMatrix random_metric(std::mt19937_64& rng, std::size_t n, double scale = 1.0);

}  // namespace mfsc::mdp
