#include "mfsc/mdp/bisimulation.hpp"

#include <Eigen/Core>
#include <cmath>

#include "mfsc/mdp/transport.hpp"

namespace mfsc::mdp {

namespace {

void check_weight(double c) {
  if (!(c >= 0.0 && c < 1.0)) {
    throw MdpError("bisimulation operator: c must lie in [0, 1), got " + std::to_string(c));
  }
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

MetricOperator::MetricOperator(const TabularMDP& mdp, const Policy& policy, double c, CouplingKind kind)
    : n_(mdp.num_states), c_(c), kind_(kind) {
  check_weight(c);
  if (policy.num_states() != mdp.num_states || policy.num_actions() != mdp.num_actions) {
    throw MdpError("bisimulation operator: policy shape does not match the MDP");
  }
  rewards_.push_back(policy_rewards(mdp, policy));
  transitions_.push_back(policy_transitions(mdp, policy));
}

MetricOperator::MetricOperator(const TabularMDP& mdp, double c, CouplingKind kind)
    : n_(mdp.num_states), c_(c), kind_(kind) {
  check_weight(c);
  mdp.validate();
  for (std::size_t a = 0; a < mdp.num_actions; ++a) {
    const auto pi = Policy::deterministic(std::vector<std::size_t>(mdp.num_states, a), mdp.num_actions);
    rewards_.push_back(policy_rewards(mdp, pi));
    transitions_.push_back(policy_transitions(mdp, pi));
  }
}

MetricMatrix MetricOperator::apply(const MetricMatrix& g) const { return apply_weighted(g, 1.0 - c_, c_); }

MetricMatrix MetricOperator::apply_weighted(const MetricMatrix& g, double reward_weight,
                                            double transition_weight) const {
  if (g.size() != n_) throw MdpError("bisimulation operator: metric size does not match the MDP");
  MetricMatrix out = apply_branch(0, g, reward_weight, transition_weight);
  for (std::size_t b = 1; b < rewards_.size(); ++b) {
    const auto other = apply_branch(b, g, reward_weight, transition_weight);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) out.set(i, j, std::max(out(i, j), other(i, j)));
  }
  return out;
}

MetricMatrix MetricOperator::apply_branch(std::size_t b, const MetricMatrix& g, double reward_weight,
                                          double transition_weight) const {
  const auto n = n_;
  const auto& r = rewards_[b];
  const auto& trans = transitions_[b];
  MetricMatrix out(n);
  if (kind_ == CouplingKind::independent) {
    Eigen::Map<const RowMat> P(trans.data(), long(n), long(n));
    Eigen::Map<const RowMat> G(g.values().data(), long(n), long(n));
    RowMat E = P * G * P.transpose();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        // E is symmetric in exact arithmetic; average to keep the table symmetric.
        const double coupled = 0.5 * (E(long(i), long(j)) + E(long(j), long(i)));
        out.set(i, j, reward_weight * std::abs(r[i] - r[j]) + transition_weight * coupled);
      }
    }
    return out;
  }
  const std::span<const double> P(trans);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = wasserstein(P.subspan(i * n, n), P.subspan(j * n, n), g.values(), n);
      out.set(i, j, reward_weight * std::abs(r[i] - r[j]) + transition_weight * w);
    }
  }
  return out;
}

MetricMatrix bisim_operator_wasserstein(const TabularMDP& mdp, const Policy& policy,
                                        const MetricMatrix& g, double c) {
  return MetricOperator(mdp, policy, c, CouplingKind::wasserstein).apply(g);
}

MetricMatrix bisim_operator_mico(const TabularMDP& mdp, const Policy& policy, const MetricMatrix& g,
                                 double c) {
  return MetricOperator(mdp, policy, c, CouplingKind::independent).apply(g);
}

FixedPointResult solve_fixed_point(const MetricOperator& op, const MetricMatrix& initial, double tolerance,
                                   std::size_t max_iterations) {
  if (!(tolerance > 0.0)) throw MdpError("solve_fixed_point: tolerance must be positive");
  FixedPointResult result;
  MetricMatrix g = initial;
  const double c = op.contraction();
  for (std::size_t it = 0; it < max_iterations; ++it) {
    MetricMatrix next = op.apply(g);
    const double step = MetricMatrix::distance(next, g);
    if (!result.step_sizes.empty()) {
      const double prev = result.step_sizes.back();
      // Steps near machine precision are dominated by rounding.
      const double floor = 1e-14 * std::max(1.0, next.max_entry());
      // Ratios of steps far above rounding; smaller ones only feed the bound check below.
      if (prev > 1e-6 * std::max(1.0, next.max_entry())) {
        result.max_contraction_ratio = std::max(result.max_contraction_ratio, step / prev);
      }
      if (step > (c + 1e-9) * prev + floor) result.contraction_ok = false;
    }
    result.step_sizes.push_back(step);
    g = std::move(next);
    if (step <= tolerance) {
      result.metric = std::move(g);
      result.iterations = it + 1;
      result.residual = step;
      return result;
    }
  }
  throw ConvergenceError("solve_fixed_point: residual " + std::to_string(result.step_sizes.back()) +
                             " after " + std::to_string(max_iterations) + " iterations",
                         result.step_sizes);
}

MetricMatrix random_metric(std::mt19937_64& rng, std::size_t n, double scale) {
  std::uniform_real_distribution<double> unit(0.0, scale);
  MetricMatrix m(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) m.set(i, j, unit(rng));
  }
  return m;
}

}  // namespace mfsc::mdp
