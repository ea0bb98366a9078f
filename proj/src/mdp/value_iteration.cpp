#include "mfsc/mdp/value_iteration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace mfsc::mdp {

std::vector<double> q_values(const TabularMDP& mdp, const std::vector<double>& values) {
  std::vector<double> q(mdp.num_states * mdp.num_actions);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      double cont = 0.0;
      const auto row = mdp.next(s, a);
      for (std::size_t s2 = 0; s2 < mdp.num_states; ++s2) cont += row[s2] * values[s2];
      q[s * mdp.num_actions + a] = mdp.R(s, a) + mdp.discount * cont;
    }
  }
  return q;
}

ValueResult value_iteration(const TabularMDP& mdp, double tolerance, std::size_t max_iterations) {
  if (!(tolerance > 0.0)) throw MdpError("value_iteration: tolerance must be positive");
  mdp.validate();
  const auto S = mdp.num_states;
  const auto A = mdp.num_actions;
  ValueResult result;
  result.values.assign(S, 0.0);
  std::vector<double> trace;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const auto q = q_values(mdp, result.values);
    double residual = 0.0;
    std::vector<double> next(S);
    for (std::size_t s = 0; s < S; ++s) {
      next[s] = *std::max_element(q.begin() + s * A, q.begin() + (s + 1) * A);
      residual = std::max(residual, std::abs(next[s] - result.values[s]));
    }
    result.iterations = it + 1;
    if (residual <= tolerance) {
      // V itself meets the residual bound.
      result.residual = residual;
      result.greedy_actions.resize(S);
      for (std::size_t s = 0; s < S; ++s) {
        const auto first = q.begin() + s * A;
        result.greedy_actions[s] = std::size_t(std::max_element(first, first + A) - first);
      }
      return result;
    }
    if (trace.size() < 64) trace.push_back(residual);
    result.values = std::move(next);
  }
  throw ConvergenceError("value_iteration: no convergence after " + std::to_string(max_iterations) +
                             " iterations",
                         trace);
}

std::vector<double> policy_evaluation(const TabularMDP& mdp, const Policy& policy) {
  const auto n = mdp.num_states;
  const auto P = policy_transitions(mdp, policy);
  const auto r = policy_rewards(mdp, policy);
  const auto N = Eigen::Index(n);
  Eigen::MatrixXd M = Eigen::MatrixXd::Identity(N, N);
  Eigen::VectorXd b(N);
  for (std::size_t i = 0; i < n; ++i) {
    b(long(i)) = r[i];
    for (std::size_t j = 0; j < n; ++j) M(long(i), long(j)) -= mdp.discount * P[i * n + j];
  }
  Eigen::VectorXd v = M.partialPivLu().solve(b);
  return {v.data(), v.data() + n};
}

}  // namespace mfsc::mdp
