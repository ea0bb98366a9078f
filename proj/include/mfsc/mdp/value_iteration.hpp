#pragma once

#include <stdexcept>
#include <vector>

#include "mfsc/mdp/tabular.hpp"

namespace mfsc::mdp {

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), residual_trace(std::move(trace)) {}
  std::vector<double> residual_trace;
};

struct ValueResult {
  std::vector<double> values;
  std::vector<std::size_t> greedy_actions;  // ties resolve to the lowest action id
  double residual = 0.0;                    // ||Bellman(V) - V||_inf
  std::size_t iterations = 0;
};

/// Optimal values by Bellman iteration until ||Bellman(V) - V||_inf <= tolerance.
ValueResult value_iteration(const TabularMDP& mdp, double tolerance, std::size_t max_iterations = 1'000'000);

/// Q(s, a) = R(s, a) + gamma * sum_s' P(s'|s, a) V(s').
std::vector<double> q_values(const TabularMDP& mdp, const std::vector<double>& values);

/// Exact V^pi by solving (I - gamma P^pi) V = r^pi.
std::vector<double> policy_evaluation(const TabularMDP& mdp, const Policy& policy);

}  // namespace mfsc::mdp
