#pragma once

#include <cstddef>
#include <iosfwd>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfsc::mdp {

class MdpError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Finite MDP with dense transition and reward tables.
struct TabularMDP {
  std::size_t num_states = 0;
  std::size_t num_actions = 0;
  std::vector<double> transitions;  // [s][a][s'], row-major
  std::vector<double> rewards;      // [s][a]
  double discount = 0.9;
  std::vector<double> initial;      // p0 over states

  TabularMDP() = default;
  TabularMDP(std::size_t states, std::size_t actions, double gamma);

  std::span<const double> next(std::size_t s, std::size_t a) const {
    return {transitions.data() + (s * num_actions + a) * num_states, num_states};
  }
  std::span<double> next(std::size_t s, std::size_t a) {
    return {transitions.data() + (s * num_actions + a) * num_states, num_states};
  }
  double& P(std::size_t s, std::size_t a, std::size_t s2) {
    return transitions[(s * num_actions + a) * num_states + s2];
  }
  double P(std::size_t s, std::size_t a, std::size_t s2) const {
    return transitions[(s * num_actions + a) * num_states + s2];
  }
  double& R(std::size_t s, std::size_t a) { return rewards[s * num_actions + a]; }
  double R(std::size_t s, std::size_t a) const { return rewards[s * num_actions + a]; }

  /// Throws MdpError naming the first violated invariant.
  void validate() const;
};

/// Stochastic policy pi[s][a].
class Policy {
 public:
  Policy() = default;
  Policy(std::size_t states, std::size_t actions);
  static Policy uniform(std::size_t states, std::size_t actions);
  static Policy deterministic(const std::vector<std::size_t>& actions, std::size_t num_actions);

  std::size_t num_states() const { return states_; }
  std::size_t num_actions() const { return actions_; }
  double& operator()(std::size_t s, std::size_t a) { return probs_[s * actions_ + a]; }
  double operator()(std::size_t s, std::size_t a) const { return probs_[s * actions_ + a]; }
  void validate() const;

 private:
  std::size_t states_ = 0, actions_ = 0;
  std::vector<double> probs_;
};

/// Symmetric nonnegative distance table with zero diagonal.
class MetricMatrix {
 public:
  MetricMatrix() = default;
  explicit MetricMatrix(std::size_t n, double fill = 0.0);

  std::size_t size() const { return n_; }
  double operator()(std::size_t i, std::size_t j) const { return d_[i * n_ + j]; }
  /// Writes both (i, j) and (j, i).
  void set(std::size_t i, std::size_t j, double v) {
    d_[i * n_ + j] = v;
    d_[j * n_ + i] = v;
  }
  std::span<const double> values() const { return d_; }
  double max_entry() const;
  /// max |a - b| over all entries.
  static double distance(const MetricMatrix& a, const MetricMatrix& b);
  /// Checks symmetry, zero diagonal, and nonnegativity within tol.
  bool is_valid(double tol = 1e-12) const;

 private:
  std::size_t n_ = 0;
  std::vector<double> d_;
};

/// Expected immediate reward r^pi[s].
std::vector<double> policy_rewards(const TabularMDP& mdp, const Policy& policy);
/// Row-stochastic P^pi as a dense [s][s'] table.
std::vector<double> policy_transitions(const TabularMDP& mdp, const Policy& policy);

/// Random MDP for property sweeps: each (s, a) gets 1..max_successors
/// successors with random weights, rewards in [0, 1), random p0.
TabularMDP random_mdp(std::mt19937_64& rng, std::size_t states, std::size_t actions,
                      double discount, std::size_t max_successors = 3);
Policy random_policy(std::mt19937_64& rng, std::size_t states, std::size_t actions);

// Plain-text table format:
//
//   mdp <num_states> <num_actions> <discount>
//   P <s> <a> <p(0)> ... <p(S-1)>     one line per (s, a)
//   R <s> <r(a=0)> ... <r(A-1)>       one line per s
//   p0 <q(0)> ... <q(S-1)>
//
// Lines starting with '#' are comments. Values are written with 17
// significant digits so a save/load cycle is exact.
void write_mdp(std::ostream& os, const TabularMDP& mdp);
TabularMDP read_mdp(std::istream& is);

}  // namespace mfsc::mdp
