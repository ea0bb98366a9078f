#include "mfsc/mdp/tabular.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace mfsc::mdp {

TabularMDP::TabularMDP(std::size_t states, std::size_t actions, double gamma)
    : num_states(states),
      num_actions(actions),
      transitions(states * actions * states, 0.0),
      rewards(states * actions, 0.0),
      discount(gamma),
      initial(states, states ? 1.0 / double(states) : 0.0) {}

void TabularMDP::validate() const {
  if (num_states == 0 || num_actions == 0) throw MdpError("mdp: needs at least one state and action");
  if (transitions.size() != num_states * num_actions * num_states) {
    throw MdpError("mdp: transition table has wrong size");
  }
  if (rewards.size() != num_states * num_actions) throw MdpError("mdp: reward table has wrong size");
  if (initial.size() != num_states) throw MdpError("mdp: initial distribution has wrong size");
  if (!(discount >= 0.0 && discount < 1.0)) {
    throw MdpError("mdp: discount must lie in [0, 1), got " + std::to_string(discount));
  }
  for (std::size_t s = 0; s < num_states; ++s) {
    for (std::size_t a = 0; a < num_actions; ++a) {
      double total = 0.0;
      for (auto p : next(s, a)) {
        if (!(p >= 0.0)) {
          throw MdpError("mdp: negative transition probability at s=" + std::to_string(s) +
                         " a=" + std::to_string(a));
        }
        total += p;
      }
      if (std::abs(total - 1.0) > 1e-12) {
        throw MdpError("mdp: P[" + std::to_string(s) + "][" + std::to_string(a) + "] sums to " +
                       std::to_string(total));
      }
      if (!std::isfinite(R(s, a))) throw MdpError("mdp: non-finite reward");
    }
  }
  double total = 0.0;
  for (auto p : initial) {
    if (!(p >= 0.0)) throw MdpError("mdp: negative initial probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw MdpError("mdp: initial distribution sums to " + std::to_string(total));
}

Policy::Policy(std::size_t states, std::size_t actions)
    : states_(states), actions_(actions), probs_(states * actions, 0.0) {}

Policy Policy::uniform(std::size_t states, std::size_t actions) {
  Policy p(states, actions);
  std::fill(p.probs_.begin(), p.probs_.end(), 1.0 / double(actions));
  return p;
}

Policy Policy::deterministic(const std::vector<std::size_t>& actions, std::size_t num_actions) {
  Policy p(actions.size(), num_actions);
  for (std::size_t s = 0; s < actions.size(); ++s) p(s, actions[s]) = 1.0;
  return p;
}

void Policy::validate() const {
  for (std::size_t s = 0; s < states_; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < actions_; ++a) {
      if (!((*this)(s, a) >= 0.0)) throw MdpError("policy: negative probability");
      total += (*this)(s, a);
    }
    if (std::abs(total - 1.0) > 1e-12) throw MdpError("policy: row " + std::to_string(s) + " does not sum to 1");
  }
}

MetricMatrix::MetricMatrix(std::size_t n, double fill) : n_(n), d_(n * n, fill) {
  for (std::size_t i = 0; i < n; ++i) d_[i * n + i] = 0.0;
}

double MetricMatrix::max_entry() const {
  return d_.empty() ? 0.0 : *std::max_element(d_.begin(), d_.end());
}

double MetricMatrix::distance(const MetricMatrix& a, const MetricMatrix& b) {
  if (a.n_ != b.n_) throw MdpError("metric: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.d_.size(); ++i) m = std::max(m, std::abs(a.d_[i] - b.d_[i]));
  return m;
}

bool MetricMatrix::is_valid(double tol) const {
  for (std::size_t i = 0; i < n_; ++i) {
    if (std::abs((*this)(i, i)) > tol) return false;
    for (std::size_t j = 0; j < n_; ++j) {
      if ((*this)(i, j) < -tol) return false;
      if (std::abs((*this)(i, j) - (*this)(j, i)) > tol) return false;
    }
  }
  return true;
}

std::vector<double> policy_rewards(const TabularMDP& mdp, const Policy& policy) {
  std::vector<double> r(mdp.num_states, 0.0);
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    for (std::size_t a = 0; a < mdp.num_actions; ++a) r[s] += policy(s, a) * mdp.R(s, a);
  }
  return r;
}

std::vector<double> policy_transitions(const TabularMDP& mdp, const Policy& policy) {
  const auto n = mdp.num_states;
  std::vector<double> P(n * n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      const double w = policy(s, a);
      if (w == 0.0) continue;
      const auto row = mdp.next(s, a);
      for (std::size_t s2 = 0; s2 < n; ++s2) P[s * n + s2] += w * row[s2];
    }
  }
  return P;
}

TabularMDP random_mdp(std::mt19937_64& rng, std::size_t states, std::size_t actions, double discount,
                      std::size_t max_successors) {
  TabularMDP mdp(states, actions, discount);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_state(0, states - 1);
  std::uniform_int_distribution<std::size_t> pick_count(1, std::max<std::size_t>(1, max_successors));
  for (std::size_t s = 0; s < states; ++s) {
    for (std::size_t a = 0; a < actions; ++a) {
      const auto count = pick_count(rng);
      auto row = mdp.next(s, a);
      for (std::size_t k = 0; k < count; ++k) row[pick_state(rng)] += 0.1 + unit(rng);
      double total = 0.0;
      for (auto p : row) total += p;
      for (auto& p : row) p /= total;
      mdp.R(s, a) = unit(rng);
    }
  }
  double total = 0.0;
  for (auto& q : mdp.initial) total += (q = 0.1 + unit(rng));
  for (auto& q : mdp.initial) q /= total;
  return mdp;
}

Policy random_policy(std::mt19937_64& rng, std::size_t states, std::size_t actions) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Policy p(states, actions);
  for (std::size_t s = 0; s < states; ++s) {
    double total = 0.0;
    for (std::size_t a = 0; a < actions; ++a) total += (p(s, a) = 0.05 + unit(rng));
    for (std::size_t a = 0; a < actions; ++a) p(s, a) /= total;
  }
  return p;
}

void write_mdp(std::ostream& os, const TabularMDP& mdp) {
  const auto old_precision = os.precision(17);
  os << "mdp " << mdp.num_states << ' ' << mdp.num_actions << ' ' << mdp.discount << '\n';
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    for (std::size_t a = 0; a < mdp.num_actions; ++a) {
      os << "P " << s << ' ' << a;
      for (auto p : mdp.next(s, a)) os << ' ' << p;
      os << '\n';
    }
  }
  for (std::size_t s = 0; s < mdp.num_states; ++s) {
    os << "R " << s;
    for (std::size_t a = 0; a < mdp.num_actions; ++a) os << ' ' << mdp.R(s, a);
    os << '\n';
  }
  os << "p0";
  for (auto q : mdp.initial) os << ' ' << q;
  os << '\n';
  os.precision(old_precision);
}

TabularMDP read_mdp(std::istream& is) {
  std::string line;
  TabularMDP mdp;
  bool have_header = false, have_p0 = false;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw MdpError("mdp text line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "mdp") {
      std::size_t S = 0, A = 0;
      double gamma = 0.0;
      if (!(ls >> S >> A >> gamma)) fail("bad header");
      mdp = TabularMDP(S, A, gamma);
      have_header = true;
    } else if (!have_header) {
      fail("expected 'mdp' header first");
    } else if (tag == "P") {
      std::size_t s = 0, a = 0;
      if (!(ls >> s >> a) || s >= mdp.num_states || a >= mdp.num_actions) fail("bad P indices");
      for (auto& p : mdp.next(s, a)) {
        if (!(ls >> p)) fail("short P row");
      }
    } else if (tag == "R") {
      std::size_t s = 0;
      if (!(ls >> s) || s >= mdp.num_states) fail("bad R index");
      for (std::size_t a = 0; a < mdp.num_actions; ++a) {
        if (!(ls >> mdp.R(s, a))) fail("short R row");
      }
    } else if (tag == "p0") {
      for (auto& q : mdp.initial) {
        if (!(ls >> q)) fail("short p0 row");
      }
      have_p0 = true;
    } else {
      fail("unknown tag '" + tag + "'");
    }
  }
  if (!have_header || !have_p0) throw MdpError("mdp text: missing header or p0 row");
  mdp.validate();
  return mdp;
}

}  // namespace mfsc::mdp
