#include "mfsc/mdp/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mfsc::mdp {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMassEps = 1e-14;
}  // namespace

TransportPlan solve_transport(std::span<const double> supply, std::span<const double> demand,
                              std::span<const double> cost) {
  const auto n = supply.size();
  const auto m = demand.size();
  if (cost.size() != n * m) throw std::invalid_argument("transport: cost table has wrong size");
  double total_s = 0.0, total_d = 0.0;
  for (auto v : supply) total_s += v;
  for (auto v : demand) total_d += v;
  if (std::abs(total_s - total_d) > 1e-9 * std::max(1.0, total_s)) {
    throw std::invalid_argument("transport: marginals carry different mass");
  }
  for (auto c : cost) {
    if (!(c >= 0.0)) throw std::invalid_argument("transport: costs must be nonnegative");
  }

  TransportPlan plan;
  plan.flow.assign(n * m, 0.0);
  std::vector<double> rem_s(supply.begin(), supply.end());
  std::vector<double> rem_d(demand.begin(), demand.end());

  // Nodes: sources [0, n), sinks [n, n + m), S = n + m, T = n + m + 1.
  const auto V = n + m + 2;
  const auto S = n + m;
  const auto T = n + m + 1;
  std::vector<double> pot(V, 0.0), dist(V);
  std::vector<std::size_t> prev(V);
  std::vector<char> done(V);

  auto arc_cost = [&](std::size_t u, std::size_t v) -> double {
    // Residual arc cost, or +inf when the arc has no capacity.
    if (u == S) return (v < n && rem_s[v] > kMassEps) ? 0.0 : kInf;
    if (u < n) {
      if (v >= n && v < n + m) return cost[u * m + (v - n)];
      return kInf;
    }
    if (u < n + m) {
      const auto j = u - n;
      if (v == T) return rem_d[j] > kMassEps ? 0.0 : kInf;
      if (v < n && plan.flow[v * m + j] > 0.0) return -cost[v * m + j];
      return kInf;
    }
    return kInf;
  };

  for (std::size_t guard = 0; guard < 4 * (n + 1) * (m + 1) + 16; ++guard) {
    bool supply_left = false, demand_left = false;
    for (auto v : rem_s) supply_left = supply_left || v > kMassEps;
    for (auto v : rem_d) demand_left = demand_left || v > kMassEps;
    if (!supply_left || !demand_left) break;

    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(done.begin(), done.end(), 0);
    dist[S] = 0.0;
    for (;;) {
      std::size_t u = V;
      for (std::size_t k = 0; k < V; ++k) {
        if (!done[k] && dist[k] < kInf && (u == V || dist[k] < dist[u])) u = k;
      }
      if (u == V) break;
      done[u] = 1;
      if (u == T) continue;
      for (std::size_t v = 0; v < V; ++v) {
        if (done[v] || v == S) continue;
        const double c = arc_cost(u, v);
        if (c == kInf) continue;
        const double nd = dist[u] + std::max(0.0, c + pot[u] - pot[v]);
        if (nd < dist[v]) {
          dist[v] = nd;
          prev[v] = u;
        }
      }
    }
    if (dist[T] == kInf) break;
    for (std::size_t k = 0; k < V; ++k) pot[k] += std::min(dist[k], dist[T]);

    // Bottleneck along S -> i -> j (-> i' -> j' ...) -> T.
    double amount = kInf;
    for (std::size_t v = T; v != S; v = prev[v]) {
      const auto u = prev[v];
      if (u == S) {
        amount = std::min(amount, rem_s[v]);
      } else if (v == T) {
        amount = std::min(amount, rem_d[u - n]);
      } else if (u >= n) {
        amount = std::min(amount, plan.flow[v * m + (u - n)]);
      }
    }
    for (std::size_t v = T; v != S; v = prev[v]) {
      const auto u = prev[v];
      if (u == S) {
        rem_s[v] -= amount;
      } else if (v == T) {
        rem_d[u - n] -= amount;
      } else if (u < n) {
        plan.flow[u * m + (v - n)] += amount;
      } else {
        plan.flow[v * m + (u - n)] -= amount;
      }
    }
  }

  for (std::size_t k = 0; k < n * m; ++k) plan.cost += plan.flow[k] * cost[k];
  return plan;
}

double wasserstein(std::span<const double> p, std::span<const double> q, std::span<const double> g,
                   std::size_t n) {
  std::vector<std::size_t> sp, sq;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) sp.push_back(i);
    if (q[i] > 0.0) sq.push_back(i);
  }
  if (sp.size() == 1 || sq.size() == 1) {
    // A point mass on either side admits only the product coupling.
    double w = 0.0;
    for (auto i : sp) {
      for (auto j : sq) w += p[i] * q[j] * g[i * n + j];
    }
    return w;
  }
  std::vector<double> a, b, c(sp.size() * sq.size());
  for (auto i : sp) a.push_back(p[i]);
  for (auto j : sq) b.push_back(q[j]);
  for (std::size_t x = 0; x < sp.size(); ++x) {
    for (std::size_t y = 0; y < sq.size(); ++y) c[x * sq.size() + y] = g[sp[x] * n + sq[y]];
  }
  return solve_transport(a, b, c).cost;
}

}  // namespace mfsc::mdp
