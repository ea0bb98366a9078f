#pragma once

#include <span>
#include <vector>

namespace mfsc::mdp {

struct TransportPlan {
  double cost = 0.0;
  std::vector<double> flow;  // [supply index][demand index], row-major
};

/// Exact optimal transport between two discrete distributions with a dense
/// nonnegative cost table (row-major, supply.size() x demand.size()).
/// Solved as a min-cost flow by successive shortest paths with Johnson
/// potentials; both marginals must carry the same total mass.
TransportPlan solve_transport(std::span<const double> supply, std::span<const double> demand,
                              std::span<const double> cost);

/// Wasserstein distance between two distributions over the same n points
/// under ground cost g ([n][n]). Zero-mass points are dropped first.
double wasserstein(std::span<const double> p, std::span<const double> q, std::span<const double> g,
                   std::size_t n);

}  // namespace mfsc::mdp
