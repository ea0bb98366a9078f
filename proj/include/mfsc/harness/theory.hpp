#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfsc/tensor/grad_check.hpp"

namespace mfsc::harness {

struct FixedPointSweepOptions {
  std::size_t count = 50;
  std::size_t max_states = 12, max_actions = 4;
  double c = 0.9;
  double discount = 0.9;
  double tolerance = 1e-10;  // stop when ||F(g) - g||_inf falls below this
  double residual_limit = 1e-9;
  double init_agreement = 1e-8;
  std::size_t max_iterations = 2000;
  std::uint64_t seed = 1;
};

/// Random MDPs under random policies: both operators must contract at rate
/// c, converge, and reach the same metric from a zero and a random start.
/// Failing MDPs are serialized into the report.
nlohmann::json fixed_point_sweep(const FixedPointSweepOptions& opts);

struct BoundSweepOptions {
  std::size_t count = 100;
  std::size_t max_states = 12, max_actions = 4;
  double discount = 0.9;
  double c = 0.95;
  double slack = 1e-6;
  std::uint64_t seed = 2;
};

/// Random MDPs and random radii: the optimal-value gap between each MDP and
/// its aggregated latent MDP must stay under 2 eps / ((1 - gamma)(1 - c)).
/// Throws std::invalid_argument when c < discount.
nlohmann::json value_bound_sweep(const BoundSweepOptions& opts);

/// Finite-difference checks of every primitive, the attention block, the
/// composed model and the three representation losses, in double precision.
struct GradSuiteResult {
  std::vector<tensor::GradCheckEntry> entries;  // one per check, worst point
  double max_rel_error = 0.0;
  std::string worst;
  bool non_finite = false;

  bool passed(double threshold) const { return !non_finite && max_rel_error < threshold; }
  nlohmann::json to_json() const;
};

GradSuiteResult grad_check_suite(std::uint64_t seed = 10, std::size_t points = 3);

}  // namespace mfsc::harness
