#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mfsc/agent/agent.hpp"
#include "mfsc/harness/config.hpp"
#include "mfsc/mdp/tabular.hpp"

namespace mfsc::harness {

/// Rank correlation with average ranks for ties. Throws if fewer than two
/// points or either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

/// Training config with per-step view dropout disabled.
envs::EnvConfig eval_env_config(const envs::EnvConfig& train);

/// Non-noise views whose removal leaves the remaining non-noise views
/// jointly injective over states.
std::vector<std::size_t> redundant_views(const envs::GridWorld& env);

/// Mean undiscounted return of the optimal policy over `starts`.
double oracle_return(const envs::GridWorld& env, const std::vector<std::size_t>& starts);

using ObsTransform = std::function<envs::MultiViewObservation(const envs::MultiViewObservation&)>;
/// Empty for `full`. Noise differs per call but is fixed by `seed`.
ObsTransform mode_transform(const EvalMode& mode, std::uint64_t seed);

/// Greedy evaluation under one mode. episodes == 0 sweeps every start state once.
agent::EvalResult evaluate_mode(const agent::Agent& agent, const envs::EnvConfig& train_env, const EvalMode& mode,
                                std::size_t episodes, std::uint64_t seed);

/// Clean observation of `state` in the model's input format: frames tiled to
/// frame_stack, noise views filled with one fixed noise image.
envs::MultiViewObservation canonical_observation(const envs::GridWorld& env, std::size_t state);

/// Agent policy on canonical observations as a tabular policy.
mdp::Policy extract_policy(const agent::Agent& agent, const envs::GridWorld& env);

struct RepresentationReport {
  double spearman = 0.0;  // over the sampled pairs of non-terminal states
  double spearman_all_states = 0.0;  // every pair, the absorbing goal included
  std::size_t pairs = 0;
  std::size_t states = 0;  // non-terminal states
  std::size_t metric_iterations = 0;
};

/// Spearman correlation between fused-embedding cosine distances and the
/// exact independent-coupling metric (contraction c) under the agent's own
/// policy, over `pairs` pairs of non-terminal states (all pairs when there
/// are fewer). The goal is never a decision state, so its embedding is not
/// trained by the fusion loss; it only enters spearman_all_states.
RepresentationReport representation_quality(const agent::Agent& agent, const envs::GridWorld& env, std::size_t pairs,
                                            double c, std::uint64_t seed);

}  // namespace mfsc::harness
