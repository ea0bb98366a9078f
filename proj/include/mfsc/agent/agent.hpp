#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsc/agent/ppo.hpp"
#include "mfsc/losses/losses.hpp"
#include "mfsc/model/fusion_model.hpp"
#include "mfsc/tensor/checkpoint.hpp"
#include "mfsc/tensor/optim.hpp"

namespace mfsc::agent {

struct AgentConfig {
  model::ModelConfig model;
  model::MaskConfig mask;
  losses::DynamicsConfig dynamics;
  losses::LossWeights weights;
  losses::LossSwitches switches;
  PPOConfig ppo;
  bool momentum_target = false;  // EMA copy of the encoder supplies the latent targets
  double momentum_rate = 0.05;
  double reward_alpha = 0.01;
  std::size_t channels_per_frame = 3;

  void validate() const;
};

struct UpdateStats {
  std::size_t epochs_completed = 0;
  std::size_t minibatches = 0;
  bool early_stopped = false;
  double approx_kl = 0.0;  // mean over the minibatches run
  double max_kl = 0.0;
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0;
  double l_fus = 0.0, l_rec = 0.0, l_dyn = 0.0;
  double grad_norm = 0.0, clip_fraction = 0.0;
};

/// Raised when a minibatch produces a non-finite loss. The update stops;
/// parameters keep the values from the last finite step.
class UpdateAborted : public std::runtime_error {
 public:
  UpdateAborted(const std::string& what, std::vector<std::size_t> indices, std::vector<double> losses)
      : std::runtime_error(what), minibatch(std::move(indices)), loss_values(std::move(losses)) {}
  std::vector<std::size_t> minibatch;  // buffer indices
  std::vector<double> loss_values;     // policy, value, fus, rec, dyn
};

class Agent {
 public:
  Agent(const AgentConfig& config, std::size_t num_actions, std::uint64_t seed);

  const AgentConfig& config() const { return config_; }

  /// Samples (or takes the argmax when greedy) for a batch of observations.
  ActionBatch act(const ObservationRefs& obs, std::mt19937_64& rng, bool greedy = false) const;
  std::vector<double> value(const ObservationRefs& obs) const;
  /// Row-major [B, A] action probabilities.
  std::vector<double> action_probs(const ObservationRefs& obs) const;
  /// Fused embeddings [B, d], no graph.
  tensor::Tensor<float> embed(const ObservationRefs& obs) const;
  Actor actor(bool greedy = false) const;

  /// Multiplies both configured learning rates by `scale` for later updates.
  void set_learning_rate_scale(double scale);

  /// Advantages must be computed. Throws UpdateAborted on a non-finite loss.
  UpdateStats update(const RolloutBuffer& buffer, std::mt19937_64& rng);

  losses::RewardNormalizer& normalizer() { return normalizer_; }
  const model::FusionModel<float>& model() const { return *model_; }
  model::FusionModel<float>& model() { return *model_; }
  const ActorCritic<float>& actor_critic() const { return ac_; }
  const losses::EnsembleDynamics<float>& dynamics() const { return ensemble_; }

  /// Every parameter, optimizer moment and normalizer statistic.
  std::vector<tensor::CheckpointEntry> state() const;
  void load_state(const std::vector<tensor::CheckpointEntry>& entries);

 private:
  std::vector<tensor::Tensor<float>> policy_params() const;
  std::vector<tensor::Tensor<float>> repr_params() const;

  AgentConfig config_;
  std::size_t num_actions_;
  std::unique_ptr<model::FusionModel<float>> model_, momentum_;
  losses::EnsembleDynamics<float> ensemble_;
  ActorCritic<float> ac_;
  std::unique_ptr<tensor::Adam<float>> policy_opt_, repr_opt_;
  losses::RewardNormalizer normalizer_;
};

struct EvalResult {
  double mean_return = 0.0;
  double success_rate = 0.0;
  double mean_length = 0.0;
  std::vector<double> returns;
};

/// Greedy rollouts on a separate environment copy: one episode per entry of
/// `starts`, or `episodes` episodes from random starts when `starts` is
/// empty. `transform` may corrupt each observation first.
EvalResult evaluate(const Agent& agent, const envs::EnvConfig& env_config, std::size_t episodes, std::uint64_t seed,
                    const std::function<envs::MultiViewObservation(const envs::MultiViewObservation&)>& transform = {},
                    bool greedy = true, const std::vector<std::size_t>& starts = {});

}  // namespace mfsc::agent
