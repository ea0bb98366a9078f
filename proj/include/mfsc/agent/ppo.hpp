#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mfsc/envs/gridworld.hpp"
#include "mfsc/losses/losses.hpp"
#include "mfsc/model/layers.hpp"

namespace mfsc::agent {

using tensor::Tensor;

/// linear: both rates fall to zero at the run's total_steps.
enum class LrSchedule { constant, linear };

struct PPOConfig {
  double discount = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  std::size_t epochs = 8;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  double grad_clip = 0.5;
  double target_kl = 0.12;
  double learning_rate = 2e-4;
  double repr_learning_rate = 2e-4;
  std::size_t rollout_length = 128;  // steps per worker
  std::size_t minibatch_size = 64;
  std::size_t workers = 4;
  std::size_t hidden = 64;            // actor and critic MLP width
  bool joint_policy_gradient = false;  // let the surrogate reach the encoder
  LrSchedule lr_schedule = LrSchedule::constant;

  void validate() const;
};

struct RolloutStep {
  envs::MultiViewObservation obs, next_obs;
  std::size_t action = 0;
  double reward = 0.0;       // raw, used by PPO and reporting
  double norm_reward = 0.0;  // normalized, used by the representation losses
  double log_prob = 0.0, value = 0.0, next_value = 0.0;
  bool done = false, truncated = false;
  std::size_t worker = 0, state = 0, next_state = 0;
  double advantage = 0.0, ret = 0.0;
};

/// Steps ordered (worker, step): index = worker * length + t.
struct RolloutBuffer {
  std::size_t workers = 0, length = 0;
  std::vector<RolloutStep> steps;

  std::size_t size() const { return steps.size(); }
  RolloutStep& at(std::size_t worker, std::size_t t) { return steps.at(worker * length + t); }
  const RolloutStep& at(std::size_t worker, std::size_t t) const { return steps.at(worker * length + t); }
};

/// GAE per worker sequence. Bootstraps from next_value unless the step
/// reached the goal; the recursion restarts at every episode end.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

/// Advantages shifted and scaled to mean 0, std 1 over the buffer.
std::vector<double> normalized_advantages(const RolloutBuffer& buffer);

/// -mean(min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)), ratio =
/// exp(log_prob - old_log_prob). Pass clip = infinity for the unclipped
/// objective.
template <typename T>
Tensor<T> clipped_surrogate(const Tensor<T>& log_prob, std::span<const T> old_log_prob, std::span<const T> advantages,
                            double clip);

template <typename T>
class ActorCritic {
 public:
  ActorCritic(std::size_t embed_dim, std::size_t num_actions, std::size_t hidden, std::uint64_t seed);

  Tensor<T> logits(const Tensor<T>& z) const { return policy_(z); }
  /// [B, d] -> [B]
  Tensor<T> values(const Tensor<T>& z) const;
  std::size_t num_actions() const { return num_actions_; }

  tensor::ParameterStore<T>& parameters() { return params_; }
  const tensor::ParameterStore<T>& parameters() const { return params_; }

 private:
  std::size_t num_actions_;
  tensor::ParameterStore<T> params_;
  model::Mlp<T> policy_, value_;
};

/// Draw from a probability vector with one uniform variate.
std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64& rng);

struct ActionBatch {
  std::vector<std::size_t> actions;
  std::vector<double> log_probs, values;
};

using ObservationRefs = std::vector<const envs::MultiViewObservation*>;

/// What collect_rollout needs from a policy. `states` carries ground truth
/// for scripted policies; learned actors ignore it.
struct Actor {
  std::function<ActionBatch(const ObservationRefs& obs, const std::vector<std::size_t>& states, std::mt19937_64& rng)>
      act;
  std::function<std::vector<double>(const ObservationRefs& obs)> value;
};

struct EpisodeRecord {
  std::size_t worker = 0;
  std::size_t start_state = 0;
  double raw_return = 0.0;
  std::size_t length = 0;
  bool reached_goal = false;
};

struct PoolSnapshot {
  std::vector<envs::EpisodeSnapshot> envs;
  std::vector<envs::MultiViewObservation> current;
  std::vector<std::size_t> state, start, running_length;
  std::vector<double> running_return;
  std::size_t restarts = 0;
  std::uint64_t env_steps = 0;
};

/// Environments sharing one layout, each with its own episode stream.
class WorkerPool {
 public:
  WorkerPool(const envs::EnvConfig& config, std::size_t workers, std::uint64_t seed);

  std::size_t size() const { return envs_.size(); }
  envs::GridWorld& env(std::size_t w) { return envs_.at(w); }
  const envs::GridWorld& env(std::size_t w) const { return envs_.at(w); }
  const envs::MultiViewObservation& current(std::size_t w) const { return current_.at(w); }
  std::size_t state(std::size_t w) const { return state_.at(w); }

  /// Steps worker w. A throwing environment is rebuilt, reseeded and reset;
  /// the failed step is retried once on the fresh episode.
  envs::Transition step(std::size_t w, std::size_t action);
  std::vector<EpisodeRecord> take_finished();
  std::size_t restarts() const { return restarts_; }
  std::uint64_t env_steps() const { return env_steps_; }

  /// Episode state of every worker. Finished-episode records are not part
  /// of it; take them first.
  PoolSnapshot snapshot() const;
  void restore(const PoolSnapshot& snap);

 private:
  void restart(std::size_t w, const std::string& why);

  envs::EnvConfig config_;
  std::uint64_t seed_;
  std::vector<envs::GridWorld> envs_;
  std::vector<envs::MultiViewObservation> current_;
  std::vector<std::size_t> state_;
  std::vector<double> running_return_;
  std::vector<std::size_t> running_length_, start_;
  std::vector<EpisodeRecord> finished_;
  std::size_t restarts_ = 0;
  std::uint64_t env_steps_ = 0;
};

/// `length` steps on every worker with a fixed actor. Rewards pass through
/// `normalizer` when given.
RolloutBuffer collect_rollout(WorkerPool& pool, const Actor& actor, std::size_t length, std::mt19937_64& rng,
                              losses::RewardNormalizer* normalizer = nullptr);

extern template class ActorCritic<float>;
extern template class ActorCritic<double>;

}  // namespace mfsc::agent
