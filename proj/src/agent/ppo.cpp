#include "mfsc/agent/ppo.hpp"

#include <cmath>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "mfsc/tensor/ops.hpp"
#include "mfsc/util/random.hpp"

namespace mfsc::agent {

using namespace mfsc::tensor;

void PPOConfig::validate() const {
  if (!(discount > 0.0 && discount < 1.0)) throw std::invalid_argument("ppo.discount must lie in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("ppo.gae_lambda must lie in [0, 1]");
  if (!(clip > 0.0)) throw std::invalid_argument("ppo.clip must be positive");
  if (epochs == 0) throw std::invalid_argument("ppo.epochs must be positive");
  if (!(learning_rate > 0.0) || !(repr_learning_rate >= 0.0)) throw std::invalid_argument("ppo: learning rates must be positive");
  if (!(grad_clip > 0.0)) throw std::invalid_argument("ppo.grad_clip must be positive");
  if (!(target_kl > 0.0)) throw std::invalid_argument("ppo.target_kl must be positive");
  if (rollout_length == 0 || workers == 0) throw std::invalid_argument("ppo: rollout_length and workers must be positive");
  if (minibatch_size < 2) throw std::invalid_argument("ppo.minibatch_size must be at least 2");
  if (hidden == 0) throw std::invalid_argument("ppo.hidden must be positive");
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda) {
  for (std::size_t w = 0; w < buffer.workers; ++w) {
    double next_adv = 0.0;
    for (std::size_t i = buffer.length; i-- > 0;) {
      auto& s = buffer.at(w, i);
      const bool end = s.done || s.truncated;
      const double bootstrap = s.done ? 0.0 : s.next_value;
      const double delta = s.reward + gamma * bootstrap - s.value;
      s.advantage = delta + (end ? 0.0 : gamma * lambda * next_adv);
      s.ret = s.advantage + s.value;
      if (!std::isfinite(s.advantage)) throw std::runtime_error("compute_gae: non-finite advantage");
      next_adv = s.advantage;
    }
  }
}

std::vector<double> normalized_advantages(const RolloutBuffer& buffer) {
  const auto n = buffer.size();
  std::vector<double> out(n);
  if (n == 0) return out;
  double mean = 0;
  for (const auto& s : buffer.steps) mean += s.advantage;
  mean /= double(n);
  double var = 0;
  for (const auto& s : buffer.steps) var += (s.advantage - mean) * (s.advantage - mean);
  const double sd = std::sqrt(var / double(n));
  for (std::size_t i = 0; i < n; ++i) out[i] = (buffer.steps[i].advantage - mean) / (sd + 1e-8);
  return out;
}

template <typename T>
Tensor<T> clipped_surrogate(const Tensor<T>& log_prob, std::span<const T> old_log_prob, std::span<const T> advantages,
                            double clip) {
  const auto n = log_prob.numel();
  if (log_prob.rank() != 1 || old_log_prob.size() != n || advantages.size() != n) {
    throw std::invalid_argument("clipped_surrogate: expected matching [B] inputs");
  }
  const Tensor<T> old({n}, std::vector<T>(old_log_prob.begin(), old_log_prob.end()));
  const Tensor<T> adv({n}, std::vector<T>(advantages.begin(), advantages.end()));
  const auto ratio = exp(sub(log_prob, old));
  const auto unclipped = mul(ratio, adv);
  if (std::isinf(clip)) return scale(mean(unclipped), T(-1));
  const auto clipped = mul(clamp(ratio, T(1 - clip), T(1 + clip)), adv);
  return scale(mean(minimum(unclipped, clipped)), T(-1));
}

template <typename T>
ActorCritic<T>::ActorCritic(std::size_t embed_dim, std::size_t num_actions, std::size_t hidden, std::uint64_t seed)
    : num_actions_(num_actions) {
  std::mt19937_64 rng(util::derive_seed(seed, 300));
  policy_ = model::Mlp<T>(params_, "policy", {embed_dim, hidden, hidden, num_actions}, model::Activation::relu, rng);
  value_ = model::Mlp<T>(params_, "value", {embed_dim, hidden, hidden, 1}, model::Activation::relu, rng);
  // Near-uniform initial policy.
  auto w = policy_.layers.back().weight.mutable_data();
  for (auto& v : w) v *= T(0.01);
}

template <typename T>
Tensor<T> ActorCritic<T>::values(const Tensor<T>& z) const {
  const auto v = value_(z);
  return reshape(v, {v.dim(0)});
}

std::size_t sample_categorical(std::span<const double> probs, std::mt19937_64& rng) {
  const double u = util::uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  // Round-off left u above the running sum; take the last action with mass.
  for (std::size_t i = probs.size(); i-- > 0;) {
    if (probs[i] > 0.0) return i;
  }
  throw std::invalid_argument("sample_categorical: no probability mass");
}

WorkerPool::WorkerPool(const envs::EnvConfig& config, std::size_t workers, std::uint64_t seed)
    : config_(config), seed_(seed) {
  if (workers == 0) throw std::invalid_argument("WorkerPool: no workers");
  for (std::size_t w = 0; w < workers; ++w) {
    envs_.emplace_back(config_);
    envs_.back().seed_episodes(util::derive_seed(seed_, 400 + w));
    current_.push_back(envs_.back().reset());
    state_.push_back(envs_.back().current_state());
  }
  running_return_.assign(workers, 0.0);
  running_length_.assign(workers, 0);
  start_ = state_;
}

void WorkerPool::restart(std::size_t w, const std::string& why) {
  ++restarts_;
  const auto episode_seed = util::derive_seed(seed_, 10000 + restarts_);
  std::clog << "worker " << w << ": " << why << "; restarting with episode seed " << episode_seed << "\n";
  envs_[w] = envs::GridWorld(config_);
  envs_[w].seed_episodes(episode_seed);
  current_[w] = envs_[w].reset();
  state_[w] = envs_[w].current_state();
  start_[w] = state_[w];
  running_return_[w] = 0.0;
  running_length_[w] = 0;
}

envs::Transition WorkerPool::step(std::size_t w, std::size_t action) {
  envs::Transition tr;
  try {
    tr = envs_.at(w).step(action);
  } catch (const envs::EnvError& e) {
    restart(w, e.what());
    tr = envs_[w].step(action);
  }
  ++env_steps_;
  tr.obs = current_[w];
  running_return_[w] += tr.reward;
  ++running_length_[w];
  if (tr.done || tr.truncated) {
    finished_.push_back({w, start_[w], running_return_[w], running_length_[w], tr.done});
    running_return_[w] = 0.0;
    running_length_[w] = 0;
    current_[w] = envs_[w].reset();
    start_[w] = envs_[w].current_state();
  } else {
    current_[w] = tr.next_obs;
  }
  state_[w] = envs_[w].current_state();
  return tr;
}

PoolSnapshot WorkerPool::snapshot() const {
  PoolSnapshot snap;
  for (const auto& e : envs_) snap.envs.push_back(e.snapshot());
  snap.current = current_;
  snap.state = state_;
  snap.start = start_;
  snap.running_length = running_length_;
  snap.running_return = running_return_;
  snap.restarts = restarts_;
  snap.env_steps = env_steps_;
  return snap;
}

void WorkerPool::restore(const PoolSnapshot& snap) {
  if (snap.envs.size() != envs_.size() || snap.current.size() != envs_.size() || snap.state.size() != envs_.size() ||
      snap.start.size() != envs_.size() || snap.running_length.size() != envs_.size() ||
      snap.running_return.size() != envs_.size()) {
    throw std::invalid_argument("WorkerPool::restore: worker count mismatch");
  }
  for (std::size_t w = 0; w < envs_.size(); ++w) envs_[w].restore(snap.envs[w]);
  current_ = snap.current;
  state_ = snap.state;
  start_ = snap.start;
  running_length_ = snap.running_length;
  running_return_ = snap.running_return;
  restarts_ = snap.restarts;
  env_steps_ = snap.env_steps;
  finished_.clear();
}

std::vector<EpisodeRecord> WorkerPool::take_finished() {
  std::vector<EpisodeRecord> out;
  out.swap(finished_);
  return out;
}

RolloutBuffer collect_rollout(WorkerPool& pool, const Actor& actor, std::size_t length, std::mt19937_64& rng,
                              losses::RewardNormalizer* normalizer) {
  const auto W = pool.size();
  RolloutBuffer buf;
  buf.workers = W;
  buf.length = length;
  buf.steps.resize(W * length);
  for (std::size_t t = 0; t < length; ++t) {
    ObservationRefs obs;
    std::vector<std::size_t> states;
    for (std::size_t w = 0; w < W; ++w) {
      obs.push_back(&pool.current(w));
      states.push_back(pool.state(w));
    }
    const auto choice = actor.act(obs, states, rng);
    if (choice.actions.size() != W || choice.log_probs.size() != W || choice.values.size() != W) {
      throw std::runtime_error("collect_rollout: actor returned a batch of the wrong size");
    }
    for (std::size_t w = 0; w < W; ++w) {
      auto& s = buf.at(w, t);
      s.worker = w;
      s.state = states[w];
      s.action = choice.actions[w];
      s.log_prob = choice.log_probs[w];
      s.value = choice.values[w];
      auto tr = pool.step(w, s.action);
      s.obs = std::move(tr.obs);
      s.next_obs = std::move(tr.next_obs);
      s.reward = tr.reward;
      s.norm_reward = normalizer ? normalizer->normalize(tr.reward) : tr.reward;
      s.done = tr.done;
      s.truncated = tr.truncated;
      s.next_state = tr.next_ground_truth_state;
    }
  }
  // next_value: the following step's estimate while an episode continues,
  // otherwise a fresh estimate of next_obs (truncation and rollout end).
  ObservationRefs need;
  std::vector<RolloutStep*> targets;
  for (std::size_t w = 0; w < W; ++w) {
    for (std::size_t t = 0; t < length; ++t) {
      auto& s = buf.at(w, t);
      if (s.done) continue;
      if (!s.truncated && t + 1 < length) {
        s.next_value = buf.at(w, t + 1).value;
      } else {
        need.push_back(&s.next_obs);
        targets.push_back(&s);
      }
    }
  }
  if (!need.empty()) {
    const auto v = actor.value(need);
    if (v.size() != need.size()) throw std::runtime_error("collect_rollout: value batch of the wrong size");
    for (std::size_t i = 0; i < v.size(); ++i) targets[i]->next_value = v[i];
  }
  return buf;
}

template Tensor<float> clipped_surrogate(const Tensor<float>&, std::span<const float>, std::span<const float>, double);
template Tensor<double> clipped_surrogate(const Tensor<double>&, std::span<const double>, std::span<const double>,
                                          double);
template class ActorCritic<float>;
template class ActorCritic<double>;

}  // namespace mfsc::agent
