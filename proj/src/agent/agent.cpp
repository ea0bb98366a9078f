#include "mfsc/agent/agent.hpp"

#include <algorithm>
#include <cmath>

#include "mfsc/tensor/ops.hpp"
#include "mfsc/util/random.hpp"

namespace mfsc::agent {

using namespace mfsc::tensor;
using model::ViewBatch;

void AgentConfig::validate() const {
  model.validate();
  mask.validate(model.view_height, model.view_width);
  weights.validate();
  ppo.validate();
  if (dynamics.members == 0 || dynamics.hidden == 0) throw std::invalid_argument("dynamics: members and hidden must be positive");
  if (!(momentum_rate > 0.0 && momentum_rate <= 1.0)) throw std::invalid_argument("momentum_rate must lie in (0, 1]");
  if (!(reward_alpha > 0.0 && reward_alpha <= 1.0)) throw std::invalid_argument("reward_alpha must lie in (0, 1]");
  if (channels_per_frame == 0 || model.channels % channels_per_frame != 0) {
    throw std::invalid_argument("model.channels must be a multiple of channels_per_frame");
  }
}

Agent::Agent(const AgentConfig& config, std::size_t num_actions, std::uint64_t seed)
    : config_(config),
      num_actions_(num_actions),
      model_(std::make_unique<model::FusionModel<float>>(config.model, seed)),
      ensemble_(config.model.embed_dim, num_actions, config.dynamics, seed),
      ac_(config.model.embed_dim, num_actions, config.ppo.hidden, seed),
      normalizer_(config.reward_alpha) {
  config_.validate();
  if (config_.momentum_target) {
    momentum_ = std::make_unique<model::FusionModel<float>>(config.model, seed);
    momentum_->copy_from(*model_);
  }
  policy_opt_ = std::make_unique<Adam<float>>(policy_params(), config_.ppo.learning_rate);
  repr_opt_ = std::make_unique<Adam<float>>(repr_params(), config_.ppo.repr_learning_rate);
}

std::vector<Tensor<float>> Agent::policy_params() const { return ac_.parameters().tensors(); }

std::vector<Tensor<float>> Agent::repr_params() const {
  auto out = model_->parameters().tensors();
  const auto dyn = ensemble_.parameters().tensors();
  out.insert(out.end(), dyn.begin(), dyn.end());
  return out;
}

Tensor<float> Agent::embed(const ObservationRefs& obs) const {
  NoGradGuard guard;
  return model_->forward(ViewBatch::from(obs)).fused;
}

std::vector<double> Agent::action_probs(const ObservationRefs& obs) const {
  NoGradGuard guard;
  const auto p = softmax(ac_.logits(embed(obs)));
  return {p.data().begin(), p.data().end()};
}

ActionBatch Agent::act(const ObservationRefs& obs, std::mt19937_64& rng, bool greedy) const {
  NoGradGuard guard;
  const auto z = embed(obs);
  const auto logp = log_softmax(ac_.logits(z));
  const auto v = ac_.values(z);
  const auto A = num_actions_;
  ActionBatch out;
  std::vector<double> probs(A);
  for (std::size_t b = 0; b < obs.size(); ++b) {
    for (std::size_t a = 0; a < A; ++a) probs[a] = std::exp(double(logp.at(b * A + a)));
    std::size_t a;
    if (greedy) {
      a = std::size_t(std::max_element(probs.begin(), probs.end()) - probs.begin());
    } else {
      a = sample_categorical(probs, rng);
    }
    out.actions.push_back(a);
    out.log_probs.push_back(double(logp.at(b * A + a)));
    out.values.push_back(double(v.at(b)));
  }
  return out;
}

std::vector<double> Agent::value(const ObservationRefs& obs) const {
  NoGradGuard guard;
  const auto v = ac_.values(embed(obs));
  return {v.data().begin(), v.data().end()};
}

Actor Agent::actor(bool greedy) const {
  Actor a;
  a.act = [this, greedy](const ObservationRefs& obs, const std::vector<std::size_t>&, std::mt19937_64& rng) {
    return act(obs, rng, greedy);
  };
  a.value = [this](const ObservationRefs& obs) { return value(obs); };
  return a;
}

void Agent::set_learning_rate_scale(double scale) {
  if (!(scale >= 0.0)) throw std::invalid_argument("learning rate scale must be nonnegative");
  policy_opt_->set_learning_rate(config_.ppo.learning_rate * scale);
  repr_opt_->set_learning_rate(config_.ppo.repr_learning_rate * scale);
}

UpdateStats Agent::update(const RolloutBuffer& buffer, std::mt19937_64& rng) {
  const auto& ppo = config_.ppo;
  const auto N = buffer.size();
  if (N < 2) throw std::invalid_argument("update: buffer holds fewer than two steps");
  const auto adv = normalized_advantages(buffer);
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;
  auto all_params = policy_params();
  const auto repr = repr_params();
  all_params.insert(all_params.end(), repr.begin(), repr.end());

  UpdateStats stats;
  for (std::size_t epoch = 0; epoch < ppo.epochs && !stats.early_stopped; ++epoch) {
    for (std::size_t i = N - 1; i > 0; --i) std::swap(order[i], order[util::uniform_index(rng, i + 1)]);
    for (std::size_t start = 0; start + 1 < N; start += ppo.minibatch_size) {
      const auto end = std::min(N, start + ppo.minibatch_size);
      if (end - start < 2) break;
      const std::vector<std::size_t> idx(order.begin() + long(start), order.begin() + long(end));
      const auto B = idx.size();

      ObservationRefs obs, next;
      losses::MfscBatch<float> batch;
      std::vector<float> old_lp, mb_adv, returns;
      for (auto i : idx) {
        const auto& s = buffer.steps[i];
        obs.push_back(&s.obs);
        next.push_back(&s.next_obs);
        batch.actions.push_back(s.action);
        batch.rewards.push_back(float(s.norm_reward));
        old_lp.push_back(float(s.log_prob));
        mb_adv.push_back(float(adv[i]));
        returns.push_back(float(s.ret));
      }
      batch.obs = ViewBatch::from(obs);
      if (config_.switches.reconstruction) {
        batch.masked_obs = batch.obs;
        model::cube_mask(batch.masked_obs, config_.mask, rng, config_.channels_per_frame);
      }
      if (config_.switches.dynamics) batch.next_obs = ViewBatch::from(next);

      const auto parts =
          losses::mfsc_loss<float>(*model_, momentum_.get(), ensemble_, batch, config_.weights, rng, config_.switches);
      const auto z_pol = ppo.joint_policy_gradient ? parts.z : stop_gradient(parts.z);
      const auto logp_all = log_softmax(ac_.logits(z_pol));
      const auto logp = gather_last(logp_all, batch.actions);
      const auto surrogate = clipped_surrogate<float>(logp, old_lp, mb_adv, ppo.clip);
      const auto v_err = sub(ac_.values(parts.z), Tensor<float>({B}, returns));
      const auto value_loss = mean(mul(v_err, v_err));
      const auto entropy = scale(mean(sum(mul(exp(logp_all), logp_all), 1)), -1.0f);

      auto loss = add(surrogate, scale(value_loss, float(ppo.value_coef)));
      if (ppo.entropy_coef != 0.0) loss = sub(loss, scale(entropy, float(ppo.entropy_coef)));
      loss = add(loss, parts.total);
      if (config_.switches.dynamics) loss = add(loss, parts.dynamics);

      const std::vector<double> values{surrogate.item(), value_loss.item(), parts.fusion.item(),
                                       parts.reconstruction.item(), parts.dynamics.item()};
      if (!std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); }) ||
          !std::isfinite(loss.item())) {
        throw UpdateAborted("update: non-finite loss in epoch " + std::to_string(epoch), idx, values);
      }

      double kl = 0.0, clipped = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double log_ratio = double(logp.at(b)) - double(old_lp[b]);
        const double ratio = std::exp(log_ratio);
        kl += (ratio - 1.0) - log_ratio;
        if (std::abs(ratio - 1.0) > ppo.clip) clipped += 1.0;
      }
      kl /= double(B);

      policy_opt_->zero_grad();
      repr_opt_->zero_grad();
      backward(loss);
      const double norm = clip_grad_norm(all_params, ppo.grad_clip);
      policy_opt_->step();
      repr_opt_->step();
      if (momentum_) momentum_->ema_update_from(*model_, float(config_.momentum_rate));

      ++stats.minibatches;
      stats.approx_kl += kl;
      stats.max_kl = std::max(stats.max_kl, kl);
      stats.policy_loss += values[0];
      stats.value_loss += values[1];
      stats.l_fus += values[2];
      stats.l_rec += values[3];
      stats.l_dyn += values[4];
      stats.entropy += entropy.item();
      stats.grad_norm += norm;
      stats.clip_fraction += clipped / double(B);
      if (kl > ppo.target_kl) {
        stats.early_stopped = true;
        break;
      }
    }
    if (!stats.early_stopped) ++stats.epochs_completed;
  }
  if (stats.minibatches > 0) {
    const double m = double(stats.minibatches);
    for (double* f : {&stats.approx_kl, &stats.policy_loss, &stats.value_loss, &stats.l_fus, &stats.l_rec,
                      &stats.l_dyn, &stats.entropy, &stats.grad_norm, &stats.clip_fraction}) {
      *f /= m;
    }
  }
  return stats;
}

namespace {

void append_adam(std::vector<CheckpointEntry>& out, const std::string& prefix, const AdamState& s) {
  for (std::size_t i = 0; i < s.m.size(); ++i) {
    out.push_back({prefix + ".m." + std::to_string(i), {s.m[i].size()}, s.m[i], 8});
    out.push_back({prefix + ".v." + std::to_string(i), {s.v[i].size()}, s.v[i], 8});
  }
  out.push_back({prefix + ".step", {1}, {double(s.step)}, 8});
}

AdamState read_adam(const std::vector<CheckpointEntry>& entries, const std::string& prefix, std::size_t count) {
  AdamState s;
  s.step = std::uint64_t(find_entry(entries, prefix + ".step").values.at(0));
  for (std::size_t i = 0; i < count; ++i) {
    s.m.push_back(find_entry(entries, prefix + ".m." + std::to_string(i)).values);
    s.v.push_back(find_entry(entries, prefix + ".v." + std::to_string(i)).values);
  }
  return s;
}

}  // namespace

std::vector<CheckpointEntry> Agent::state() const {
  std::vector<CheckpointEntry> out;
  append_entries(out, model_->parameters(), "model.");
  if (momentum_) append_entries(out, momentum_->parameters(), "momentum.");
  append_entries(out, ensemble_.parameters(), "dynamics.");
  append_entries(out, ac_.parameters(), "actor_critic.");
  append_adam(out, "optim.policy", policy_opt_->state());
  append_adam(out, "optim.repr", repr_opt_->state());
  out.push_back({"normalizer", {3}, {normalizer_.mean(), normalizer_.variance(), double(normalizer_.count())}, 8});
  return out;
}

void Agent::load_state(const std::vector<CheckpointEntry>& entries) {
  load_entries(model_->parameters(), entries, "model.");
  if (momentum_) load_entries(momentum_->parameters(), entries, "momentum.");
  load_entries(ensemble_.parameters(), entries, "dynamics.");
  load_entries(ac_.parameters(), entries, "actor_critic.");
  policy_opt_->load_state(read_adam(entries, "optim.policy", policy_opt_->params().size()));
  repr_opt_->load_state(read_adam(entries, "optim.repr", repr_opt_->params().size()));
  const auto& n = find_entry(entries, "normalizer").values;
  normalizer_.restore(n.at(0), n.at(1), std::uint64_t(n.at(2)));
}

EvalResult evaluate(const Agent& agent, const envs::EnvConfig& env_config, std::size_t episodes, std::uint64_t seed,
                    const std::function<envs::MultiViewObservation(const envs::MultiViewObservation&)>& transform,
                    bool greedy, const std::vector<std::size_t>& starts) {
  if (!starts.empty()) episodes = starts.size();
  if (episodes == 0) throw std::invalid_argument("evaluate: no episodes");
  envs::GridWorld env(env_config);
  env.seed_episodes(util::derive_seed(seed, 500));
  std::mt19937_64 rng(util::derive_seed(seed, 501));
  EvalResult res;
  double successes = 0, length = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    auto obs = starts.empty() ? env.reset() : env.reset(starts[e]);
    double ret = 0;
    bool goal = false;
    while (!env.episode_over()) {
      const auto seen = transform ? transform(obs) : obs;
      const auto a = agent.act({&seen}, rng, greedy).actions.at(0);
      auto tr = env.step(a);
      ret += tr.reward;
      goal = tr.done;
      obs = std::move(tr.next_obs);
    }
    res.returns.push_back(ret);
    successes += goal ? 1.0 : 0.0;
    length += double(env.elapsed());
  }
  for (double r : res.returns) res.mean_return += r;
  res.mean_return /= double(episodes);
  res.success_rate = successes / double(episodes);
  res.mean_length = length / double(episodes);
  return res;
}

}  // namespace mfsc::agent
