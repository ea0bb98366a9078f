#include "mfsc/losses/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include "mfsc/util/random.hpp"

namespace mfsc::losses {

using namespace mfsc::tensor;

LossWeights LossWeights::from_gamma(double gamma, double lambda) {
  LossWeights w;
  w.gamma = gamma;
  w.c_r = 1.0 - gamma;
  w.c_t = gamma;
  w.lambda = lambda;
  w.validate();
  return w;
}

void LossWeights::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("loss weights: gamma must lie in (0, 1)");
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss weights: lambda must be nonnegative");
  if (c_r < 0.0 || c_t < 0.0 || std::abs(c_r + c_t - 1.0) > 1e-9) {
    throw std::invalid_argument("loss weights: c_r and c_t must be nonnegative and sum to 1");
  }
  if (robust == Robust::huber && !(huber_delta > 0.0)) throw std::invalid_argument("loss weights: huber delta must be positive");
}

double cosine_distance(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_distance: length mismatch");
  double uu = 0, vv = 0, uv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) {
    if (diagnostics().zero_norm_rows++ == 0) std::clog << "cosine_distance: zero vector, distance taken as 1\n";
    return 1.0;
  }
  return 1.0 - uv / std::sqrt(uu * vv);
}

template <typename T>
Tensor<T> cosine_distance(const Tensor<T>& u, const Tensor<T>& v) {
  return add_scalar(scale(cosine_similarity(u, v), T(-1)), T(1));
}

template <typename T>
Tensor<T> pairwise_cosine_distance(const Tensor<T>& z) {
  if (z.rank() != 2) shape_error("pairwise_cosine_distance", z.shape(), "expected [B, d]");
  const auto zn = l2_normalize(z);
  return add_scalar(scale(matmul(zn, transpose(zn, 0, 1)), T(-1)), T(1));
}

template <typename T>
Tensor<T> fusion_loss(const Tensor<T>& z, std::span<const T> rewards, const Tensor<T>& next_pred,
                      const LossWeights& w) {
  if (z.rank() != 2) shape_error("fusion_loss", z.shape(), "expected [B, d]");
  const auto B = z.dim(0);
  if (B < 2) throw std::invalid_argument("fusion_loss: batch of " + std::to_string(B) + " has no pairs");
  if (rewards.size() != B) throw std::invalid_argument("fusion_loss: reward count does not match the batch");
  if (next_pred.shape() != z.shape()) shape_error("fusion_loss", z.shape(), next_pred.shape());

  std::vector<T> target(B * B, T(0));
  {
    NoGradGuard guard;
    const auto next_diff = pairwise_cosine_distance(next_pred);
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < B; ++j) {
        if (i == j) continue;
        const double rd = std::abs(double(rewards[i]) - double(rewards[j]));
        target[i * B + j] = T(pair_target(rd, double(next_diff.at(i * B + j)), w));
      }
    }
  }
  const Tensor<T> tgt({B, B}, std::move(target));
  const auto z_diff = pairwise_cosine_distance(z);
  Tensor<T> err;
  if (w.robust == Robust::huber) {
    err = huber(z_diff, tgt, T(w.huber_delta));
  } else {
    const auto d = sub(z_diff, tgt);
    err = mul(d, d);
  }
  std::vector<T> weight(B * B, T(1.0 / double(B * (B - 1))));
  for (std::size_t i = 0; i < B; ++i) weight[i * B + i] = T(0);
  return sum(mul(err, Tensor<T>({B, B}, std::move(weight))));
}

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& predictions, const Tensor<T>& targets) {
  if (predictions.shape() != targets.shape()) shape_error("reconstruction_loss", predictions.shape(), targets.shape());
  return add_scalar(scale(mean(cosine_similarity(predictions, stop_gradient(targets))), T(-1)), T(1));
}

template <typename T>
EnsembleDynamics<T>::EnsembleDynamics(std::size_t embed_dim, std::size_t num_actions, const DynamicsConfig& cfg,
                                      std::uint64_t seed)
    : embed_dim_(embed_dim), num_actions_(num_actions) {
  if (cfg.members == 0) throw std::invalid_argument("dynamics: ensemble needs at least one member");
  if (embed_dim == 0 || num_actions == 0 || cfg.hidden == 0) throw std::invalid_argument("dynamics: empty layer");
  std::mt19937_64 rng(util::derive_seed(seed, 200));
  for (std::size_t k = 0; k < cfg.members; ++k) {
    members_.emplace_back(params_, "member" + std::to_string(k),
                          std::vector<std::size_t>{embed_dim + num_actions, cfg.hidden, cfg.hidden, embed_dim},
                          model::Activation::relu, rng);
  }
}

template <typename T>
Tensor<T> EnsembleDynamics<T>::inputs(const Tensor<T>& z, std::span<const std::size_t> actions) const {
  if (z.rank() != 2 || z.dim(1) != embed_dim_) shape_error("dynamics", z.shape(), "expected [B, d]");
  const auto B = z.dim(0);
  if (actions.size() != B) throw std::invalid_argument("dynamics: action count does not match the batch");
  std::vector<T> onehot(B * num_actions_, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    if (actions[b] >= num_actions_) throw std::out_of_range("dynamics: action " + std::to_string(actions[b]));
    onehot[b * num_actions_ + actions[b]] = T(1);
  }
  return concat<T>({z, Tensor<T>({B, num_actions_}, std::move(onehot))}, 1);
}

template <typename T>
Tensor<T> EnsembleDynamics<T>::predict(std::size_t k, const Tensor<T>& z, std::span<const std::size_t> actions) const {
  return l2_normalize(members_.at(k)(inputs(z, actions)));
}

template <typename T>
Tensor<T> EnsembleDynamics<T>::sample_prediction(const Tensor<T>& z, std::span<const std::size_t> actions,
                                                 std::mt19937_64& rng, std::size_t* member) const {
  const auto k = util::uniform_index(rng, members_.size());
  if (member) *member = k;
  return predict(k, z, actions);
}

template <typename T>
Tensor<T> dynamics_loss(const EnsembleDynamics<T>& ensemble, const Tensor<T>& z, std::span<const std::size_t> actions,
                        const Tensor<T>& z_next, bool encoder_gradients) {
  if (z.shape() != z_next.shape()) shape_error("dynamics_loss", z.shape(), z_next.shape());
  if (z.rank() != 2 || z.dim(0) == 0) throw std::invalid_argument("dynamics_loss: empty batch");
  const auto input = encoder_gradients ? z : stop_gradient(z);
  const auto target = stop_gradient(z_next);
  std::vector<Tensor<T>> terms;
  for (std::size_t k = 0; k < ensemble.size(); ++k) {
    terms.push_back(mean(cosine_distance(ensemble.predict(k, input, actions), target)));
  }
  Tensor<T> total = terms[0];
  for (std::size_t k = 1; k < terms.size(); ++k) total = add(total, terms[k]);
  return scale(total, T(1.0 / double(terms.size())));
}

template <typename T>
LossParts<T> mfsc_loss(const FusionModel<T>& model, const FusionModel<T>* momentum,
                       const EnsembleDynamics<T>& ensemble, const MfscBatch<T>& batch, const LossWeights& w,
                       std::mt19937_64& rng, const LossSwitches& switches) {
  w.validate();
  LossParts<T> out;
  const auto online = model.forward(batch.obs);
  out.z = online.fused;
  const auto zero = Tensor<T>::scalar(T(0));

  out.fusion = zero;
  if (switches.fusion) {
    Tensor<T> next_pred;
    {
      NoGradGuard guard;
      next_pred = ensemble.sample_prediction(online.fused, batch.actions, rng, &out.member);
    }
    out.fusion = fusion_loss<T>(online.fused, batch.rewards, next_pred, w);
  }

  out.reconstruction = zero;
  if (switches.reconstruction) {
    const auto masked = model.forward(batch.masked_obs);
    const auto pred = model.predict(masked.tokens);
    Tensor<T> targets;
    if (momentum) {
      NoGradGuard guard;
      targets = momentum->forward(batch.obs).tokens;
    } else {
      targets = stop_gradient(online.tokens);
    }
    out.reconstruction = reconstruction_loss(pred, targets);
  }

  out.dynamics = zero;
  if (switches.dynamics) {
    Tensor<T> z_next;
    {
      NoGradGuard guard;
      z_next = (momentum ? momentum : &model)->forward(batch.next_obs).fused;
    }
    out.dynamics = dynamics_loss(ensemble, online.fused, batch.actions, z_next, switches.dynamics_encoder_gradients);
  }

  out.total = add(out.fusion, scale(out.reconstruction, T(w.lambda)));
  return out;
}

double RewardNormalizer::stddev() const { return std::sqrt(std::max(var_, 0.0)); }

double RewardNormalizer::normalize(double r) {
  if (!std::isfinite(r)) throw std::invalid_argument("normalize_reward: non-finite reward");
  const double out = (r - mean_) / std::max(stddev(), 1e-8);
  const double beta = std::max(alpha_, 1.0 / double(count_ + 1));
  const double delta = r - mean_;
  mean_ += beta * delta;
  var_ = (1.0 - beta) * (var_ + beta * delta * delta);
  ++count_;
  return out;
}

TabularTargetResult tabular_target_iteration(const mdp::TabularMDP& mdp, const mdp::Policy& policy,
                                             const LossWeights& w, double tol, std::size_t max_iter) {
  mdp.validate();
  policy.validate();
  w.validate();
  const auto n = mdp.num_states, A = mdp.num_actions;
  if (policy.num_states() != n || policy.num_actions() != A) throw std::invalid_argument("tabular target: policy shape");
  std::vector<double> r(n, 0.0), P(n * n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t a = 0; a < A; ++a) {
      r[s] += policy(s, a) * mdp.R(s, a);
      for (std::size_t t = 0; t < n; ++t) P[s * n + t] += policy(s, a) * mdp.P(s, a, t);
    }
  }
  TabularTargetResult res;
  std::vector<double> g(n * n, 0.0), h(n * n), next(n * n);
  for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
    // h = P g, then E[g(i', j')] = (P g P^T)(i, j) = sum_l h(i, l) P(j, l)
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t l = 0; l < n; ++l) {
        double acc = 0;
        for (std::size_t k = 0; k < n; ++k) acc += P[i * n + k] * g[k * n + l];
        h[i * n + l] = acc;
      }
    }
    res.residual = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double v = 0;
        if (i != j) {
          double e = 0;
          for (std::size_t l = 0; l < n; ++l) e += h[i * n + l] * P[j * n + l];
          v = pair_target(std::abs(r[i] - r[j]), e, w);
        }
        next[i * n + j] = v;
        res.residual = std::max(res.residual, std::abs(v - g[i * n + j]));
      }
    }
    g.swap(next);
    if (res.residual <= tol) break;
  }
  if (res.residual > tol) {
    throw std::runtime_error("tabular target iteration: residual " + std::to_string(res.residual) + " after " +
                             std::to_string(max_iter) + " iterations");
  }
  res.metric = std::move(g);
  return res;
}

#define MFSC_INSTANTIATE_LOSSES(T)                                                                              \
  template Tensor<T> cosine_distance(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> pairwise_cosine_distance(const Tensor<T>&);                                                \
  template Tensor<T> fusion_loss(const Tensor<T>&, std::span<const T>, const Tensor<T>&, const LossWeights&);   \
  template Tensor<T> reconstruction_loss(const Tensor<T>&, const Tensor<T>&);                                   \
  template class EnsembleDynamics<T>;                                                                           \
  template Tensor<T> dynamics_loss(const EnsembleDynamics<T>&, const Tensor<T>&, std::span<const std::size_t>,  \
                                   const Tensor<T>&, bool);                                                     \
  template LossParts<T> mfsc_loss(const FusionModel<T>&, const FusionModel<T>*, const EnsembleDynamics<T>&,     \
                                  const MfscBatch<T>&, const LossWeights&, std::mt19937_64&, const LossSwitches&);

MFSC_INSTANTIATE_LOSSES(float)
MFSC_INSTANTIATE_LOSSES(double)

}  // namespace mfsc::losses
