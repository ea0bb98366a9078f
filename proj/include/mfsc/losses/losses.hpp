#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mfsc/mdp/tabular.hpp"
#include "mfsc/model/fusion_model.hpp"

namespace mfsc::losses {

using model::FusionModel;
using model::ViewBatch;
using tensor::Tensor;

enum class Robust { squared, huber };

struct LossWeights {
  double lambda = 1.0;
  double gamma = 0.99;
  double c_r = 0.01;  // reward-difference weight, 1 - gamma
  double c_t = 0.99;  // next-state weight, gamma
  Robust robust = Robust::huber;
  double huber_delta = 1.0;

  static LossWeights from_gamma(double gamma, double lambda = 1.0);
  void validate() const;
};

/// c_r * r_diff + c_t * next_diff. Shared by the batch loss and the tabular
/// iteration so both use one rule.
inline double pair_target(double r_diff, double next_diff, const LossWeights& w) {
  return w.c_r * r_diff + w.c_t * next_diff;
}

/// 1 - cos(u, v). A zero vector yields 1 and bumps
/// tensor::diagnostics().zero_norm_rows.
double cosine_distance(std::span<const double> u, std::span<const double> v);

/// Row-wise 1 - cos over the last axis.
template <typename T>
Tensor<T> cosine_distance(const Tensor<T>& u, const Tensor<T>& v);

/// [B, d] -> [B, B] matrix of 1 - cos(z_i, z_j).
template <typename T>
Tensor<T> pairwise_cosine_distance(const Tensor<T>& z);

/// Fusion loss on precomputed latents.
///   z          [B, d] online latents (gradients flow)
///   rewards    [B] normalized rewards
///   next_pred  [B, d] predicted next latents (treated as constants)
/// Mean robustified error between G(z_i, z_j) and the detached target over
/// ordered pairs i != j. Throws for B < 2.
template <typename T>
Tensor<T> fusion_loss(const Tensor<T>& z, std::span<const T> rewards, const Tensor<T>& next_pred,
                      const LossWeights& w);

/// 1 - mean cos(pred, target) over every token of every sample. Target is
/// gradient-blocked here.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& predictions, const Tensor<T>& targets);

struct DynamicsConfig {
  std::size_t members = 5;
  std::size_t hidden = 128;
};

/// K deterministic latent transition models (z, one-hot a) -> unit vector.
template <typename T>
class EnsembleDynamics {
 public:
  EnsembleDynamics(std::size_t embed_dim, std::size_t num_actions, const DynamicsConfig& cfg, std::uint64_t seed);

  std::size_t size() const { return members_.size(); }
  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t num_actions() const { return num_actions_; }

  /// Member k on a batch: [B, d] x B actions -> [B, d], unit rows.
  Tensor<T> predict(std::size_t k, const Tensor<T>& z, std::span<const std::size_t> actions) const;
  /// One member drawn uniformly by rng. `member` receives the index if given.
  Tensor<T> sample_prediction(const Tensor<T>& z, std::span<const std::size_t> actions, std::mt19937_64& rng,
                              std::size_t* member = nullptr) const;

  tensor::ParameterStore<T>& parameters() { return params_; }
  const tensor::ParameterStore<T>& parameters() const { return params_; }

 private:
  Tensor<T> inputs(const Tensor<T>& z, std::span<const std::size_t> actions) const;

  std::size_t embed_dim_, num_actions_;
  tensor::ParameterStore<T> params_;
  std::vector<model::Mlp<T>> members_;
};

/// (1/K) sum_k mean_b [1 - cos(P_k(z, a), z_next)]. Both latents are
/// detached unless `encoder_gradients` is set, which lets z carry gradient.
template <typename T>
Tensor<T> dynamics_loss(const EnsembleDynamics<T>& ensemble, const Tensor<T>& z, std::span<const std::size_t> actions,
                        const Tensor<T>& z_next, bool encoder_gradients = false);

template <typename T>
struct MfscBatch {
  ViewBatch obs;         // clean views
  ViewBatch masked_obs;  // cube-masked copy of obs
  ViewBatch next_obs;
  std::vector<std::size_t> actions;
  std::vector<T> rewards;  // normalized
};

struct LossSwitches {
  bool fusion = true;
  bool reconstruction = true;
  bool dynamics = true;
  bool dynamics_encoder_gradients = false;
};

template <typename T>
struct LossParts {
  Tensor<T> total;           // fusion + lambda * reconstruction
  Tensor<T> fusion, reconstruction, dynamics;
  Tensor<T> z;               // online fused latents [B, d], with graph
  std::size_t member = 0;    // ensemble member used for the fusion target
};

/// Runs the online model (and the momentum model for targets when given)
/// over one minibatch and assembles every representation loss.
template <typename T>
LossParts<T> mfsc_loss(const FusionModel<T>& model, const FusionModel<T>* momentum,
                       const EnsembleDynamics<T>& ensemble, const MfscBatch<T>& batch, const LossWeights& w,
                       std::mt19937_64& rng, const LossSwitches& switches = {});

/// Exponential moving mean/variance with rate max(alpha, 1/(n+1)).
class RewardNormalizer {
 public:
  explicit RewardNormalizer(double alpha = 0.01) : alpha_(alpha) {}

  /// Normalizes with the current statistics, then folds r into them.
  double normalize(double r);
  double mean() const { return mean_; }
  double stddev() const;
  std::uint64_t count() const { return count_; }
  double alpha() const { return alpha_; }
  void restore(double mean, double var, std::uint64_t count) {
    mean_ = mean;
    var_ = var;
    count_ = count;
  }
  double variance() const { return var_; }

 private:
  double alpha_;
  double mean_ = 0.0, var_ = 1.0;
  std::uint64_t count_ = 0;
};

struct TabularTargetResult {
  std::vector<double> metric;  // [n, n]
  std::size_t iterations = 0;
  double residual = 0.0;
};

/// Iterates the fusion-loss target rule on a finite state set:
///   g(i, j) <- c_r |r_pi(i) - r_pi(j)| + c_t E[g(i', j')],  g(i, i) = 0
/// with i', j' drawn independently from the policy-averaged transitions.
TabularTargetResult tabular_target_iteration(const mdp::TabularMDP& mdp, const mdp::Policy& policy,
                                             const LossWeights& w, double tol = 1e-12,
                                             std::size_t max_iter = 100000);

extern template class EnsembleDynamics<float>;
extern template class EnsembleDynamics<double>;

}  // namespace mfsc::losses
