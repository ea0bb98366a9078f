#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mfsc/envs/gridworld.hpp"
#include "mfsc/model/layers.hpp"

namespace mfsc::model {

/// How a missing view reaches the fusion module.
enum class MissingViewMode {
  mask_token,  // the view's embedding slot is replaced by a learned token
  pixel_zero,  // the all-zero image is encoded like any other view
};

struct ModelConfig {
  std::size_t embed_dim = 128;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_views = 3;
  std::size_t view_height = 48, view_width = 48, channels = 3;
  std::vector<ConvSpec> encoder{{32, 3, 2}, {32, 3, 2}, {32, 3, 2}};
  MissingViewMode missing_view = MissingViewMode::mask_token;

  void validate() const;
};

struct MaskConfig {
  double mask_ratio = 0.8;
  std::size_t cube_height = 12, cube_width = 12;
  std::size_t cube_depth = 3;  // in stacked frames; clipped to the frames present

  void validate(std::size_t view_height, std::size_t view_width) const;
};

/// B observations of K views packed as [B, K, H, W, C].
struct ViewBatch {
  std::size_t batch = 0, views = 0, height = 0, width = 0, channels = 0;
  std::vector<float> pixels;
  std::vector<envs::ViewStatus> status;  // [B, K]

  static ViewBatch from(std::span<const envs::MultiViewObservation> observations);
  static ViewBatch from(const std::vector<const envs::MultiViewObservation*>& observations);
  std::size_t view_size() const { return height * width * channels; }
  std::span<float> view(std::size_t b, std::size_t k) {
    return {pixels.data() + (b * views + k) * view_size(), view_size()};
  }
  std::span<const float> view(std::size_t b, std::size_t k) const {
    return {pixels.data() + (b * views + k) * view_size(), view_size()};
  }
  envs::ViewStatus view_status(std::size_t b, std::size_t k) const { return status[b * views + k]; }
};

template <typename T>
struct FusionOutput {
  Tensor<T> fused;   // [B, d], unit rows
  Tensor<T> tokens;  // [B, K + 1, d], token 0 is the state token
};

template <typename T>
class FusionModel {
 public:
  FusionModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  /// [B, K, d]. Missing views are not encoded in mask_token mode; their slot
  /// holds the mask token.
  Tensor<T> encode_views(const ViewBatch& batch) const;
  FusionOutput<T> fuse(const Tensor<T>& embeddings) const;
  FusionOutput<T> forward(const ViewBatch& batch) const { return fuse(encode_views(batch)); }
  /// Prediction head applied to every token: [..., d] -> [..., d].
  Tensor<T> predict(const Tensor<T>& tokens) const { return head_(tokens); }

  ParameterStore<T>& parameters() { return params_; }
  const ParameterStore<T>& parameters() const { return params_; }
  const Tensor<T>& mask_token() const { return mask_token_; }
  const Tensor<T>& state_token() const { return state_token_; }
  const Tensor<T>& positions() const { return positions_; }
  const AttentionBlock<T>& block(std::size_t i) const { return blocks_.at(i); }

  /// Momentum target: params <- (1 - rate) params + rate * online params.
  void ema_update_from(const FusionModel& online, T rate) { params_.ema_update_from(online.params_, rate); }
  void copy_from(const FusionModel& other) { params_.copy_values_from(other.params_); }

 private:
  ModelConfig config_;
  ParameterStore<T> params_;
  ConvEncoder<T> encoder_;
  Tensor<T> state_token_, positions_, mask_token_;
  std::vector<AttentionBlock<T>> blocks_;
  Mlp<T> head_;
};

/// Zeroes random cubes (cube_height x cube_width pixels over up to
/// cube_depth consecutive frames) of every view until the masked share of
/// (pixel, frame) cells reaches mask_ratio. Each view gets its own layout.
void cube_mask(ViewBatch& batch, const MaskConfig& cfg, std::mt19937_64& rng,
               std::size_t channels_per_frame = 3);
envs::MultiViewObservation cube_mask(const envs::MultiViewObservation& obs, const MaskConfig& cfg,
                                     std::mt19937_64& rng, std::size_t channels_per_frame = 3);
/// Fraction of (pixel, frame) cells of one view that are entirely zero.
double zero_fraction(std::span<const float> view, std::size_t channels, std::size_t channels_per_frame = 3);

extern template class FusionModel<float>;
extern template class FusionModel<double>;

}  // namespace mfsc::model
