#include "mfsc/model/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mfsc/util/random.hpp"

namespace mfsc::model {

using namespace mfsc::tensor;

void ModelConfig::validate() const {
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw std::invalid_argument("model: embed_dim must be a positive multiple of heads");
  }
  if (num_views == 0) throw std::invalid_argument("model: num_views must be positive");
  if (mlp_ratio == 0) throw std::invalid_argument("model: mlp_ratio must be positive");
  if (view_height == 0 || view_width == 0 || channels == 0) throw std::invalid_argument("model: empty view shape");
}

void MaskConfig::validate(std::size_t view_height, std::size_t view_width) const {
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) throw std::invalid_argument("mask: mask_ratio must lie in [0, 1]");
  if (cube_height == 0 || cube_width == 0 || cube_depth == 0) throw std::invalid_argument("mask: empty cube");
  if (cube_height > view_height || cube_width > view_width) {
    throw std::invalid_argument("mask: cube " + std::to_string(cube_height) + "x" + std::to_string(cube_width) +
                                " does not fit a " + std::to_string(view_height) + "x" +
                                std::to_string(view_width) + " view");
  }
}

namespace {

template <typename Range>
ViewBatch pack(const Range& observations) {
  ViewBatch out;
  if (observations.empty()) throw std::invalid_argument("ViewBatch: no observations");
  const auto& first = *observations.front();
  out.batch = observations.size();
  out.views = first.num_views();
  out.height = first.height;
  out.width = first.width;
  out.channels = first.channels;
  out.pixels.reserve(out.batch * out.views * out.view_size());
  for (const auto* obs : observations) {
    if (obs->num_views() != out.views || obs->height != out.height || obs->width != out.width ||
        obs->channels != out.channels) {
      throw std::invalid_argument("ViewBatch: observations differ in shape");
    }
    for (std::size_t k = 0; k < out.views; ++k) {
      if (obs->views[k].size() != out.view_size()) throw std::invalid_argument("ViewBatch: view has wrong size");
      out.pixels.insert(out.pixels.end(), obs->views[k].begin(), obs->views[k].end());
      out.status.push_back(obs->status[k]);
    }
  }
  return out;
}

}  // namespace

ViewBatch ViewBatch::from(std::span<const envs::MultiViewObservation> observations) {
  std::vector<const envs::MultiViewObservation*> ptrs;
  for (const auto& o : observations) ptrs.push_back(&o);
  return pack(ptrs);
}

ViewBatch ViewBatch::from(const std::vector<const envs::MultiViewObservation*>& observations) {
  return pack(observations);
}

template <typename T>
FusionModel<T>::FusionModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(util::derive_seed(seed, 100));
  const auto d = config_.embed_dim;
  encoder_ = ConvEncoder<T>(params_, "encoder", config_.view_height, config_.view_width, config_.channels,
                            config_.encoder, d, rng);
  state_token_ = params_.add_normal("state_token", {d}, T(0.02), rng);
  positions_ = params_.add_normal("positions", {config_.num_views + 1, d}, T(0.02), rng);
  mask_token_ = params_.add_normal("mask_token", {d}, T(0.02), rng);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    blocks_.emplace_back(params_, "block" + std::to_string(i), d, config_.heads, config_.mlp_ratio, rng);
  }
  head_ = Mlp<T>(params_, "head", {d, d, d}, Activation::gelu, rng);
}

template <typename T>
Tensor<T> FusionModel<T>::encode_views(const ViewBatch& batch) const {
  const auto B = batch.batch, K = batch.views, d = config_.embed_dim;
  if (K != config_.num_views || batch.height != config_.view_height || batch.width != config_.view_width ||
      batch.channels != config_.channels) {
    throw std::invalid_argument("encode_views: batch of " + std::to_string(K) + " views " +
                                std::to_string(batch.height) + "x" + std::to_string(batch.width) + "x" +
                                std::to_string(batch.channels) + " does not match the model");
  }
  const bool use_token = config_.missing_view == MissingViewMode::mask_token;
  std::vector<std::size_t> slot(B * K);
  std::vector<T> pixels;
  std::size_t present = 0;
  for (std::size_t i = 0; i < B * K; ++i) {
    if (use_token && batch.status[i] == envs::ViewStatus::missing) continue;
    const auto v = batch.view(i / K, i % K);
    pixels.insert(pixels.end(), v.begin(), v.end());
    slot[i] = present++;
  }
  for (std::size_t i = 0; i < B * K; ++i) {
    if (use_token && batch.status[i] == envs::ViewStatus::missing) slot[i] = present;
  }
  std::vector<Tensor<T>> rows;
  if (present > 0) {
    Tensor<T> images({present, batch.height, batch.width, batch.channels}, std::move(pixels));
    rows.push_back(encoder_(images));
  }
  rows.push_back(reshape(mask_token_, {1, d}));
  const auto table = rows.size() == 1 ? rows[0] : concat(rows, 0);
  return reshape(take_rows(table, slot), {B, K, d});
}

template <typename T>
FusionOutput<T> FusionModel<T>::fuse(const Tensor<T>& embeddings) const {
  const auto d = config_.embed_dim;
  if (embeddings.rank() != 3 || embeddings.dim(1) != config_.num_views || embeddings.dim(2) != d) {
    shape_error("fuse", embeddings.shape(), "expected [B, " + std::to_string(config_.num_views) + ", " +
                                                std::to_string(d) + "]");
  }
  const auto B = embeddings.dim(0);
  const auto state = add(Tensor<T>::zeros({B, 1, d}), reshape(state_token_, {1, 1, d}));
  auto z = add(concat<T>({state, embeddings}, 1), positions_);
  for (const auto& block : blocks_) z = block(z);
  return {l2_normalize(select(z, 1, 0)), z};
}

void cube_mask(ViewBatch& batch, const MaskConfig& cfg, std::mt19937_64& rng, std::size_t channels_per_frame) {
  cfg.validate(batch.height, batch.width);
  if (channels_per_frame == 0 || batch.channels % channels_per_frame != 0) {
    throw std::invalid_argument("cube_mask: channels are not a whole number of frames");
  }
  const auto H = batch.height, W = batch.width, C = batch.channels;
  const auto F = C / channels_per_frame;
  const auto depth = std::min(cfg.cube_depth, F);
  const auto cells = H * W * F;
  const auto target = std::size_t(std::ceil(cfg.mask_ratio * double(cells) - 1e-9));
  std::vector<char> masked(cells);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t k = 0; k < batch.views; ++k) {
      auto px = batch.view(b, k);
      if (cfg.mask_ratio >= 1.0) {
        std::fill(px.begin(), px.end(), 0.0f);
        continue;
      }
      std::fill(masked.begin(), masked.end(), 0);
      std::size_t count = 0;
      while (count < target) {
        const auto y0 = util::uniform_index(rng, H - cfg.cube_height + 1);
        const auto x0 = util::uniform_index(rng, W - cfg.cube_width + 1);
        const auto f0 = util::uniform_index(rng, F - depth + 1);
        for (std::size_t f = f0; f < f0 + depth; ++f) {
          for (std::size_t y = y0; y < y0 + cfg.cube_height; ++y) {
            for (std::size_t x = x0; x < x0 + cfg.cube_width; ++x) {
              auto& m = masked[(y * W + x) * F + f];
              if (m) continue;
              m = 1;
              ++count;
              float* p = px.data() + (y * W + x) * C + f * channels_per_frame;
              std::fill(p, p + channels_per_frame, 0.0f);
            }
          }
        }
      }
    }
  }
}

envs::MultiViewObservation cube_mask(const envs::MultiViewObservation& obs, const MaskConfig& cfg,
                                     std::mt19937_64& rng, std::size_t channels_per_frame) {
  auto batch = ViewBatch::from(std::span<const envs::MultiViewObservation>(&obs, 1));
  cube_mask(batch, cfg, rng, channels_per_frame);
  auto out = obs;
  for (std::size_t k = 0; k < out.num_views(); ++k) {
    const auto v = batch.view(0, k);
    out.views[k].assign(v.begin(), v.end());
  }
  return out;
}

double zero_fraction(std::span<const float> view, std::size_t channels, std::size_t channels_per_frame) {
  const auto F = channels / channels_per_frame;
  const auto pixels = view.size() / channels;
  std::size_t zero = 0;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t f = 0; f < F; ++f) {
      const float* c = view.data() + p * channels + f * channels_per_frame;
      if (std::all_of(c, c + channels_per_frame, [](float v) { return v == 0.0f; })) ++zero;
    }
  }
  return double(zero) / double(pixels * F);
}

template class FusionModel<float>;
template class FusionModel<double>;

}  // namespace mfsc::model
