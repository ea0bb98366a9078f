#include "mfsc/model/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace mfsc::model {

using namespace mfsc::tensor;

template <typename T>
Linear<T>::Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                  std::mt19937_64& rng) {
  const T bound = T(1.0 / std::sqrt(double(in)));
  weight = store.add_uniform(name + ".weight", {in, out}, bound, rng);
  bias = store.add_constant(name + ".bias", {out}, T(0));
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  return add(matmul(x, weight), bias);
}

template <typename T>
Mlp<T>::Mlp(ParameterStore<T>& store, const std::string& name, const std::vector<std::size_t>& sizes,
            Activation act, std::mt19937_64& rng)
    : activation(act) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layers.emplace_back(store, name + "." + std::to_string(i), sizes[i], sizes[i + 1], rng);
  }
}

template <typename T>
Tensor<T> Mlp<T>::operator()(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = activation == Activation::gelu ? gelu(h) : relu(h);
  }
  return h;
}

template <typename T>
ConvEncoder<T>::ConvEncoder(ParameterStore<T>& store, const std::string& name, std::size_t h, std::size_t w,
                            std::size_t c, const std::vector<ConvSpec>& conv_specs, std::size_t out,
                            std::mt19937_64& rng)
    : specs(conv_specs), height(h), width(w), channels(c) {
  std::size_t in = c;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    if (s.kernel == 0 || s.stride == 0 || s.filters == 0) throw std::invalid_argument("conv spec entries must be positive");
    const T bound = T(1.0 / std::sqrt(double(s.kernel * s.kernel * in)));
    const auto prefix = name + ".conv" + std::to_string(i);
    weights.push_back(store.add_uniform(prefix + ".weight", {s.filters, s.kernel, s.kernel, in}, bound, rng));
    biases.push_back(store.add_constant(prefix + ".bias", {s.filters}, T(0)));
    in = s.filters;
  }
  head = Linear<T>(store, name + ".head", flat_size(), out, rng);
}

template <typename T>
std::size_t ConvEncoder<T>::flat_size() const {
  std::size_t h = height, w = width, c = channels;
  for (const auto& s : specs) {
    h = (h + s.stride - 1) / s.stride;
    w = (w + s.stride - 1) / s.stride;
    c = s.filters;
  }
  return h * w * c;
}

template <typename T>
Tensor<T> ConvEncoder<T>::operator()(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != height || images.dim(2) != width || images.dim(3) != channels) {
    shape_error("ConvEncoder", images.shape(),
                "expected [N, " + std::to_string(height) + ", " + std::to_string(width) + ", " +
                    std::to_string(channels) + "]");
  }
  Tensor<T> h = images;
  for (std::size_t i = 0; i < specs.size(); ++i) h = relu(conv2d(h, weights[i], biases[i], specs[i].stride));
  return head(reshape(h, {images.dim(0), flat_size()}));
}

template <typename T>
AttentionBlock<T>::AttentionBlock(ParameterStore<T>& store, const std::string& name, std::size_t d,
                                  std::size_t h, std::size_t mlp_ratio, std::mt19937_64& rng)
    : dim(d), heads(h) {
  if (h == 0 || d % h != 0) throw std::invalid_argument("embedding dim must be divisible by the head count");
  ln1_gamma = store.add_constant(name + ".ln1.gamma", {d}, T(1));
  ln1_beta = store.add_constant(name + ".ln1.beta", {d}, T(0));
  qkv = Linear<T>(store, name + ".qkv", d, 3 * d, rng);
  proj = Linear<T>(store, name + ".proj", d, d, rng);
  ln2_gamma = store.add_constant(name + ".ln2.gamma", {d}, T(1));
  ln2_beta = store.add_constant(name + ".ln2.beta", {d}, T(0));
  mlp = Mlp<T>(store, name + ".mlp", {d, mlp_ratio * d, d}, Activation::gelu, rng);
}

template <typename T>
Tensor<T> AttentionBlock<T>::attention(const Tensor<T>& x) const {
  const auto B = x.dim(0), N = x.dim(1), dh = dim / heads;
  const auto packed = qkv(x);  // [B, N, 3d]
  auto split = [&](std::size_t part) {
    // [B, N, d] -> [B, heads, N, dh]
    return permute(reshape(slice(packed, 2, part * dim, dim), {B, N, heads, dh}), {0, 2, 1, 3});
  };
  const auto q = split(0), k = split(1), v = split(2);
  const auto scores = scale(matmul(q, transpose(k, 2, 3)), T(1.0 / std::sqrt(double(dh))));
  const auto mixed = matmul(softmax(scores), v);  // [B, heads, N, dh]
  return proj(reshape(permute(mixed, {0, 2, 1, 3}), {B, N, dim}));
}

template <typename T>
Tensor<T> AttentionBlock<T>::operator()(const Tensor<T>& z) const {
  const auto mid = add(attention(layer_norm(z, ln1_gamma, ln1_beta)), z);
  return add(mlp(layer_norm(mid, ln2_gamma, ln2_beta)), mid);
}

template struct Linear<float>;
template struct Linear<double>;
template struct Mlp<float>;
template struct Mlp<double>;
template struct ConvEncoder<float>;
template struct ConvEncoder<double>;
template struct AttentionBlock<float>;
template struct AttentionBlock<double>;

}  // namespace mfsc::model
