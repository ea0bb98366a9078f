#pragma once

#include <random>
#include <string>
#include <vector>

#include "mfsc/tensor/ops.hpp"
#include "mfsc/tensor/parameters.hpp"

namespace mfsc::model {

using tensor::ParameterStore;
using tensor::Shape;
using tensor::Tensor;

/// y = x W + b over the last axis. W is [in, out].
template <typename T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

enum class Activation { relu, gelu };

/// Linear -> activation -> ... -> Linear (no activation after the last layer).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;
  Activation activation = Activation::relu;

  Mlp() = default;
  Mlp(ParameterStore<T>& store, const std::string& name, const std::vector<std::size_t>& sizes,
      Activation act, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

struct ConvSpec {
  std::size_t filters = 32, kernel = 3, stride = 2;
};

/// Conv (same padding) + ReLU stack, flatten, linear to `out`. Input NHWC.
template <typename T>
struct ConvEncoder {
  std::vector<Tensor<T>> weights, biases;
  std::vector<ConvSpec> specs;
  Linear<T> head;
  std::size_t height = 0, width = 0, channels = 0;

  ConvEncoder() = default;
  ConvEncoder(ParameterStore<T>& store, const std::string& name, std::size_t height, std::size_t width,
              std::size_t channels, const std::vector<ConvSpec>& specs, std::size_t out, std::mt19937_64& rng);
  Tensor<T> operator()(const Tensor<T>& images) const;
  std::size_t flat_size() const;
};

/// Pre-norm transformer block on [B, T, d]:
///   z' = MHSA(LN(z)) + z,  z = MLP(LN(z')) + z'.
template <typename T>
struct AttentionBlock {
  Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  Linear<T> qkv, proj;
  Mlp<T> mlp;
  std::size_t dim = 0, heads = 1;

  AttentionBlock() = default;
  AttentionBlock(ParameterStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads,
                 std::size_t mlp_ratio, std::mt19937_64& rng);
  Tensor<T> attention(const Tensor<T>& x) const;
  Tensor<T> operator()(const Tensor<T>& z) const;
};

}  // namespace mfsc::model
