#pragma once

#include <random>
#include <string>
#include <vector>

#include "mfsc/tensor/tensor.hpp"

namespace mfsc::tensor {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
};

/// Ordered, named collection of trainable leaves. Order is registration
/// order and is what checkpoints and optimizers iterate over.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values);
  Tensor<T> add_uniform(const std::string& name, Shape shape, T bound, std::mt19937_64& rng);
  Tensor<T> add_normal(const std::string& name, Shape shape, T stddev, std::mt19937_64& rng);
  Tensor<T> add_constant(const std::string& name, Shape shape, T value);

  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::vector<Tensor<T>> tensors() const;
  const Tensor<T>& get(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();
  /// Copies values (not grads) from a store with identical names and shapes.
  void copy_values_from(const ParameterStore& other);
  /// target <- (1 - rate) * target + rate * source, element-wise.
  void ema_update_from(const ParameterStore& source, T rate);
  /// Appends every parameter of `other` under `prefix`, sharing the tensors.
  void extend(const std::string& prefix, const ParameterStore& other);

 private:
  std::vector<Parameter<T>> params_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace mfsc::tensor
