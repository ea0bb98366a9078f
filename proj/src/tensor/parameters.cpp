#include "mfsc/tensor/parameters.hpp"

#include <stdexcept>

#include "mfsc/util/random.hpp"

namespace mfsc::tensor {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
  for (const auto& p : params_) {
    if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
  }
  Tensor<T> t(std::move(shape), std::move(values), true);
  params_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::add_uniform(const std::string& name, Shape shape, T bound,
                                         std::mt19937_64& rng) {
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = T((2.0 * util::uniform01(rng) - 1.0) * double(bound));
  return add(name, std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> ParameterStore<T>::add_normal(const std::string& name, Shape shape, T stddev,
                                        std::mt19937_64& rng) {
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = T(util::normal(rng) * double(stddev));
  return add(name, std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> ParameterStore<T>::add_constant(const std::string& name, Shape shape, T value) {
  const auto n = numel(shape);
  return add(name, std::move(shape), std::vector<T>(n, value));
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw std::out_of_range("no parameter named " + name);
}

template <typename T>
std::size_t ParameterStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

template <typename T>
void ParameterStore<T>::copy_values_from(const ParameterStore& other) {
  if (other.params_.size() != params_.size()) {
    throw std::invalid_argument("parameter stores differ in size");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i].value;
    const auto& src = other.params_[i].value;
    if (dst.shape() != src.shape()) shape_error("copy_values_from", dst.shape(), src.shape());
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

template <typename T>
void ParameterStore<T>::ema_update_from(const ParameterStore& source, T rate) {
  if (source.params_.size() != params_.size()) {
    throw std::invalid_argument("parameter stores differ in size");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = params_[i].value.mutable_data();
    const auto src = source.params_[i].value.data();
    if (dst.size() != src.size()) {
      shape_error("ema_update_from", params_[i].value.shape(), source.params_[i].value.shape());
    }
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = (T(1) - rate) * dst[k] + rate * src[k];
  }
}

template <typename T>
void ParameterStore<T>::extend(const std::string& prefix, const ParameterStore& other) {
  for (const auto& p : other.params_) params_.push_back({prefix + p.name, p.value});
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace mfsc::tensor
