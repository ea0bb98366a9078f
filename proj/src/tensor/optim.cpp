#include "mfsc/tensor/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mfsc::tensor {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    state_.m.emplace_back(p.numel(), 0.0);
    state_.v.emplace_back(p.numel(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++state_.step;
  const double bc1 = 1.0 - std::pow(beta1_, double(state_.step));
  const double bc2 = 1.0 - std::pow(beta2_, double(state_.step));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    auto data = p.mutable_data();
    const auto grad = p.grad();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double g = grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      data[k] = T(double(data[k]) - lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void Adam<T>::load_state(AdamState state) {
  if (state.m.size() != params_.size() || state.v.size() != params_.size()) {
    throw std::invalid_argument("optimizer state does not match parameter list");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (state.m[i].size() != params_[i].numel() || state.v[i].size() != params_[i].numel()) {
      throw std::invalid_argument("optimizer state does not match parameter list");
    }
  }
  state_ = std::move(state);
}

template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (auto g : p.grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / (norm + 1e-6);
    for (auto p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g = T(double(g) * factor);
    }
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;
template double clip_grad_norm(const std::vector<Tensor<float>>&, double);
template double clip_grad_norm(const std::vector<Tensor<double>>&, double);

}  // namespace mfsc::tensor
