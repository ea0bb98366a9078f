#pragma once

#include <vector>

#include "mfsc/tensor/tensor.hpp"

namespace mfsc::tensor {

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  /// Applies one update from the accumulated grads. Params without a grad
  /// are skipped.
  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  const AdamState& state() const { return state_; }
  void load_state(AdamState state);

 private:
  std::vector<Tensor<T>> params_;
  double lr_, beta1_, beta2_, eps_;
  AdamState state_;
};

/// Scales all grads so their joint L2 norm is at most max_norm. Returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>>& params, double max_norm);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace mfsc::tensor
