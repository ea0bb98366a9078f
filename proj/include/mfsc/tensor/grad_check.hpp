#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mfsc/tensor/tensor.hpp"

namespace mfsc::tensor {

struct GradCheckEntry {
  std::string name;
  double rel_error = 0.0;  // ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf)
  std::size_t worst_index = 0;
  bool non_finite = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
  bool non_finite = false;

  bool passed(double threshold) const { return !non_finite && max_rel_error < threshold; }
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

/// Compares backward() against central differences for every named leaf.
/// `fn` must rebuild the graph from the leaves on each call and be
/// deterministic.
GradCheckReport grad_check(const std::function<Tensor<double>()>& fn,
                           const std::vector<NamedTensor>& params, double step = 1e-5);

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                           const Tensor<double>& point, double step = 1e-5);

}  // namespace mfsc::tensor
