#include "mfsc/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mfsc::tensor {

GradCheckReport grad_check(const std::function<Tensor<double>()>& fn,
                           const std::vector<NamedTensor>& params, double step) {
  for (const auto& [name, p] : params) {
    auto handle = p;
    handle.zero_grad();
  }
  backward(fn());

  GradCheckReport report;
  for (const auto& [name, p] : params) {
    auto t = p;
    const auto n = t.numel();
    std::vector<double> analytic(n, 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<double> numeric(n);
    {
      NoGradGuard guard;
      auto data = t.mutable_data();
      for (std::size_t i = 0; i < n; ++i) {
        const double orig = data[i];
        data[i] = orig + step;
        const double up = fn().item();
        data[i] = orig - step;
        const double down = fn().item();
        data[i] = orig;
        numeric[i] = (up - down) / (2.0 * step);
      }
    }

    GradCheckEntry entry{name};
    double diff = 0.0, scale_a = 0.0, scale_n = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(analytic[i]) || !std::isfinite(numeric[i])) entry.non_finite = true;
      const double d = std::abs(analytic[i] - numeric[i]);
      if (d > diff) {
        diff = d;
        entry.worst_index = i;
      }
      scale_a = std::max(scale_a, std::abs(analytic[i]));
      scale_n = std::max(scale_n, std::abs(numeric[i]));
    }
    entry.rel_error = diff / std::max({scale_a, scale_n, 1e-8});
    if (entry.non_finite) entry.rel_error = INFINITY;
    report.non_finite = report.non_finite || entry.non_finite;
    if (entry.rel_error >= report.max_rel_error) {
      report.max_rel_error = entry.rel_error;
      report.worst = name;
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& fn,
                           const Tensor<double>& point, double step) {
  Tensor<double> x(point.shape(), std::vector<double>(point.data().begin(), point.data().end()), true);
  return grad_check([&] { return fn(x); }, {{"x", x}}, step);
}

}  // namespace mfsc::tensor
