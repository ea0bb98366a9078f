#include "mfsc/tensor/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace mfsc::tensor {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
bool wants_grad(const std::shared_ptr<Node<T>>& n) {
  return n && n->requires_grad;
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

// Numpy-style broadcast of two shapes.
Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  const auto rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const auto ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const auto eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) shape_error(op, a, b);
    out[i] = std::max(ea, eb);
  }
  return out;
}

// For every flat index of `out`, the flat index into an operand of shape `in`.
std::vector<std::size_t> broadcast_index(const Shape& in, const Shape& out) {
  const auto n = numel(out);
  std::vector<std::size_t> idx(n);
  if (in == out) {
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  const auto rank = out.size();
  const auto offset = rank - in.size();
  std::vector<std::size_t> in_stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = rank; i-- > offset;) {
    const auto e = in[i - offset];
    in_stride[i] = e == 1 ? 0 : s;
    s *= e;
  }
  std::vector<std::size_t> counter(rank, 0);
  std::size_t cur = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    idx[flat] = cur;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      cur += in_stride[ax];
      if (counter[ax] < out[ax]) break;
      cur -= in_stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  return idx;
}

template <typename T, typename F, typename GA, typename GB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, GA ga, GB gb) {
  const auto out_shape = broadcast_shape(op, a.shape(), b.shape());
  const auto n = numel(out_shape);
  const bool same = a.shape() == out_shape && b.shape() == out_shape;
  std::vector<std::size_t> ia, ib;
  if (!same) {
    ia = broadcast_index(a.shape(), out_shape);
    ib = broadcast_index(b.shape(), out_shape);
  }
  std::vector<T> out(n);
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = same ? f(ad[i], bd[i]) : f(ad[ia[i]], bd[ib[i]]);
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(out_shape, std::move(out), op, {a, b},
                        [an, bn, same, ia = std::move(ia), ib = std::move(ib), ga, gb](Node<T>& self) {
                          const auto m = self.grad.size();
                          if (wants_grad(an)) {
                            an->ensure_grad();
                            for (std::size_t i = 0; i < m; ++i) {
                              const auto j = same ? i : ia[i];
                              const auto k = same ? i : ib[i];
                              an->grad[j] += ga(an->data[j], bn->data[k], self.data[i]) * self.grad[i];
                            }
                          }
                          if (wants_grad(bn)) {
                            bn->ensure_grad();
                            for (std::size_t i = 0; i < m; ++i) {
                              const auto j = same ? i : ia[i];
                              const auto k = same ? i : ib[i];
                              bn->grad[k] += gb(an->data[j], bn->data[k], self.data[i]) * self.grad[i];
                            }
                          }
                        });
}

// Elementwise op whose derivative is expressed through (x, y).
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& x, F f, D df) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = f(xd[i]);
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), op, {x}, [xn, df](Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      xn->grad[i] += df(xn->data[i], self.data[i]) * self.grad[i];
    }
  });
}

Shape strides_of(const Shape& s) {
  Shape st(s.size());
  std::size_t acc = 1;
  for (std::size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
  // Ties route the gradient to a.
  return binary<T>(
      "minimum", a, b, [](T x, T y) { return x <= y ? x : y; },
      [](T x, T y, T) { return x <= y ? T(1) : T(0); },
      [](T x, T y, T) { return x <= y ? T(0) : T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return unary<T>(
      "scale", x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T value) {
  return unary<T>(
      "add_scalar", x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary<T>(
      "gelu", x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [=](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary<T>(
      "exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary<T>(
      "log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
  return unary<T>(
      "abs", x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  return unary<T>(
      "clamp", x, [=](T v) { return std::clamp(v, lo, hi); },
      [=](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) shape_error("matmul", as, bs);
  const auto m = as[as.size() - 2];
  const auto k = as.back();
  const auto n = bs.back();
  if (bs[bs.size() - 2] != k) shape_error("matmul", as, bs);
  const bool shared_rhs = bs.size() == 2;
  std::size_t batch = 1;
  if (!shared_rhs) {
    if (as.size() != bs.size() || !std::equal(as.begin(), as.end() - 2, bs.begin())) {
      shape_error("matmul", as, bs);
    }
  }
  for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

  Shape out_shape(as.begin(), as.end() - 1);
  out_shape.push_back(n);
  std::vector<T> out(numel(out_shape));
  if (shared_rhs) {
    MapM<T>(out.data(), batch * m, n).noalias() =
        MapC<T>(a.data().data(), batch * m, k) * MapC<T>(b.data().data(), k, n);
  } else {
    for (std::size_t bi = 0; bi < batch; ++bi) {
      MapM<T>(out.data() + bi * m * n, m, n).noalias() =
          MapC<T>(a.data().data() + bi * m * k, m, k) * MapC<T>(b.data().data() + bi * k * n, k, n);
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(out_shape, std::move(out), "matmul", {a, b},
                        [an, bn, batch, m, k, n, shared_rhs](Node<T>& self) {
                          if (shared_rhs) {
                            MapC<T> g(self.grad.data(), batch * m, n);
                            if (wants_grad(an)) {
                              an->ensure_grad();
                              MapM<T>(an->grad.data(), batch * m, k).noalias() +=
                                  g * MapC<T>(bn->data.data(), k, n).transpose();
                            }
                            if (wants_grad(bn)) {
                              bn->ensure_grad();
                              MapM<T>(bn->grad.data(), k, n).noalias() +=
                                  MapC<T>(an->data.data(), batch * m, k).transpose() * g;
                            }
                            return;
                          }
                          if (wants_grad(an)) an->ensure_grad();
                          if (wants_grad(bn)) bn->ensure_grad();
                          for (std::size_t bi = 0; bi < batch; ++bi) {
                            MapC<T> g(self.grad.data() + bi * m * n, m, n);
                            if (wants_grad(an)) {
                              MapM<T>(an->grad.data() + bi * m * k, m, k).noalias() +=
                                  g * MapC<T>(bn->data.data() + bi * k * n, k, n).transpose();
                            }
                            if (wants_grad(bn)) {
                              MapM<T>(bn->grad.data() + bi * k * n, k, n).noalias() +=
                                  MapC<T>(an->data.data() + bi * m * k, m, k).transpose() * g;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, Padding padding) {
  const auto& is = input.shape();
  const auto& ws = weight.shape();
  if (is.size() != 4 || ws.size() != 4 || ws[3] != is[3] || stride == 0) {
    shape_error("conv2d", is, ws);
  }
  const auto N = is[0], H = is[1], W = is[2], C = is[3];
  const auto F = ws[0], KH = ws[1], KW = ws[2];
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != F)) {
    shape_error("conv2d", ws, bias.shape());
  }
  std::size_t Ho = 0, Wo = 0, pad_top = 0, pad_left = 0;
  if (padding == Padding::valid) {
    if (H < KH || W < KW) shape_error("conv2d", is, ws);
    Ho = (H - KH) / stride + 1;
    Wo = (W - KW) / stride + 1;
  } else {
    Ho = (H + stride - 1) / stride;
    Wo = (W + stride - 1) / stride;
    const auto need_h = (Ho - 1) * stride + KH;
    const auto need_w = (Wo - 1) * stride + KW;
    pad_top = need_h > H ? (need_h - H) / 2 : 0;
    pad_left = need_w > W ? (need_w - W) / 2 : 0;
  }
  const auto rows = N * Ho * Wo;
  const auto patch = KH * KW * C;

  // im2col: one row per output pixel, (kh, kw, c) ordering to match weight.
  auto cols = std::make_shared<std::vector<T>>(rows * patch, T(0));
  const auto xd = input.data();
  for (std::size_t nb = 0; nb < N; ++nb) {
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        T* row = cols->data() + ((nb * Ho + oy) * Wo + ox) * patch;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                          static_cast<std::ptrdiff_t>(pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                            static_cast<std::ptrdiff_t>(pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const T* src = xd.data() + ((nb * H + iy) * W + ix) * C;
            std::copy(src, src + C, row + (ky * KW + kx) * C);
          }
        }
      }
    }
  }
  std::vector<T> out(rows * F);
  MapM<T> om(out.data(), rows, F);
  om.noalias() = MapC<T>(cols->data(), rows, patch) * MapC<T>(weight.data().data(), F, patch).transpose();
  if (bias.defined()) {
    const auto bd = bias.data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < F; ++f) out[r * F + f] += bd[f];
    }
  }
  auto xn = input.node();
  auto wn = weight.node();
  auto bn = bias.defined() ? bias.node() : nullptr;
  std::vector<Tensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(
      Shape{N, Ho, Wo, F}, std::move(out), "conv2d", inputs,
      [=](Node<T>& self) {
        MapC<T> g(self.grad.data(), rows, F);
        if (wants_grad(wn)) {
          wn->ensure_grad();
          MapM<T>(wn->grad.data(), F, patch).noalias() += g.transpose() * MapC<T>(cols->data(), rows, patch);
        }
        if (wants_grad(bn)) {
          bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t f = 0; f < F; ++f) bn->grad[f] += self.grad[r * F + f];
          }
        }
        if (wants_grad(xn)) {
          xn->ensure_grad();
          RowMat<T> dcols = g * MapC<T>(wn->data.data(), F, patch);
          for (std::size_t nb = 0; nb < N; ++nb) {
            for (std::size_t oy = 0; oy < Ho; ++oy) {
              for (std::size_t ox = 0; ox < Wo; ++ox) {
                const T* row = dcols.data() + ((nb * Ho + oy) * Wo + ox) * patch;
                for (std::size_t ky = 0; ky < KH; ++ky) {
                  const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                  static_cast<std::ptrdiff_t>(pad_top);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                  for (std::size_t kx = 0; kx < KW; ++kx) {
                    const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                    static_cast<std::ptrdiff_t>(pad_left);
                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                    T* dst = xn->grad.data() + ((nb * H + iy) * W + ix) * C;
                    const T* src = row + (ky * KW + kx) * C;
                    for (std::size_t c = 0; c < C; ++c) dst[c] += src[c];
                  }
                }
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const auto n = last_dim(x.shape());
  const auto rows = x.numel() / std::max<std::size_t>(n, 1);
  const auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += (o[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) o[i] /= total;
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), "softmax", {x}, [xn, n, rows](Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* g = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < n; ++i) xn->grad[r * n + i] += y[i] * (g[i] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  const auto n = last_dim(x.shape());
  const auto rows = x.numel() / std::max<std::size_t>(n, 1);
  const auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total = 0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(in[i] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = in[i] - lse;
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), "log_softmax", {x},
                        [xn, n, rows](Node<T>& self) {
                          xn->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = self.data.data() + r * n;
                            const T* g = self.grad.data() + r * n;
                            T gsum = 0;
                            for (std::size_t i = 0; i < n; ++i) gsum += g[i];
                            for (std::size_t i = 0; i < n; ++i) {
                              xn->grad[r * n + i] += g[i] - std::exp(y[i]) * gsum;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const auto n = last_dim(x.shape());
  if (gamma.defined() && gamma.numel() != n) shape_error("layer_norm", x.shape(), gamma.shape());
  if (beta.defined() && beta.numel() != n) shape_error("layer_norm", x.shape(), beta.shape());
  const auto rows = x.numel() / std::max<std::size_t>(n, 1);
  const auto xd = x.data();
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T mu = 0;
    for (std::size_t i = 0; i < n; ++i) mu += in[i];
    mu /= T(n);
    T var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mu) * (in[i] - mu);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const T h = (in[i] - mu) * is;
      (*xhat)[r * n + i] = h;
      T v = h;
      if (gamma.defined()) v *= gamma.data()[i];
      if (beta.defined()) v += beta.data()[i];
      out[r * n + i] = v;
    }
  }
  auto xn = x.node();
  auto gn = gamma.defined() ? gamma.node() : nullptr;
  auto bn = beta.defined() ? beta.node() : nullptr;
  std::vector<Tensor<T>> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return make_result<T>(x.shape(), std::move(out), "layer_norm", inputs,
                        [=](Node<T>& self) {
                          if (wants_grad(gn)) gn->ensure_grad();
                          if (wants_grad(bn)) bn->ensure_grad();
                          if (wants_grad(xn)) xn->ensure_grad();
                          std::vector<T> dh(n);
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* g = self.grad.data() + r * n;
                            const T* h = xhat->data() + r * n;
                            T mean_dh = 0, mean_dh_h = 0;
                            for (std::size_t i = 0; i < n; ++i) {
                              if (wants_grad(gn)) gn->grad[i] += g[i] * h[i];
                              if (wants_grad(bn)) bn->grad[i] += g[i];
                              dh[i] = gn ? g[i] * gn->data[i] : g[i];
                              mean_dh += dh[i];
                              mean_dh_h += dh[i] * h[i];
                            }
                            if (!wants_grad(xn)) continue;
                            mean_dh /= T(n);
                            mean_dh_h /= T(n);
                            const T is = (*inv_std)[r];
                            for (std::size_t i = 0; i < n; ++i) {
                              xn->grad[r * n + i] += is * (dh[i] - mean_dh - h[i] * mean_dh_h);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x) {
  const auto n = last_dim(x.shape());
  const auto rows = x.numel() / std::max<std::size_t>(n, 1);
  const auto xd = x.data();
  auto norms = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(x.numel(), T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = 0;
    for (std::size_t i = 0; i < n; ++i) sq += xd[r * n + i] * xd[r * n + i];
    const T nrm = std::sqrt(sq);
    (*norms)[r] = nrm;
    if (nrm == T(0)) {
      ++diagnostics().zero_norm_rows;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) out[r * n + i] = xd[r * n + i] / nrm;
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), std::move(out), "l2_normalize", {x},
                        [xn, norms, n, rows](Node<T>& self) {
                          xn->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T nrm = (*norms)[r];
                            if (nrm == T(0)) continue;
                            const T* y = self.data.data() + r * n;
                            const T* g = self.grad.data() + r * n;
                            T dot = 0;
                            for (std::size_t i = 0; i < n; ++i) dot += y[i] * g[i];
                            for (std::size_t i = 0; i < n; ++i) {
                              xn->grad[r * n + i] += (g[i] - y[i] * dot) / nrm;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape() || a.rank() == 0) shape_error("cosine_similarity", a.shape(), b.shape());
  const auto n = a.shape().back();
  const auto rows = a.numel() / std::max<std::size_t>(n, 1);
  const auto ad = a.data();
  const auto bd = b.data();
  auto na = std::make_shared<std::vector<T>>(rows);
  auto nb = std::make_shared<std::vector<T>>(rows);
  std::vector<T> out(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    T aa = 0, bb = 0, ab = 0;
    for (std::size_t i = 0; i < n; ++i) {
      aa += ad[r * n + i] * ad[r * n + i];
      bb += bd[r * n + i] * bd[r * n + i];
      ab += ad[r * n + i] * bd[r * n + i];
    }
    (*na)[r] = std::sqrt(aa);
    (*nb)[r] = std::sqrt(bb);
    if ((*na)[r] == T(0) || (*nb)[r] == T(0)) {
      ++diagnostics().zero_norm_rows;
      continue;
    }
    out[r] = ab / ((*na)[r] * (*nb)[r]);
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  auto an = a.node();
  auto bn = b.node();
  return make_result<T>(out_shape, std::move(out), "cosine_similarity", {a, b},
                        [an, bn, na, nb, n, rows](Node<T>& self) {
                          if (wants_grad(an)) an->ensure_grad();
                          if (wants_grad(bn)) bn->ensure_grad();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T la = (*na)[r], lb = (*nb)[r];
                            if (la == T(0) || lb == T(0)) continue;
                            const T s = self.data[r];
                            const T g = self.grad[r];
                            for (std::size_t i = 0; i < n; ++i) {
                              const T av = an->data[r * n + i];
                              const T bv = bn->data[r * n + i];
                              if (wants_grad(an)) an->grad[r * n + i] += g * (bv / (la * lb) - s * av / (la * la));
                              if (wants_grad(bn)) bn->grad[r * n + i] += g * (av / (la * lb) - s * bv / (lb * lb));
                            }
                          }
                        });
}

template <typename T>
Tensor<T> huber(const Tensor<T>& pred, const Tensor<T>& target, T delta) {
  if (pred.shape() != target.shape()) shape_error("huber", pred.shape(), target.shape());
  return binary<T>(
      "huber", pred, target,
      [delta](T p, T t) {
        const T d = p - t;
        const T ad = std::abs(d);
        return ad <= delta ? T(0.5) * d * d : delta * (ad - T(0.5) * delta);
      },
      [delta](T p, T t, T) { return std::clamp(p - t, -delta, delta); },
      [delta](T p, T t, T) { return -std::clamp(p - t, -delta, delta); });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& first = parts.front().shape();
  if (axis >= first.size()) shape_error("concat", first, "has no axis " + std::to_string(axis));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    if (s.size() != first.size()) shape_error("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_error("concat", first, s);
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const auto out_row = out_shape[axis] * inner;
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto w = p.shape()[axis] * inner;
    const auto pd = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(pd.begin() + o * w, pd.begin() + (o + 1) * w, out.begin() + o * out_row + off);
    }
    off += w;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    widths.push_back(p.shape()[axis] * inner);
  }
  return make_result<T>(out_shape, std::move(out), "concat", parts,
                        [nodes, widths, offsets, outer, out_row](Node<T>& self) {
                          for (std::size_t k = 0; k < nodes.size(); ++k) {
                            if (!wants_grad(nodes[k])) continue;
                            nodes[k]->ensure_grad();
                            const auto w = widths[k];
                            for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t i = 0; i < w; ++i) {
                                nodes[k]->grad[o * w + i] += self.grad[o * out_row + offsets[k] + i];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) shape_error("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), "reshape", {x}, [xn](Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order) {
  const auto& s = x.shape();
  if (order.size() != s.size()) shape_error("permute", s, "does not match permutation rank");
  std::vector<bool> seen(s.size(), false);
  for (auto o : order) {
    if (o >= s.size() || seen[o]) shape_error("permute", s, "got an invalid permutation");
    seen[o] = true;
  }
  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[order[i]];
  const auto in_strides = strides_of(s);
  const auto n = x.numel();
  // src[i] is the input flat index feeding output flat index i.
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> counter(s.size(), 0);
  std::size_t cur = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (*src)[i] = cur;
    for (std::size_t ax = s.size(); ax-- > 0;) {
      ++counter[ax];
      cur += in_strides[order[ax]];
      if (counter[ax] < out_shape[ax]) break;
      cur -= in_strides[order[ax]] * counter[ax];
      counter[ax] = 0;
    }
  }
  std::vector<T> out(n);
  const auto xd = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = xd[(*src)[i]];
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), "permute", {x}, [xn, src](Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[(*src)[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis0, std::size_t axis1) {
  if (axis0 >= x.rank() || axis1 >= x.rank()) shape_error("transpose", x.shape(), "axis out of range");
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[axis0], order[axis1]);
  return permute(x, order);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto& s = x.shape();
  if (axis >= s.size() || start + length > s[axis]) {
    shape_error("slice", s, "cannot take [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") on axis " + std::to_string(axis));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = length;
  const auto in_row = s[axis] * inner;
  const auto w = length * inner;
  std::vector<T> out(outer * w);
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(xd.begin() + o * in_row + start * inner, xd.begin() + o * in_row + start * inner + w,
              out.begin() + o * w);
  }
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), "slice", {x},
                        [xn, outer, in_row, w, start, inner](Node<T>& self) {
                          xn->ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t i = 0; i < w; ++i) {
                              xn->grad[o * in_row + start * inner + i] += self.grad[o * w + i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index) {
  auto s = slice(x, axis, index, 1);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return reshape(s, out_shape);
}

template <typename T>
Tensor<T> gather_last(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  const auto n = last_dim(x.shape());
  const auto rows = x.numel() / std::max<std::size_t>(n, 1);
  if (index.size() != rows) shape_error("gather_last", x.shape(), "row count differs from index count");
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= n) shape_error("gather_last", x.shape(), "index out of range");
    out[r] = x.data()[r * n + index[r]];
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), "gather_last", {x},
                        [xn, index, n](Node<T>& self) {
                          xn->ensure_grad();
                          for (std::size_t r = 0; r < index.size(); ++r) {
                            xn->grad[r * n + index[r]] += self.grad[r];
                          }
                        });
}

template <typename T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::size_t>& index) {
  if (x.rank() < 1) shape_error("take_rows", x.shape(), "needs at least one axis");
  const auto rows = x.dim(0);
  const auto width = rows == 0 ? 0 : x.numel() / rows;
  std::vector<T> out(index.size() * width);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) shape_error("take_rows", x.shape(), "row index out of range");
    std::copy_n(x.data().begin() + long(index[r] * width), width, out.begin() + long(r * width));
  }
  Shape out_shape = x.shape();
  out_shape[0] = index.size();
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), "take_rows", {x}, [xn, index, width](Node<T>& self) {
    xn->ensure_grad();
    for (std::size_t r = 0; r < index.size(); ++r) {
      for (std::size_t k = 0; k < width; ++k) xn->grad[index[r] * width + k] += self.grad[r * width + k];
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (auto v : x.data()) total += v;
  auto xn = x.node();
  return make_result<T>(Shape{}, std::vector<T>{total}, "sum", {x}, [xn](Node<T>& self) {
    xn->ensure_grad();
    for (auto& g : xn->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) shape_error("mean", x.shape(), "is empty");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, std::size_t axis) {
  const auto& s = x.shape();
  if (axis >= s.size()) shape_error("sum", s, "has no axis " + std::to_string(axis));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const auto len = s[axis];
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<T> out(outer * inner, T(0));
  const auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += xd[(o * len + l) * inner + i];
    }
  }
  auto xn = x.node();
  return make_result<T>(out_shape, std::move(out), "sum_axis", {x},
                        [xn, outer, inner, len](Node<T>& self) {
                          xn->ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t l = 0; l < len; ++l) {
                              for (std::size_t i = 0; i < inner; ++i) {
                                xn->grad[(o * len + l) * inner + i] += self.grad[o * inner + i];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank() || x.dim(axis) == 0) shape_error("mean", x.shape(), "cannot reduce axis");
  return scale(sum(x, axis), T(1) / T(x.dim(axis)));
}

template <typename T>
Tensor<T> stop_gradient(const Tensor<T>& x) {
  return Tensor<T>(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), false);
}

#define MFSC_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> minimum(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                            Padding);                                                           \
  template Tensor<T> relu(const Tensor<T>&);                                                    \
  template Tensor<T> gelu(const Tensor<T>&);                                                    \
  template Tensor<T> exp(const Tensor<T>&);                                                     \
  template Tensor<T> log(const Tensor<T>&);                                                     \
  template Tensor<T> abs(const Tensor<T>&);                                                     \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                                             \
  template Tensor<T> softmax(const Tensor<T>&);                                                 \
  template Tensor<T> log_softmax(const Tensor<T>&);                                             \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);       \
  template Tensor<T> l2_normalize(const Tensor<T>&);                                            \
  template Tensor<T> cosine_similarity(const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> huber(const Tensor<T>&, const Tensor<T>&, T);                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                          \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);                \
  template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);            \
  template Tensor<T> select(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> gather_last(const Tensor<T>&, const std::vector<std::size_t>&);            \
  template Tensor<T> take_rows(const Tensor<T>&, const std::vector<std::size_t>&);              \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> sum(const Tensor<T>&, std::size_t);                                        \
  template Tensor<T> mean(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> stop_gradient(const Tensor<T>&);

MFSC_INSTANTIATE_OPS(float)
MFSC_INSTANTIATE_OPS(double)

}  // namespace mfsc::tensor
