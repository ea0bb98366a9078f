#pragma once

#include <vector>

#include "mfsc/tensor/tensor.hpp"

// Differentiable primitives. Binary elementwise ops broadcast with numpy
// rules (right-aligned extents, size-1 axes stretch). Every op records its
// adjoint when graph recording is enabled.
namespace mfsc::tensor {

enum class Padding { same, valid };

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);

// [..., m, k] x [k, n], or batched [b..., m, k] x [b..., k, n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// NHWC convolution. input [N, H, W, C], weight [F, kh, kw, C], bias [F]
/// (may be undefined). Output [N, Ho, Wo, F].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, Padding padding = Padding::same);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

template <typename T> Tensor<T> softmax(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x);

/// Normalizes over the last axis; gamma and beta ([d]) may be undefined.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

/// Unit-norm rows over the last axis. A zero row maps to zero and bumps
/// diagnostics().zero_norm_rows.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x);

/// Cosine similarity over the last axis; output drops that axis.
template <typename T>
Tensor<T> cosine_similarity(const Tensor<T>& a, const Tensor<T>& b);

/// Elementwise Huber penalty of (pred - target).
template <typename T>
Tensor<T> huber(const Tensor<T>& pred, const Tensor<T>& target, T delta = T(1));

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& order);
template <typename T>
Tensor<T> transpose(const Tensor<T>& x, std::size_t axis0, std::size_t axis1);

/// Contiguous slab [start, start + length) along axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length);
/// Single index along axis; the axis is dropped.
template <typename T> Tensor<T> select(const Tensor<T>& x, std::size_t axis, std::size_t index);
/// Picks x[r, index[r]] from the last axis of x viewed as [rows, n].
template <typename T>
Tensor<T> gather_last(const Tensor<T>& x, const std::vector<std::size_t>& index);

/// Rows of x along axis 0 in the given order; indices may repeat.
template <typename T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::size_t>& index);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis);

/// Value copy that blocks gradient flow.
template <typename T> Tensor<T> stop_gradient(const Tensor<T>& x);

}  // namespace mfsc::tensor
