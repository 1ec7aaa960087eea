#pragma once

#include <cstddef>

#include "merob/tensor.hpp"

namespace merob {

// All binary operations require identical shapes unless stated otherwise and
// throw DimensionError naming both shapes on mismatch.

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Cross-correlation with zero padding. Accepts a single image [C,H,W] or a
/// batch [N,C,H,W]; the output has the same rank as the input.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 std::size_t padding, std::size_t stride);

/// Per-window maximum over [C,H,W] or [N,C,H,W]. The gradient goes to the
/// first maximal element of each window in row-major order.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t window, std::size_t stride);

/// [N,C,H,W] -> [N,C] (or [C,H,W] -> [C]).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

/// x[N,M] + bias[M] broadcast over rows.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Elementwise sign in {-1, 0, +1}; not differentiable, never records.
template <typename T>
Tensor<T> sign(const Tensor<T>& x);

/// Elementwise projection onto [lo, hi]. Gradient passes where lo <= x <= hi.
template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi);

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

struct ConvGeometry {
  std::size_t out_h;
  std::size_t out_w;
};

/// Output size of a conv/pool window sweep; throws DimensionError when the
/// window does not fit the padded input.
ConvGeometry conv_output_size(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                              std::size_t padding, std::size_t stride);

namespace fault {
/// Test hook: negates the input gradient of conv2d so gradient checks can be
/// shown to fail. Never enabled outside tests.
void set_conv_backward_sign_flip(bool enabled);
bool conv_backward_sign_flip();
}  // namespace fault

}  // namespace merob
