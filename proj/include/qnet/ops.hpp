#pragma once

#include "qnet/tensor.hpp"

#include <cstdint>
#include <vector>

namespace qnet::ops {

// (extent + 2*pad - window) / stride + 1, floor semantics; throws when the
// window does not fit.
std::size_t out_dim(std::size_t extent, int window, int stride, int pad);

// x: CHW, w: KCHW, bias: K (empty tensor = no bias). Accumulates in double.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad);

// Gradient of conv2d w.r.t. its input for a given output gradient.
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& w,
                             const std::vector<std::size_t>& in_shape, int stride, int pad);

// x: flat in-features, w: out x in.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor linear_backward_input(const Tensor& grad_out, const Tensor& w);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& grad_out, const Tensor& x_pre);

// Square-window pooling, no padding. argmax (when non-null) receives the flat
// input index that produced each output element, for gradient routing.
Tensor maxpool(const Tensor& x, int window, int stride, std::vector<std::size_t>* argmax = nullptr);
Tensor maxpool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                        const std::vector<std::size_t>& in_shape);

Tensor avgpool(const Tensor& x, int window, int stride);
Tensor avgpool_backward(const Tensor& grad_out, int window, int stride,
                        const std::vector<std::size_t>& in_shape);

// Integer convolution of one int8 kernel slice over an int8 input plane,
// 64-bit accumulation. Shapes mirror conv2d with K = 1.
std::vector<std::int64_t> conv2d_int(const std::int8_t* x, const std::vector<std::size_t>& x_shape,
                                     const std::int8_t* w, const std::vector<std::size_t>& w_shape,
                                     int stride, int pad);

// Window sums of the input plane (ones-kernel convolution) and count of valid
// (non-padding) taps per output position; both shared across kernels.
std::vector<std::int64_t> window_sum_int(const std::int8_t* x, const std::vector<std::size_t>& x_shape,
                                         const std::vector<std::size_t>& w_shape, int stride, int pad);
std::vector<std::int64_t> window_count(const std::vector<std::size_t>& x_shape,
                                       const std::vector<std::size_t>& w_shape, int stride, int pad);

// Per-position sum of kernel taps that land inside the input (the kernel
// convolved with a ones-plane); equals the plain kernel sum without padding.
std::vector<std::int64_t> kernel_valid_sum(const std::int8_t* w, const std::vector<std::size_t>& w_shape,
                                           const std::vector<std::size_t>& x_shape, int stride, int pad);

} // namespace qnet::ops
