#include "qnet/ops.hpp"

#include <algorithm>
#include <limits>

namespace qnet::ops {

namespace {

void check_chw(const Tensor& x, const char* what) {
    if (x.rank() != 3) throw ValidationError(std::string(what) + ": expected CHW input");
}

} // namespace

std::size_t out_dim(std::size_t extent, int window, int stride, int pad) {
    if (window < 1 || stride < 1 || pad < 0) throw ValidationError("bad window/stride/padding");
    std::int64_t e = static_cast<std::int64_t>(extent) + 2 * pad - window;
    if (e < 0) throw ValidationError("window larger than padded input");
    return static_cast<std::size_t>(e / stride) + 1;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    check_chw(x, "conv2d");
    if (w.rank() != 4) throw ValidationError("conv2d: expected KCHW weights");
    const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t K = w.extent(0), kc = w.extent(1), kh = w.extent(2), kw = w.extent(3);
    if (kc != C) throw ValidationError("conv2d: channel mismatch");
    if (bias.numel() != 0 && bias.numel() != K) throw ValidationError("conv2d: bias size mismatch");
    const std::size_t oh = out_dim(H, static_cast<int>(kh), stride, pad);
    const std::size_t ow = out_dim(W, static_cast<int>(kw), stride, pad);

    Tensor out({K, oh, ow});
    const float* xs = x.data();
    const float* ws = w.data();
    const float* bs = bias.numel() ? bias.data() : nullptr;
    float* os = out.data();
    for (std::size_t k = 0; k < K; ++k) {
        const float* wk = ws + k * C * kh * kw;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = bs ? static_cast<double>(bs[k]) : 0.0;
                const std::int64_t iy0 = static_cast<std::int64_t>(oy) * stride - pad;
                const std::int64_t ix0 = static_cast<std::int64_t>(ox) * stride - pad;
                for (std::size_t c = 0; c < C; ++c) {
                    const float* xc = xs + c * H * W;
                    const float* wc = wk + c * kh * kw;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = iy0 + static_cast<std::int64_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::int64_t>(H)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ix0 + static_cast<std::int64_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::int64_t>(W)) continue;
                            acc += static_cast<double>(xc[iy * W + ix]) *
                                   static_cast<double>(wc[ky * kw + kx]);
                        }
                    }
                }
                os[(k * oh + oy) * ow + ox] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& w,
                             const std::vector<std::size_t>& in_shape, int stride, int pad) {
    if (grad_out.rank() != 3 || w.rank() != 4 || in_shape.size() != 3)
        throw ValidationError("conv2d_backward_input: bad ranks");
    const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
    const std::size_t K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const std::size_t oh = grad_out.extent(1), ow = grad_out.extent(2);

    // Accumulate in double, then narrow once.
    std::vector<double> acc(C * H * W, 0.0);
    const float* gs = grad_out.data();
    const float* ws = w.data();
    for (std::size_t k = 0; k < K; ++k) {
        const float* wk = ws + k * C * kh * kw;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double g = gs[(k * oh + oy) * ow + ox];
                if (g == 0.0) continue;
                const std::int64_t iy0 = static_cast<std::int64_t>(oy) * stride - pad;
                const std::int64_t ix0 = static_cast<std::int64_t>(ox) * stride - pad;
                for (std::size_t c = 0; c < C; ++c) {
                    const float* wc = wk + c * kh * kw;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = iy0 + static_cast<std::int64_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::int64_t>(H)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ix0 + static_cast<std::int64_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::int64_t>(W)) continue;
                            acc[(c * H + iy) * W + ix] += g * static_cast<double>(wc[ky * kw + kx]);
                        }
                    }
                }
            }
        }
    }
    Tensor out({C, H, W});
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    if (w.rank() != 2) throw ValidationError("linear: expected out x in weights");
    const std::size_t out_f = w.extent(0), in_f = w.extent(1);
    if (x.numel() != in_f) throw ValidationError("linear: input size mismatch");
    if (bias.numel() != 0 && bias.numel() != out_f) throw ValidationError("linear: bias size mismatch");
    Tensor out({out_f});
    const float* xs = x.data();
    const float* ws = w.data();
    for (std::size_t o = 0; o < out_f; ++o) {
        double acc = bias.numel() ? static_cast<double>(bias[o]) : 0.0;
        const float* row = ws + o * in_f;
        for (std::size_t i = 0; i < in_f; ++i)
            acc += static_cast<double>(row[i]) * static_cast<double>(xs[i]);
        out[o] = static_cast<float>(acc);
    }
    return out;
}

Tensor linear_backward_input(const Tensor& grad_out, const Tensor& w) {
    const std::size_t out_f = w.extent(0), in_f = w.extent(1);
    if (grad_out.numel() != out_f) throw ValidationError("linear_backward_input: size mismatch");
    Tensor out({in_f});
    std::vector<double> acc(in_f, 0.0);
    const float* gs = grad_out.data();
    const float* ws = w.data();
    for (std::size_t o = 0; o < out_f; ++o) {
        const double g = gs[o];
        const float* row = ws + o * in_f;
        for (std::size_t i = 0; i < in_f; ++i) acc[i] += g * static_cast<double>(row[i]);
    }
    for (std::size_t i = 0; i < in_f; ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0f) out[i] = 0.0f;
    return out;
}

Tensor relu_backward(const Tensor& grad_out, const Tensor& x_pre) {
    if (!same_shape(grad_out, x_pre)) throw ValidationError("relu_backward: shape mismatch");
    Tensor out = grad_out;
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (x_pre[i] <= 0.0f) out[i] = 0.0f;
    return out;
}

Tensor maxpool(const Tensor& x, int window, int stride, std::vector<std::size_t>* argmax) {
    check_chw(x, "maxpool");
    const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t oh = out_dim(H, window, stride, 0);
    const std::size_t ow = out_dim(W, window, stride, 0);
    Tensor out({C, oh, ow});
    if (argmax) argmax->assign(C * oh * ow, 0);
    const float* xs = x.data();
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                float best = -std::numeric_limits<float>::infinity();
                std::size_t best_idx = 0;
                for (int ky = 0; ky < window; ++ky) {
                    for (int kx = 0; kx < window; ++kx) {
                        std::size_t iy = oy * stride + ky;
                        std::size_t ix = ox * stride + kx;
                        std::size_t idx = (c * H + iy) * W + ix;
                        if (xs[idx] > best) {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                }
                std::size_t o = (c * oh + oy) * ow + ox;
                out[o] = best;
                if (argmax) (*argmax)[o] = best_idx;
            }
        }
    }
    return out;
}

Tensor maxpool_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                        const std::vector<std::size_t>& in_shape) {
    if (grad_out.numel() != argmax.size()) throw ValidationError("maxpool_backward: size mismatch");
    Tensor out = Tensor::zeros(in_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o)
        out[argmax[o]] = static_cast<float>(static_cast<double>(out[argmax[o]]) + grad_out[o]);
    return out;
}

Tensor avgpool(const Tensor& x, int window, int stride) {
    check_chw(x, "avgpool");
    const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t oh = out_dim(H, window, stride, 0);
    const std::size_t ow = out_dim(W, window, stride, 0);
    const double inv = 1.0 / (static_cast<double>(window) * window);
    Tensor out({C, oh, ow});
    const float* xs = x.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx)
                        acc += xs[(c * H + oy * stride + ky) * W + ox * stride + kx];
                out[(c * oh + oy) * ow + ox] = static_cast<float>(acc * inv);
            }
    return out;
}

Tensor avgpool_backward(const Tensor& grad_out, int window, int stride,
                        const std::vector<std::size_t>& in_shape) {
    const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
    const std::size_t oh = grad_out.extent(1), ow = grad_out.extent(2);
    const double inv = 1.0 / (static_cast<double>(window) * window);
    std::vector<double> acc(C * H * W, 0.0);
    const float* gs = grad_out.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double g = gs[(c * oh + oy) * ow + ox] * inv;
                for (int ky = 0; ky < window; ++ky)
                    for (int kx = 0; kx < window; ++kx)
                        acc[(c * H + oy * stride + ky) * W + ox * stride + kx] += g;
            }
    Tensor out({C, H, W});
    for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

std::vector<std::int64_t> conv2d_int(const std::int8_t* x, const std::vector<std::size_t>& x_shape,
                                     const std::int8_t* w, const std::vector<std::size_t>& w_shape,
                                     int stride, int pad) {
    const std::size_t C = x_shape[0], H = x_shape[1], W = x_shape[2];
    const std::size_t kc = w_shape[0], kh = w_shape[1], kw = w_shape[2];
    if (kc != C) throw ValidationError("conv2d_int: channel mismatch");
    const std::size_t oh = out_dim(H, static_cast<int>(kh), stride, pad);
    const std::size_t ow = out_dim(W, static_cast<int>(kw), stride, pad);
    std::vector<std::int64_t> out(oh * ow, 0);
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            std::int64_t acc = 0;
            const std::int64_t iy0 = static_cast<std::int64_t>(oy) * stride - pad;
            const std::int64_t ix0 = static_cast<std::int64_t>(ox) * stride - pad;
            for (std::size_t c = 0; c < C; ++c) {
                const std::int8_t* xc = x + c * H * W;
                const std::int8_t* wc = w + c * kh * kw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::int64_t iy = iy0 + static_cast<std::int64_t>(ky);
                    if (iy < 0 || iy >= static_cast<std::int64_t>(H)) continue;
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::int64_t ix = ix0 + static_cast<std::int64_t>(kx);
                        if (ix < 0 || ix >= static_cast<std::int64_t>(W)) continue;
                        acc += static_cast<std::int64_t>(xc[iy * W + ix]) *
                               static_cast<std::int64_t>(wc[ky * kw + kx]);
                    }
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
    return out;
}

std::vector<std::int64_t> window_sum_int(const std::int8_t* x, const std::vector<std::size_t>& x_shape,
                                         const std::vector<std::size_t>& w_shape, int stride, int pad) {
    std::vector<std::int8_t> ones(w_shape[0] * w_shape[1] * w_shape[2], 1);
    return conv2d_int(x, x_shape, ones.data(), w_shape, stride, pad);
}

std::vector<std::int64_t> window_count(const std::vector<std::size_t>& x_shape,
                                       const std::vector<std::size_t>& w_shape, int stride, int pad) {
    std::vector<std::int8_t> xones(x_shape[0] * x_shape[1] * x_shape[2], 1);
    return window_sum_int(xones.data(), x_shape, w_shape, stride, pad);
}

std::vector<std::int64_t> kernel_valid_sum(const std::int8_t* w, const std::vector<std::size_t>& w_shape,
                                           const std::vector<std::size_t>& x_shape, int stride, int pad) {
    std::vector<std::int8_t> xones(x_shape[0] * x_shape[1] * x_shape[2], 1);
    return conv2d_int(xones.data(), x_shape, w, w_shape, stride, pad);
}

} // namespace qnet::ops
