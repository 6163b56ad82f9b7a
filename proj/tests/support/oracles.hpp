#pragma once

// Independent oracles for the test and acceptance suites. These deliberately
// avoid the library's search/projection code paths: integer assignments come
// from exhaustive enumeration, convolutions from an im2col matrix product.

#include "qnet/netmodel.hpp"
#include "qnet/quantizer.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

struct ScanResult {
    double alpha = 0.0;
    double mse = std::numeric_limits<double>::infinity();
};

// Error of quantizing `t` at a fixed scale where every element picks its best
// integer by brute force (no rounding rule involved). The reconstruction is
// narrowed through float exactly like the library's dequantize.
inline double brute_force_mse_at(const qnet::Tensor& t, double alpha, double delta,
                                 const qnet::QuantScheme& scheme) {
    const auto [lo, hi] = qnet::quant_range(scheme);
    double acc = 0.0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const double x = t[i];
        double best = std::numeric_limits<double>::infinity();
        for (int v = lo; v <= hi; ++v) {
            double rec = static_cast<float>(alpha * static_cast<double>(v) + delta);
            double d = x - rec;
            best = std::min(best, d * d);
        }
        acc += best;
    }
    return acc / static_cast<double>(t.numel());
}

// Dense scan over n_points scales in (0, alpha_max], rounding-free.
inline ScanResult dense_scan(const qnet::Tensor& t, const qnet::QuantScheme& scheme, int n_points) {
    const double alpha_max = qnet::uniform_alpha(t, scheme);
    const double delta = qnet::search_delta(t, scheme);
    ScanResult best;
    for (int k = 1; k <= n_points; ++k) {
        double alpha = alpha_max * (static_cast<double>(k) / n_points);
        double m = brute_force_mse_at(t, alpha, delta, scheme);
        if (m < best.mse) {
            best.mse = m;
            best.alpha = alpha;
        }
    }
    return best;
}

// Independent grid x rounding scan: same search space as the library's line
// search, written against libm's round (ties away from zero) rather than the
// library's projection.
inline ScanResult round_scan(const qnet::Tensor& t, const qnet::QuantScheme& scheme, int n_points) {
    const auto [lo, hi] = qnet::quant_range(scheme);
    const double alpha_max = qnet::uniform_alpha(t, scheme);
    const double delta = qnet::search_delta(t, scheme);
    ScanResult best;
    for (int k = 1; k <= n_points; ++k) {
        const double alpha = alpha_max * (static_cast<double>(k) / n_points);
        double acc = 0.0;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double x = t[i];
            double v = std::round((x - delta) / alpha);
            if (v < lo) v = lo;
            if (v > hi) v = hi;
            double rec = static_cast<float>(alpha * v + delta);
            double d = x - rec;
            acc += d * d;
        }
        double m = acc / static_cast<double>(t.numel());
        if (m < best.mse) {
            best.mse = m;
            best.alpha = alpha;
        }
    }
    return best;
}

// Exhaustive dual search: joint scale grid (f32 points, like the library's)
// and all integer pairs per element, scored on the reconstruction the library
// reports (per-term float narrowing).
inline double dual_brute_force(const qnet::Tensor& t, const qnet::QuantScheme& s1,
                               const qnet::QuantScheme& s2, int grid_points) {
    const auto [lo1, hi1] = qnet::quant_range(s1);
    const auto [lo2, hi2] = qnet::quant_range(s2);
    const double a1_max = qnet::uniform_alpha(t, s1);
    const double a2_max = qnet::uniform_alpha(t, s2);
    double best_obj = std::numeric_limits<double>::infinity();
    for (int k1 = 1; k1 <= grid_points; ++k1) {
        const double a1 = a1_max * (static_cast<double>(k1) / grid_points);
        for (int k2 = 1; k2 <= grid_points; ++k2) {
            const double a2 = a2_max * (static_cast<double>(k2) / grid_points);
            double obj = 0.0;
            for (std::size_t j = 0; j < t.numel(); ++j) {
                const double x = t[j];
                double best_elem = std::numeric_limits<double>::infinity();
                for (int v1 = lo1; v1 <= hi1; ++v1) {
                    double r1 = static_cast<float>(a1 * static_cast<double>(v1));
                    for (int v2 = lo2; v2 <= hi2; ++v2) {
                        double r2 = static_cast<float>(a2 * static_cast<double>(v2));
                        double d = x - static_cast<double>(static_cast<float>(r1 + r2));
                        best_elem = std::min(best_elem, d * d);
                    }
                }
                obj += best_elem;
            }
            best_obj = std::min(best_obj, obj);
        }
    }
    return best_obj / static_cast<double>(t.numel());
}

// im2col convolution: builds the patch matrix and multiplies, a different
// algorithm than the library's direct loops.
inline qnet::Tensor conv2d_im2col(const qnet::Tensor& x, const qnet::Tensor& w,
                                  const qnet::Tensor& bias, int stride, int pad) {
    const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const std::size_t oh = (H + 2 * pad - kh) / stride + 1;
    const std::size_t ow = (W + 2 * pad - kw) / stride + 1;
    const std::size_t patch = C * kh * kw;

    std::vector<double> cols(patch * oh * ow, 0.0);
    for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
            std::size_t col = oy * ow + ox;
            std::size_t row = 0;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t ky = 0; ky < kh; ++ky)
                    for (std::size_t kx = 0; kx < kw; ++kx, ++row) {
                        std::int64_t iy = static_cast<std::int64_t>(oy) * stride - pad + ky;
                        std::int64_t ix = static_cast<std::int64_t>(ox) * stride - pad + kx;
                        if (iy < 0 || iy >= static_cast<std::int64_t>(H) || ix < 0 ||
                            ix >= static_cast<std::int64_t>(W))
                            continue;
                        cols[row * oh * ow + col] = x[(c * H + iy) * W + ix];
                    }
        }

    qnet::Tensor out({K, oh, ow});
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t col = 0; col < oh * ow; ++col) {
            double acc = bias.numel() ? bias[k] : 0.0;
            for (std::size_t row = 0; row < patch; ++row)
                acc += static_cast<double>(w[k * patch + row]) * cols[row * oh * ow + col];
            out[k * oh * ow + col] = static_cast<float>(acc);
        }
    return out;
}

inline double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-300});
}

inline double rel_l2(const qnet::Tensor& a, const qnet::Tensor& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        num += d * d;
        double r = b[i];
        den += r * r;
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

} // namespace oracle
