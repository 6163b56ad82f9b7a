#include "qnet/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qnet {

const char* to_string(QuantMethod m) {
    switch (m) {
        case QuantMethod::uniform: return "uniform";
        case QuantMethod::omse: return "omse";
        case QuantMethod::golden: return "golden";
        case QuantMethod::alternating: return "alternating";
    }
    return "?";
}

QuantMethod quant_method_from_string(const std::string& s) {
    if (s == "uniform") return QuantMethod::uniform;
    if (s == "omse") return QuantMethod::omse;
    if (s == "golden") return QuantMethod::golden;
    if (s == "alternating") return QuantMethod::alternating;
    throw ValidationError("unknown quantization method: " + s);
}

namespace {

void check_input(const Tensor& t, const QuantScheme& scheme) {
    scheme.validate();
    if (t.numel() == 0) throw ValidationError("cannot quantize empty tensor");
    t.require_finite("quantize");
    if (!scheme.is_signed && !scheme.offset_enabled && t.min() < 0.0f)
        throw ValidationError("unsigned scheme without offset requires non-negative input");
}

// Degenerate-input convention (all-zero or constant tensors): alpha = 1 and
// the projection at the fixed delta, which reconstructs exactly.
QuantResult degenerate_result(const Tensor& t, const QuantScheme& scheme, QuantMethod method) {
    QuantResult r;
    r.method = method;
    r.degenerate = true;
    r.quantized = project(t, 1.0, search_delta(t, scheme), scheme);
    r.mse = reconstruction_mse(t, r.quantized);
    return r;
}

QuantResult finish(const Tensor& t, const QuantScheme& scheme, double alpha, double delta,
                   QuantMethod method) {
    QuantResult r;
    r.method = method;
    r.quantized = project(t, alpha, delta, scheme);
    r.mse = reconstruction_mse(t, r.quantized);
    return r;
}

} // namespace

double search_delta(const Tensor& t, const QuantScheme& scheme) {
    return scheme.offset_enabled ? static_cast<double>(t.min()) : 0.0;
}

double uniform_alpha(const Tensor& t, const QuantScheme& scheme) {
    const auto [lo, hi] = quant_range(scheme);
    if (scheme.offset_enabled) {
        double delta = static_cast<double>(t.min());
        return (static_cast<double>(t.max()) - delta) / static_cast<double>(hi - lo);
    }
    return static_cast<double>(t.abs_max()) / static_cast<double>(hi);
}

double projection_mse(const Tensor& t, double alpha, double delta, const QuantScheme& scheme) {
    const auto [lo, hi] = quant_range(scheme);
    const double dlo = lo, dhi = hi;
    double acc = 0.0;
    const float* src = t.data();
    const std::size_t n = t.numel();
    for (std::size_t i = 0; i < n; ++i) {
        double x = src[i];
        double v = detail::round_half_away((x - delta) / alpha);
        v = std::clamp(v, dlo, dhi);
        // Same float narrowing as dequantize(), so searches rank candidates by
        // the exact value the stored mse will recompute to.
        double rec = static_cast<float>(alpha * v + delta);
        double d = x - rec;
        acc += d * d;
    }
    return acc / static_cast<double>(n);
}

QuantResult uniform_quantize(const Tensor& t, const QuantScheme& scheme) {
    check_input(t, scheme);
    double alpha = uniform_alpha(t, scheme);
    if (!(alpha > 0.0)) return degenerate_result(t, scheme, QuantMethod::uniform);
    return finish(t, scheme, alpha, search_delta(t, scheme), QuantMethod::uniform);
}

QuantResult omse_grid_search(const Tensor& t, const QuantScheme& scheme, int grid_points,
                             const std::vector<double>& extra_alphas) {
    check_input(t, scheme);
    if (grid_points < 2) throw ValidationError("omse grid needs at least 2 points");
    const double alpha_max = uniform_alpha(t, scheme);
    if (!(alpha_max > 0.0)) {
        QuantResult r = degenerate_result(t, scheme, QuantMethod::omse);
        r.grid_points = grid_points;
        return r;
    }
    const double delta = search_delta(t, scheme);

    double best_alpha = alpha_max;
    double best_mse = std::numeric_limits<double>::infinity();
    // Ascending alpha with strict improvement keeps the smallest alpha on ties.
    for (int k = 1; k <= grid_points; ++k) {
        double alpha = alpha_max * (static_cast<double>(k) / grid_points);
        double m = projection_mse(t, alpha, delta, scheme);
        if (m < best_mse) {
            best_mse = m;
            best_alpha = alpha;
        }
    }
    for (double alpha : extra_alphas) {
        if (!(alpha > 0.0)) continue;
        double m = projection_mse(t, alpha, delta, scheme);
        if (m < best_mse) {
            best_mse = m;
            best_alpha = alpha;
        }
    }
    QuantResult r = finish(t, scheme, best_alpha, delta, QuantMethod::omse);
    r.grid_points = grid_points;
    return r;
}

QuantResult golden_section_quantize(const Tensor& t, const QuantScheme& scheme, double tol) {
    check_input(t, scheme);
    if (!(tol > 0.0)) throw ValidationError("golden section tolerance must be positive");
    const double alpha_max = uniform_alpha(t, scheme);
    if (!(alpha_max > 0.0)) return degenerate_result(t, scheme, QuantMethod::golden);
    const double delta = search_delta(t, scheme);

    auto eval = [&](double alpha) { return projection_mse(t, alpha, delta, scheme); };
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = 0.0, b = alpha_max;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = eval(c);
    double fd = eval(d);

    double best_alpha = (fc <= fd) ? c : d;
    double best_mse = std::min(fc, fd);

    while ((b - a) > tol * alpha_max) {
        if (fc < fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = eval(c);
            if (fc < best_mse) {
                best_mse = fc;
                best_alpha = c;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = eval(d);
            if (fd < best_mse) {
                best_mse = fd;
                best_alpha = d;
            }
        }
    }
    return finish(t, scheme, best_alpha, delta, QuantMethod::golden);
}

QuantResult alternating_quantize(const Tensor& t, const QuantScheme& scheme, int max_iter) {
    check_input(t, scheme);
    if (max_iter < 1) throw ValidationError("alternating needs at least 1 iteration");
    double alpha = uniform_alpha(t, scheme);
    if (!(alpha > 0.0)) return degenerate_result(t, scheme, QuantMethod::alternating);
    const double delta = search_delta(t, scheme);

    int iters = 0;
    bool collapsed = false;
    for (; iters < max_iter; ++iters) {
        QuantizedTensor q = project(t, alpha, delta, scheme);
        double num = 0.0, den = 0.0;
        const float* src = t.data();
        for (std::size_t i = 0; i < q.values.size(); ++i) {
            double v = q.values[i];
            num += (static_cast<double>(src[i]) - delta) * v;
            den += v * v;
        }
        if (den == 0.0 || !(num > 0.0)) {
            // Projection collapsed to zero (or a non-positive scale estimate);
            // keep the current iterate and flag it.
            collapsed = true;
            break;
        }
        double next = num / den;
        if (!(next > 0.0)) {
            collapsed = true;
            break;
        }
        if (std::fabs(next - alpha) < 1e-8 * std::fabs(alpha)) {
            alpha = next;
            ++iters;
            break;
        }
        alpha = next;
    }
    QuantResult r = finish(t, scheme, alpha, delta, QuantMethod::alternating);
    r.iterations = iters;
    r.degenerate = collapsed;
    return r;
}

QuantResult quantize_with(QuantMethod method, const Tensor& t, const QuantScheme& scheme,
                          int grid_points) {
    switch (method) {
        case QuantMethod::uniform: return uniform_quantize(t, scheme);
        case QuantMethod::omse: return omse_grid_search(t, scheme, grid_points);
        case QuantMethod::golden: return golden_section_quantize(t, scheme);
        case QuantMethod::alternating: return alternating_quantize(t, scheme);
    }
    throw ValidationError("unknown quantization method");
}

} // namespace qnet
