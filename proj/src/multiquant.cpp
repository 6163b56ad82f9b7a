#include "qnet/multiquant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qnet {

namespace {

QuantizedTensor zero_term(const Tensor& t, const QuantScheme& scheme) {
    QuantizedTensor q;
    q.shape = t.shape();
    q.values.assign(t.numel(), 0);
    q.alpha = 1.0;
    q.delta = 0.0;
    q.scheme = scheme;
    return q;
}

// Residual of t against every term except `skip` (pass -1 to subtract all).
Tensor residual_except(const Tensor& t, const std::vector<QuantizedTensor>& terms, int skip) {
    Tensor r = t;
    float* dst = r.data();
    for (int i = 0; i < static_cast<int>(terms.size()); ++i) {
        if (i == skip) continue;
        const QuantizedTensor& q = terms[i];
        for (std::size_t j = 0; j < q.values.size(); ++j) {
            double rec = static_cast<float>(q.gamma * q.alpha * static_cast<double>(q.values[j]) + q.delta);
            dst[j] = static_cast<float>(static_cast<double>(dst[j]) - rec);
        }
    }
    return r;
}

Tensor reconstruct_terms(const std::vector<QuantizedTensor>& terms) {
    Tensor out(terms.at(0).shape);
    float* dst = out.data();
    for (const QuantizedTensor& q : terms) {
        for (std::size_t j = 0; j < q.values.size(); ++j) {
            double rec = static_cast<float>(q.gamma * q.alpha * static_cast<double>(q.values[j]) + q.delta);
            dst[j] = static_cast<float>(static_cast<double>(dst[j]) + rec);
        }
    }
    return out;
}

// Canonical objective: identical arithmetic to mse(t, result.reconstruct()),
// so the stored mse recomputes bit-for-bit.
double total_mse(const Tensor& t, const std::vector<QuantizedTensor>& terms) {
    return mse(t, reconstruct_terms(terms));
}

} // namespace

Tensor MultiQuantResult::reconstruct() const {
    if (terms.empty()) throw ValidationError("empty multi-quant result");
    return reconstruct_terms(terms);
}

QuantizerFn omse_quantizer(int grid_points) {
    return [grid_points](const Tensor& t, const QuantScheme& s) {
        return omse_grid_search(t, s, grid_points);
    };
}

MultiQuantResult alternating_multi_quantize(const Tensor& t, const std::vector<QuantScheme>& schemes,
                                            const QuantizerFn& phi, double eps, int max_iter) {
    if (schemes.empty()) throw ValidationError("multi-quantization needs at least one scheme");
    if (max_iter < 1) throw ValidationError("multi-quantization needs at least one sweep");
    t.require_finite("multi-quantize");

    MultiQuantResult res;
    res.terms.reserve(schemes.size());
    for (const QuantScheme& s : schemes) res.terms.push_back(zero_term(t, s));

    const int n = static_cast<int>(schemes.size());
    double prev = total_mse(t, res.terms);   // == mse against zero
    double running = prev;
    for (int sweep = 0; sweep < max_iter; ++sweep) {
        for (int j = 0; j < n; ++j) {
            Tensor r = residual_except(t, res.terms, j);
            QuantResult cand = phi(r, schemes[j]);
            // phi searches a grid tied to the current residual, so the old
            // term may lie off that grid; keep whichever side wins on the
            // canonical objective.
            QuantizedTensor saved = res.terms[j];
            res.terms[j] = cand.quantized;
            double with_cand = total_mse(t, res.terms);
            if (with_cand <= running) {
                running = with_cand;
            } else {
                res.terms[j] = std::move(saved);
            }
        }
        res.iterations = sweep + 1;
        double cur = running;
        if (prev > 0.0 && (prev - cur) / prev < eps) {
            res.converged = true;
            prev = cur;
            break;
        }
        if (cur == 0.0) {
            res.converged = true;
            prev = cur;
            break;
        }
        prev = cur;
    }
    res.mse = prev;
    return res;
}

namespace {

struct DualRanges {
    int lo1, hi1, lo2, hi2;
};

// Canonical per-element error of the pair (v1, v2) at fixed scales: the exact
// value the reconstruction-based MSE recomputes to (float-narrowed terms).
inline double dual_elem_err(double x, double a1, int v1, double a2, double v2) {
    double r1 = static_cast<float>(a1 * static_cast<double>(v1));
    double r2 = static_cast<float>(a2 * v2);
    double rec = static_cast<float>(r1 + r2);
    double d = x - rec;
    return d * d;
}

// Elementwise-optimal (v1, v2) under the canonical error. For each v1 the
// real-valued optimum of v2 is rounded, and both neighbor integers are
// checked so float narrowing cannot flip the choice.
inline double dual_best_elem(double x, double a1, double a2, const DualRanges& r, int* out_v1,
                             int* out_v2) {
    double best = std::numeric_limits<double>::infinity();
    for (int v1 = r.lo1; v1 <= r.hi1; ++v1) {
        double target = (x - a1 * v1) / a2;
        double v2a = std::clamp(std::floor(target), static_cast<double>(r.lo2),
                                static_cast<double>(r.hi2));
        double v2b = std::clamp(v2a + 1.0, static_cast<double>(r.lo2),
                                static_cast<double>(r.hi2));
        for (double v2 : {v2a, v2b}) {
            double e2 = dual_elem_err(x, a1, v1, a2, v2);
            if (e2 < best) {
                best = e2;
                if (out_v1) *out_v1 = v1;
                if (out_v2) *out_v2 = static_cast<int>(v2);
            }
        }
    }
    return best;
}

} // namespace

MultiQuantResult dual_line_search(const Tensor& t, const QuantScheme& scheme1,
                                  const QuantScheme& scheme2, int grid_points,
                                  const std::vector<std::pair<double, double>>& extra_pairs) {
    if (grid_points < 2) throw ValidationError("dual line search grid needs at least 2 points");
    t.require_finite("dual line search");
    scheme1.validate();
    scheme2.validate();

    const auto [lo1, hi1] = quant_range(scheme1);
    const auto [lo2, hi2] = quant_range(scheme2);
    const DualRanges ranges{lo1, hi1, lo2, hi2};
    const double alpha_max1 = uniform_alpha(t, scheme1);
    const double alpha_max2 = uniform_alpha(t, scheme2);
    const std::size_t n = t.numel();
    const float* src = t.data();

    MultiQuantResult res;
    res.terms = {zero_term(t, scheme1), zero_term(t, scheme2)};
    if (!(alpha_max1 > 0.0) || !(alpha_max2 > 0.0)) {
        // Degenerate (all-zero) input: the zero terms reconstruct it exactly.
        res.mse = total_mse(t, res.terms);
        res.converged = true;
        return res;
    }

    std::vector<std::pair<double, double>> candidates;
    candidates.reserve(static_cast<std::size_t>(grid_points) * grid_points + extra_pairs.size());
    for (int k1 = 1; k1 <= grid_points; ++k1) {
        const double a1 = alpha_max1 * (static_cast<double>(k1) / grid_points);
        for (int k2 = 1; k2 <= grid_points; ++k2) {
            const double a2 = alpha_max2 * (static_cast<double>(k2) / grid_points);
            candidates.emplace_back(a1, a2);
        }
    }
    for (const auto& [a1, a2] : extra_pairs) candidates.emplace_back(a1, a2);

    double best_obj = std::numeric_limits<double>::infinity();
    double best_a1 = alpha_max1, best_a2 = alpha_max2;
    for (const auto& [a1, a2] : candidates) {
        if (!(a1 > 0.0) || !(a2 > 0.0)) continue;
        double obj = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            obj += dual_best_elem(src[j], a1, a2, ranges, nullptr, nullptr);
            if (obj >= best_obj) break;   // cannot beat the incumbent
        }
        if (obj < best_obj) {
            best_obj = obj;
            best_a1 = a1;
            best_a2 = a2;
        }
    }

    // Re-derive the integer assignments at the winning pair.
    QuantizedTensor q1 = zero_term(t, scheme1);
    QuantizedTensor q2 = zero_term(t, scheme2);
    q1.alpha = best_a1;
    q2.alpha = best_a2;
    for (std::size_t j = 0; j < n; ++j) {
        int v1 = 0, v2 = 0;
        dual_best_elem(src[j], best_a1, best_a2, ranges, &v1, &v2);
        q1.values[j] = static_cast<std::int8_t>(v1);
        q2.values[j] = static_cast<std::int8_t>(v2);
    }
    res.terms = {std::move(q1), std::move(q2)};
    res.mse = total_mse(t, res.terms);
    res.converged = true;
    res.iterations = 1;
    return res;
}

double dual_objective_mse(const Tensor& t, double alpha1, double alpha2,
                          const QuantScheme& scheme1, const QuantScheme& scheme2) {
    if (!(alpha1 > 0.0) || !(alpha2 > 0.0)) throw ValidationError("dual objective needs positive scales");
    const auto [lo1, hi1] = quant_range(scheme1);
    const auto [lo2, hi2] = quant_range(scheme2);
    const DualRanges ranges{lo1, hi1, lo2, hi2};
    double obj = 0.0;
    for (std::size_t j = 0; j < t.numel(); ++j)
        obj += dual_best_elem(t[j], alpha1, alpha2, ranges, nullptr, nullptr);
    return obj / static_cast<double>(t.numel());
}

std::set<int> select_key_layers(const std::map<int, double>& per_layer_mse, double tau) {
    std::set<int> keys;
    for (const auto& [layer, m] : per_layer_mse)
        if (m > tau) keys.insert(layer);
    return keys;
}

} // namespace qnet
