#include "qnet/activations.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace qnet {

const LayerCalibration& CalibrationStats::for_layer(std::size_t layer) const {
    for (const LayerCalibration& lc : layers)
        if (lc.layer == layer) return lc;
    throw ValidationError("no calibration entry for layer " + std::to_string(layer));
}

CalibrationStats collect_activations(const NetworkModel& model, const std::vector<Tensor>& calib_inputs,
                                     std::size_t reservoir_cap, std::uint64_t seed) {
    if (calib_inputs.empty()) throw ValidationError("empty calibration set");
    for (const Tensor& t : calib_inputs)
        if (t.shape() != model.input_shape())
            throw ValidationError("calibration sample shape mismatch");

    std::vector<std::size_t> weighted;
    for (std::size_t l = 0; l < model.layer_count(); ++l)
        if (model.layers()[l].has_weights()) weighted.push_back(l);

    const std::size_t d = calib_inputs.size();
    CalibrationStats stats;
    stats.sample_count = d;
    stats.layers.resize(weighted.size());

    struct Reservoir {
        std::vector<float> pool;
        std::size_t seen = 0;
        std::mt19937_64 rng;
    };
    std::vector<Reservoir> reservoirs(weighted.size());
    std::vector<bool> use_reservoir(weighted.size(), false);
    for (std::size_t wi = 0; wi < weighted.size(); ++wi) {
        std::size_t per_sample = 1;
        for (std::size_t e : model.layer_input_shape(weighted[wi])) per_sample *= e;
        use_reservoir[wi] = per_sample * d > reservoir_cap;
        if (use_reservoir[wi]) {
            reservoirs[wi].pool.reserve(reservoir_cap);
            reservoirs[wi].rng.seed(seed + wi);
        } else {
            std::vector<std::size_t> shape{d};
            for (std::size_t e : model.layer_input_shape(weighted[wi])) shape.push_back(e);
            stats.layers[wi].stacked = Tensor(shape);
        }
        stats.layers[wi].layer = weighted[wi];
        stats.layers[wi].subsampled = use_reservoir[wi];
    }

    for (std::size_t s = 0; s < d; ++s) {
        ForwardResult fr = forward_fp(model, calib_inputs[s], true);
        for (std::size_t wi = 0; wi < weighted.size(); ++wi) {
            const Tensor& act = fr.layer_inputs[weighted[wi]];
            if (!use_reservoir[wi]) {
                float* dst = stats.layers[wi].stacked.data() + s * act.numel();
                std::copy(act.data(), act.data() + act.numel(), dst);
            } else {
                Reservoir& r = reservoirs[wi];
                for (std::size_t i = 0; i < act.numel(); ++i) {
                    ++r.seen;
                    if (r.pool.size() < reservoir_cap) {
                        r.pool.push_back(act[i]);
                    } else {
                        std::uniform_int_distribution<std::size_t> pick(0, r.seen - 1);
                        std::size_t j = pick(r.rng);
                        if (j < reservoir_cap) r.pool[j] = act[i];
                    }
                }
            }
        }
    }
    for (std::size_t wi = 0; wi < weighted.size(); ++wi)
        if (use_reservoir[wi]) {
            std::size_t n = reservoirs[wi].pool.size();
            stats.layers[wi].stacked = Tensor({n}, std::move(reservoirs[wi].pool));
        }
    return stats;
}

ActScaleFit calibrate_activation_scale(const Tensor& x_l, const QuantScheme& scheme, int grid_points,
                                       const std::vector<double>& extra_alphas) {
    QuantResult qr = omse_grid_search(x_l, scheme, grid_points, extra_alphas);
    ActScaleFit fit;
    fit.beta1 = qr.quantized.alpha;
    fit.delta = qr.quantized.delta;
    fit.mse = qr.mse;
    fit.degenerate = qr.degenerate;
    return fit;
}

ResidualFit calibrate_residual_scale(const Tensor& x_l, double beta1, double delta,
                                     const QuantScheme& scheme, int grid_points) {
    QuantizedTensor q1 = project(x_l, beta1, delta, scheme);
    Tensor resid(x_l.shape());
    bool all_zero = true;
    for (std::size_t i = 0; i < x_l.numel(); ++i) {
        double rec = static_cast<float>(q1.alpha * static_cast<double>(q1.values[i]) + q1.delta);
        float r = static_cast<float>(static_cast<double>(x_l[i]) - rec);
        resid[i] = r;
        if (r != 0.0f) all_zero = false;
    }
    ResidualFit fit;
    if (all_zero) {
        fit.disabled = true;
        fit.mse = 0.0;
        return fit;
    }
    // The residual is signed regardless of the activation scheme.
    QuantResult qr = omse_grid_search(resid, QuantScheme::signed_bits(scheme.bits), grid_points);
    fit.beta2 = qr.quantized.alpha;
    fit.mse = qr.mse;
    fit.disabled = qr.degenerate;
    return fit;
}

MinMaxScale minmax_baseline(const Tensor& stacked, const QuantScheme& scheme) {
    if (stacked.rank() < 2) throw ValidationError("minmax_baseline needs a leading sample axis");
    const std::size_t d = stacked.extent(0);
    const std::size_t per = stacked.numel() / d;
    const auto [lo, hi] = quant_range(scheme);
    double mean_min = 0.0, mean_max = 0.0, mean_absmax = 0.0;
    for (std::size_t s = 0; s < d; ++s) {
        const float* p = stacked.data() + s * per;
        float mn = p[0], mx = p[0], am = std::fabs(p[0]);
        for (std::size_t i = 1; i < per; ++i) {
            mn = std::min(mn, p[i]);
            mx = std::max(mx, p[i]);
            am = std::max(am, std::fabs(p[i]));
        }
        mean_min += mn;
        mean_max += mx;
        mean_absmax += am;
    }
    mean_min /= static_cast<double>(d);
    mean_max /= static_cast<double>(d);
    mean_absmax /= static_cast<double>(d);

    MinMaxScale ms;
    if (scheme.offset_enabled) {
        ms.delta = mean_min;
        ms.alpha = (mean_max - ms.delta) / static_cast<double>(hi - lo);
    } else {
        ms.delta = 0.0;
        ms.alpha = mean_absmax / static_cast<double>(hi);
    }
    if (!(ms.alpha > 0.0)) ms.alpha = 1.0;
    return ms;
}

CalibrationStats calibrate_model(QuantizedModel& qmodel, const std::vector<Tensor>& calib_inputs,
                                 const QuantScheme& act_scheme, int grid_points,
                                 bool residual_on_key_layers) {
    CalibrationStats stats = collect_activations(qmodel.base, calib_inputs);

    std::size_t first_weighted = qmodel.base.layer_count();
    for (std::size_t l = 0; l < qmodel.base.layer_count(); ++l)
        if (qmodel.base.layers()[l].has_weights()) {
            first_weighted = l;
            break;
        }

    for (LayerCalibration& lc : stats.layers) {
        LayerQuantPlan& plan = *qmodel.plans[lc.layer];
        if (lc.layer == first_weighted && !qmodel.quantize_input) {
            plan.act.enabled = false;
            continue;
        }
        ActScaleFit fit = calibrate_activation_scale(lc.stacked, act_scheme, grid_points);
        lc.beta1 = fit.beta1;
        lc.delta = fit.delta;
        lc.mse_single = fit.mse;
        lc.degenerate = fit.degenerate;

        plan.act.enabled = true;
        plan.act.scheme = act_scheme;
        plan.act.beta1 = fit.beta1;
        plan.act.delta = fit.delta;
        plan.act.calib_mse_single = fit.mse;
        plan.act.calib_abs_max = static_cast<double>(lc.stacked.abs_max());
        plan.act.residual = false;
        if (residual_on_key_layers && plan.is_key_layer) {
            ResidualFit rf = calibrate_residual_scale(lc.stacked, fit.beta1, fit.delta, act_scheme,
                                                      grid_points);
            if (!rf.disabled) {
                plan.act.residual = true;
                plan.act.beta2 = rf.beta2;
                plan.act.residual_scheme = QuantScheme::signed_bits(act_scheme.bits);
                plan.act.calib_mse_residual = rf.mse;
                lc.has_residual = true;
                lc.beta2 = rf.beta2;
                lc.mse_residual = rf.mse;
            }
        }
    }
    return stats;
}

} // namespace qnet
