#include "qnet/refine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace qnet {

void RefineConfig::validate() const {
    if (epochs < 0) throw ValidationError("refine epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ValidationError("refine learning rate must be positive");
    if (batch_size < 1) throw ValidationError("refine batch size must be >= 1");
    if (calib_size < 1) throw ValidationError("refine calibration size must be >= 1");
}

namespace {

// The gamma objective is differentiated through finite differences in tests,
// so the whole refinement forward/backward runs on double-precision buffers
// (the f32 layer storage would cap the attainable gradient accuracy).
struct DBuf {
    std::vector<std::size_t> shape;
    std::vector<double> v;

    std::size_t numel() const { return v.size(); }
    static DBuf from_tensor(const Tensor& t) {
        DBuf b;
        b.shape = t.shape();
        b.v.assign(t.data(), t.data() + t.numel());
        return b;
    }
};

std::size_t dim_out(std::size_t extent, int window, int stride, int pad) {
    return (extent + 2 * static_cast<std::size_t>(pad) - window) / stride + 1;
}

DBuf dconv2d(const DBuf& x, const Tensor& w, int stride, int pad) {
    const std::size_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
    const std::size_t K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const std::size_t oh = dim_out(H, static_cast<int>(kh), stride, pad);
    const std::size_t ow = dim_out(W, static_cast<int>(kw), stride, pad);
    DBuf out;
    out.shape = {K, oh, ow};
    out.v.assign(K * oh * ow, 0.0);
    const float* ws = w.data();
    for (std::size_t k = 0; k < K; ++k) {
        const float* wk = ws + k * C * kh * kw;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                const std::int64_t iy0 = static_cast<std::int64_t>(oy) * stride - pad;
                const std::int64_t ix0 = static_cast<std::int64_t>(ox) * stride - pad;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* xc = x.v.data() + c * H * W;
                    const float* wc = wk + c * kh * kw;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = iy0 + static_cast<std::int64_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::int64_t>(H)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ix0 + static_cast<std::int64_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::int64_t>(W)) continue;
                            acc += xc[iy * W + ix] * static_cast<double>(wc[ky * kw + kx]);
                        }
                    }
                }
                out.v[(k * oh + oy) * ow + ox] = acc;
            }
    }
    return out;
}

DBuf dconv2d_backward_input(const DBuf& g, const Tensor& w, const std::vector<std::size_t>& in_shape,
                            int stride, int pad) {
    const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
    const std::size_t K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
    const std::size_t oh = g.shape[1], ow = g.shape[2];
    DBuf out;
    out.shape = in_shape;
    out.v.assign(C * H * W, 0.0);
    const float* ws = w.data();
    for (std::size_t k = 0; k < K; ++k) {
        const float* wk = ws + k * C * kh * kw;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double gv = g.v[(k * oh + oy) * ow + ox];
                if (gv == 0.0) continue;
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
                            out.v[(c * H + iy) * W + ix] += gv * static_cast<double>(wc[ky * kw + kx]);
                        }
                    }
                }
            }
    }
    return out;
}

DBuf dlinear(const DBuf& x, const Tensor& w) {
    const std::size_t out_f = w.extent(0), in_f = w.extent(1);
    DBuf out;
    out.shape = {out_f};
    out.v.assign(out_f, 0.0);
    const float* ws = w.data();
    for (std::size_t o = 0; o < out_f; ++o) {
        double acc = 0.0;
        const float* row = ws + o * in_f;
        for (std::size_t i = 0; i < in_f; ++i) acc += static_cast<double>(row[i]) * x.v[i];
        out.v[o] = acc;
    }
    return out;
}

DBuf dlinear_backward(const DBuf& g, const Tensor& w) {
    const std::size_t out_f = w.extent(0), in_f = w.extent(1);
    DBuf out;
    out.shape = {in_f};
    out.v.assign(in_f, 0.0);
    const float* ws = w.data();
    for (std::size_t o = 0; o < out_f; ++o) {
        const double gv = g.v[o];
        const float* row = ws + o * in_f;
        for (std::size_t i = 0; i < in_f; ++i) out.v[i] += gv * static_cast<double>(row[i]);
    }
    return out;
}

// Per-layer pieces of the gamma-parameterized forward:
//   y_k = gamma[g(k)] * (A_k * x) + delta_sum[g(k)] * S(x) + bias_k
// where A sums the scaled integer terms (gamma excluded) and S is the window
// sum of the input (weight-offset path, usually absent).
struct GammaLayer {
    std::size_t layer = 0;
    bool is_conv = false;
    Tensor weight_base;               // A, same shape as the FP weight
    std::vector<double> delta_sum;    // per group
    std::size_t groups = 0;           // K for kernel-wise, 1 for global
    std::vector<double> gamma;
    bool any_delta = false;
};

struct GammaNet {
    const NetworkModel* model = nullptr;
    std::vector<GammaLayer> glayers;
    std::vector<int> glayer_of_layer;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const GammaLayer& g : glayers) n += g.groups;
        return n;
    }
};

GammaNet build_gamma_net(const NetworkModel& model, const QuantizedModel& qmodel) {
    GammaNet net;
    net.model = &model;
    net.glayer_of_layer.assign(model.layer_count(), -1);
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        if (!model.layers()[l].has_weights()) continue;
        const LayerQuantPlan& plan = *qmodel.plans.at(l);
        GammaLayer gl;
        gl.layer = l;
        gl.is_conv = model.layers()[l].kind == LayerKind::conv2d;
        gl.groups = plan.groups.size();
        gl.weight_base = Tensor(model.layers()[l].weight.shape());
        const std::size_t group_elems = gl.weight_base.numel() / gl.groups;
        for (std::size_t g = 0; g < plan.groups.size(); ++g) {
            const WeightGroup& wg = plan.groups[g];
            double dsum = 0.0;
            for (const QuantizedTensor& t : wg.terms) dsum += t.delta;
            gl.delta_sum.push_back(dsum);
            if (dsum != 0.0) gl.any_delta = true;
            gl.gamma.push_back(wg.gamma);
            // Term arrays span exactly one group (the whole tensor for global).
            for (std::size_t i = 0; i < group_elems; ++i) {
                double acc = 0.0;
                for (const QuantizedTensor& t : wg.terms)
                    acc += t.alpha * static_cast<double>(t.values[i]);
                gl.weight_base[g * group_elems + i] = static_cast<float>(acc);
            }
        }
        net.glayer_of_layer[l] = static_cast<int>(net.glayers.size());
        net.glayers.push_back(std::move(gl));
    }
    return net;
}

struct TapeEntry {
    DBuf input;
    DBuf unscaled;                      // per-group conv output u (weighted layers)
    DBuf window_sum;                    // only with weight offsets
    std::vector<std::size_t> pool_argmax;
};

struct Tape {
    std::vector<TapeEntry> entries;
    DBuf output;
};

DBuf apply_gamma_layer(const GammaLayer& gl, const LayerSpec& spec, const DBuf& x, TapeEntry& e) {
    e.unscaled = gl.is_conv ? dconv2d(x, gl.weight_base, spec.stride, spec.padding)
                            : dlinear(x, gl.weight_base);
    const std::size_t K = spec.kernel_count();
    const std::size_t map_len = e.unscaled.numel() / K;
    if (gl.any_delta) {
        if (gl.is_conv) {
            Tensor ones({1, x.shape[0], spec.weight.extent(2), spec.weight.extent(3)});
            std::fill(ones.values().begin(), ones.values().end(), 1.0f);
            e.window_sum = dconv2d(x, ones, spec.stride, spec.padding);
        } else {
            e.window_sum.shape = {1};
            e.window_sum.v = {std::accumulate(x.v.begin(), x.v.end(), 0.0)};
        }
    }
    DBuf y;
    y.shape = e.unscaled.shape;
    y.v.resize(e.unscaled.numel());
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t g = gl.groups == 1 ? 0 : k;
        for (std::size_t i = 0; i < map_len; ++i) {
            double v = gl.gamma[g] * e.unscaled.v[k * map_len + i] +
                       static_cast<double>(spec.bias[k]);
            if (gl.any_delta)
                v += gl.delta_sum[g] * (gl.is_conv ? e.window_sum.v[i] : e.window_sum.v[0]);
            y.v[k * map_len + i] = v;
        }
    }
    return y;
}

Tape forward_tape(const GammaNet& net, const DBuf& x) {
    Tape tape;
    tape.entries.resize(net.model->layer_count());
    DBuf cur = x;
    for (std::size_t l = 0; l < net.model->layer_count(); ++l) {
        const LayerSpec& spec = net.model->layers()[l];
        TapeEntry& e = tape.entries[l];
        e.input = cur;
        switch (spec.kind) {
            case LayerKind::conv2d:
            case LayerKind::linear:
                cur = apply_gamma_layer(net.glayers[net.glayer_of_layer[l]], spec, cur, e);
                break;
            case LayerKind::relu:
                for (double& v : cur.v)
                    if (v < 0.0) v = 0.0;
                break;
            case LayerKind::maxpool: {
                const std::size_t C = cur.shape[0], H = cur.shape[1], W = cur.shape[2];
                const std::size_t oh = dim_out(H, spec.window, spec.stride, 0);
                const std::size_t ow = dim_out(W, spec.window, spec.stride, 0);
                DBuf out;
                out.shape = {C, oh, ow};
                out.v.resize(C * oh * ow);
                e.pool_argmax.assign(C * oh * ow, 0);
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            double best = -std::numeric_limits<double>::infinity();
                            std::size_t best_idx = 0;
                            for (int ky = 0; ky < spec.window; ++ky)
                                for (int kx = 0; kx < spec.window; ++kx) {
                                    std::size_t idx = (c * H + oy * spec.stride + ky) * W +
                                                      ox * spec.stride + kx;
                                    if (cur.v[idx] > best) {
                                        best = cur.v[idx];
                                        best_idx = idx;
                                    }
                                }
                            std::size_t o = (c * oh + oy) * ow + ox;
                            out.v[o] = best;
                            e.pool_argmax[o] = best_idx;
                        }
                cur = std::move(out);
                break;
            }
            case LayerKind::avgpool: {
                const std::size_t C = cur.shape[0], H = cur.shape[1], W = cur.shape[2];
                const std::size_t oh = dim_out(H, spec.window, spec.stride, 0);
                const std::size_t ow = dim_out(W, spec.window, spec.stride, 0);
                const double inv = 1.0 / (static_cast<double>(spec.window) * spec.window);
                DBuf out;
                out.shape = {C, oh, ow};
                out.v.resize(C * oh * ow);
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            double acc = 0.0;
                            for (int ky = 0; ky < spec.window; ++ky)
                                for (int kx = 0; kx < spec.window; ++kx)
                                    acc += cur.v[(c * H + oy * spec.stride + ky) * W +
                                                 ox * spec.stride + kx];
                            out.v[(c * oh + oy) * ow + ox] = acc * inv;
                        }
                cur = std::move(out);
                break;
            }
            case LayerKind::flatten:
                cur.shape = {cur.numel()};
                break;
        }
    }
    tape.output = std::move(cur);
    return tape;
}

double sample_objective(const Tape& tape, const Tensor& y_ref) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y_ref.numel(); ++i) {
        double d = tape.output.v[i] - static_cast<double>(y_ref[i]);
        acc += d * d;
    }
    return acc;
}

// Backpropagates d(objective)/d(output) through the tape, accumulating
// gradients w.r.t. every gamma into grad (flat, layer-major group order).
void backward_tape(const GammaNet& net, const Tape& tape, const Tensor& y_ref,
                   std::vector<double>& grad) {
    DBuf g;
    g.shape = tape.output.shape;
    g.v.resize(tape.output.numel());
    for (std::size_t i = 0; i < g.numel(); ++i)
        g.v[i] = 2.0 * (tape.output.v[i] - static_cast<double>(y_ref[i]));

    std::size_t param_base = net.param_count();
    for (std::size_t li = net.model->layer_count(); li-- > 0;) {
        const LayerSpec& spec = net.model->layers()[li];
        const TapeEntry& e = tape.entries[li];
        switch (spec.kind) {
            case LayerKind::conv2d:
            case LayerKind::linear: {
                const GammaLayer& gl = net.glayers[net.glayer_of_layer[li]];
                param_base -= gl.groups;
                const std::size_t K = spec.kernel_count();
                const std::size_t map_len = e.unscaled.numel() / K;
                // d/dgamma_g = <g_k, u_k> summed over the group's kernels.
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t grp = gl.groups == 1 ? 0 : k;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < map_len; ++i)
                        acc += g.v[k * map_len + i] * e.unscaled.v[k * map_len + i];
                    grad[param_base + grp] += acc;
                }
                // Input gradient: scale the output gradient by gamma first.
                DBuf gs = g;
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t grp = gl.groups == 1 ? 0 : k;
                    for (std::size_t i = 0; i < map_len; ++i)
                        gs.v[k * map_len + i] = gl.gamma[grp] * g.v[k * map_len + i];
                }
                DBuf gin = gl.is_conv ? dconv2d_backward_input(gs, gl.weight_base, e.input.shape,
                                                               spec.stride, spec.padding)
                                      : dlinear_backward(gs, gl.weight_base);
                if (gl.any_delta) {
                    // Offset path: constant-kernel weight routes gradient too.
                    Tensor dw(spec.weight.shape());
                    const std::size_t ge = dw.numel() / gl.groups;
                    for (std::size_t i = 0; i < dw.numel(); ++i)
                        dw[i] = static_cast<float>(gl.delta_sum[gl.groups == 1 ? 0 : i / ge]);
                    DBuf extra = gl.is_conv ? dconv2d_backward_input(g, dw, e.input.shape,
                                                                     spec.stride, spec.padding)
                                            : dlinear_backward(g, dw);
                    for (std::size_t i = 0; i < gin.numel(); ++i) gin.v[i] += extra.v[i];
                }
                g = std::move(gin);
                break;
            }
            case LayerKind::relu:
                for (std::size_t i = 0; i < g.numel(); ++i)
                    if (e.input.v[i] <= 0.0) g.v[i] = 0.0;
                break;
            case LayerKind::maxpool: {
                DBuf out;
                out.shape = e.input.shape;
                out.v.assign(e.input.numel(), 0.0);
                for (std::size_t o = 0; o < e.pool_argmax.size(); ++o)
                    out.v[e.pool_argmax[o]] += g.v[o];
                g = std::move(out);
                break;
            }
            case LayerKind::avgpool: {
                const std::size_t C = e.input.shape[0], H = e.input.shape[1],
                                  W = e.input.shape[2];
                const std::size_t oh = dim_out(H, spec.window, spec.stride, 0);
                const std::size_t ow = dim_out(W, spec.window, spec.stride, 0);
                const double inv = 1.0 / (static_cast<double>(spec.window) * spec.window);
                DBuf out;
                out.shape = e.input.shape;
                out.v.assign(e.input.numel(), 0.0);
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t oy = 0; oy < oh; ++oy)
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            double gv = g.v[(c * oh + oy) * ow + ox] * inv;
                            for (int ky = 0; ky < spec.window; ++ky)
                                for (int kx = 0; kx < spec.window; ++kx)
                                    out.v[(c * H + oy * spec.stride + ky) * W +
                                          ox * spec.stride + kx] += gv;
                        }
                g = std::move(out);
                break;
            }
            case LayerKind::flatten:
                g.shape = e.input.shape;
                break;
        }
    }
}

double full_objective(const GammaNet& net, const std::vector<DBuf>& inputs,
                      const std::vector<Tensor>& refs) {
    double acc = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        Tape t = forward_tape(net, inputs[i]);
        acc += sample_objective(t, refs[i]);
    }
    return acc;
}

void write_gammas(QuantizedModel& qm, const GammaNet& net) {
    for (const GammaLayer& gl : net.glayers) {
        LayerQuantPlan& plan = *qm.plans[gl.layer];
        for (std::size_t g = 0; g < gl.groups; ++g) plan.groups[g].set_gamma(gl.gamma[g]);
    }
}

void append_gamma_stats(RefineTrace& trace, const GammaNet& net) {
    for (const GammaLayer& gl : net.glayers) {
        LayerGammaStats st;
        st.layer = gl.layer;
        st.mean = std::accumulate(gl.gamma.begin(), gl.gamma.end(), 0.0) /
                  static_cast<double>(gl.gamma.size());
        double var = 0.0;
        for (double g : gl.gamma) var += (g - st.mean) * (g - st.mean);
        st.stddev = std::sqrt(var / static_cast<double>(gl.gamma.size()));
        trace.gamma_stats.push_back(st);
    }
}

} // namespace

RefineResult refine_scales(const NetworkModel& model, const QuantizedModel& qmodel,
                           const std::vector<Tensor>& calib_inputs, const RefineConfig& cfg) {
    cfg.validate();
    if (calib_inputs.empty()) throw ValidationError("empty calibration set");
    qmodel.validate();

    const std::size_t m = std::min<std::size_t>(calib_inputs.size(),
                                                static_cast<std::size_t>(cfg.calib_size));
    std::vector<DBuf> inputs;
    std::vector<Tensor> refs;
    inputs.reserve(m);
    refs.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        inputs.push_back(DBuf::from_tensor(calib_inputs[i]));
        refs.push_back(forward_fp(model, calib_inputs[i], false).output);
    }

    GammaNet net = build_gamma_net(model, qmodel);
    RefineResult result;
    result.model = qmodel;
    if (cfg.epochs == 0) {
        // Plans untouched; trace holds the objective at the current gammas.
        result.trace.objective.push_back(full_objective(net, inputs, refs));
        append_gamma_stats(result.trace, net);
        return result;
    }

    for (GammaLayer& gl : net.glayers) std::fill(gl.gamma.begin(), gl.gamma.end(), 1.0);
    result.trace.objective.push_back(full_objective(net, inputs, refs));

    double lr = cfg.learning_rate;
    std::vector<double> velocity(net.param_count(), 0.0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Snapshot for the rollback guard.
        std::vector<std::vector<double>> saved;
        for (const GammaLayer& gl : net.glayers) saved.push_back(gl.gamma);
        std::vector<double> saved_velocity = velocity;

        for (std::size_t start = 0; start < m; start += cfg.batch_size) {
            std::size_t end = std::min(m, start + cfg.batch_size);
            std::vector<double> grad(net.param_count(), 0.0);
            for (std::size_t i = start; i < end; ++i) {
                Tape tape = forward_tape(net, inputs[i]);
                backward_tape(net, tape, refs[i], grad);
            }
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            std::size_t p = 0;
            for (GammaLayer& gl : net.glayers)
                for (std::size_t g = 0; g < gl.groups; ++g, ++p) {
                    double step = grad[p] * inv_batch;
                    if (cfg.optimizer == Optimizer::sgd_momentum) {
                        velocity[p] = cfg.momentum * velocity[p] + step;
                        step = velocity[p];
                    }
                    gl.gamma[g] -= lr * step;
                }
        }

        double obj = full_objective(net, inputs, refs);
        if (obj > result.trace.objective.back()) {
            // Step overshot; roll back and retry the epoch at half the rate.
            for (std::size_t i = 0; i < net.glayers.size(); ++i) net.glayers[i].gamma = saved[i];
            velocity = saved_velocity;
            lr *= 0.5;
            obj = result.trace.objective.back();
        }
        result.trace.objective.push_back(obj);
    }

    write_gammas(result.model, net);
    append_gamma_stats(result.trace, net);
    return result;
}

double grad_check(const NetworkModel& model, const QuantizedModel& qmodel, const Tensor& x,
                  double eps) {
    if (!(eps >= 1e-6 && eps <= 1e-2)) throw ValidationError("grad_check eps out of [1e-6, 1e-2]");
    Tensor y_ref = forward_fp(model, x, false).output;
    GammaNet net = build_gamma_net(model, qmodel);
    DBuf xin = DBuf::from_tensor(x);

    Tape base = forward_tape(net, xin);
    std::vector<double> analytic(net.param_count(), 0.0);
    backward_tape(net, base, y_ref, analytic);

    // Kink exclusion: a gamma is skipped when its perturbation pushes any ReLU
    // input across zero (the objective is not differentiable there) or when a
    // ReLU input already sits within eps of the kink.
    auto relu_mask = [&](const Tape& tape, bool* near_kink) {
        std::vector<bool> mask;
        for (std::size_t l = 0; l < model.layer_count(); ++l) {
            if (model.layers()[l].kind != LayerKind::relu) continue;
            const DBuf& in = tape.entries[l].input;
            for (std::size_t i = 0; i < in.numel(); ++i) {
                mask.push_back(in.v[i] > 0.0);
                if (near_kink && std::fabs(in.v[i]) < eps) *near_kink = true;
            }
        }
        return mask;
    };
    const std::vector<bool> base_mask = relu_mask(base, nullptr);

    double worst = 0.0;
    std::size_t p = 0;
    for (GammaLayer& gl : net.glayers) {
        for (std::size_t g = 0; g < gl.groups; ++g, ++p) {
            const double saved = gl.gamma[g];
            gl.gamma[g] = saved + eps;
            Tape plus = forward_tape(net, xin);
            gl.gamma[g] = saved - eps;
            Tape minus = forward_tape(net, xin);
            gl.gamma[g] = saved;
            bool near = false;
            if (relu_mask(plus, &near) != base_mask || relu_mask(minus, &near) != base_mask || near)
                continue;
            double numeric = (sample_objective(plus, y_ref) - sample_objective(minus, y_ref)) /
                             (2.0 * eps);
            double denom = std::max({std::fabs(numeric), std::fabs(analytic[p]), 1e-12});
            worst = std::max(worst, std::fabs(numeric - analytic[p]) / denom);
        }
    }
    return worst;
}

} // namespace qnet
