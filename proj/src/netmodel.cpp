#include "qnet/netmodel.hpp"

#include "qnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace qnet {

const char* to_string(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::linear: return "linear";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::avgpool: return "avgpool";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
    if (s == "conv2d") return LayerKind::conv2d;
    if (s == "linear") return LayerKind::linear;
    if (s == "relu") return LayerKind::relu;
    if (s == "maxpool") return LayerKind::maxpool;
    if (s == "avgpool") return LayerKind::avgpool;
    if (s == "flatten") return LayerKind::flatten;
    throw ValidationError("unknown layer kind: " + s);
}

const char* to_string(Partitioning p) {
    return p == Partitioning::kernel_wise ? "kernel" : "global";
}

Partitioning partitioning_from_string(const std::string& s) {
    if (s == "kernel" || s == "kernel_wise") return Partitioning::kernel_wise;
    if (s == "global") return Partitioning::global;
    throw ValidationError("unknown partitioning: " + s);
}

LayerSpec LayerSpec::conv2d(Tensor weight, Tensor bias, int stride, int padding) {
    if (weight.rank() != 4) throw ValidationError("conv2d weight must be KCHW");
    if (bias.numel() != weight.extent(0)) throw ValidationError("conv2d bias must have K entries");
    if (stride < 1 || padding < 0) throw ValidationError("bad conv2d stride/padding");
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    l.stride = stride;
    l.padding = padding;
    return l;
}

LayerSpec LayerSpec::linear(Tensor weight, Tensor bias) {
    if (weight.rank() != 2) throw ValidationError("linear weight must be out x in");
    if (bias.numel() != weight.extent(0)) throw ValidationError("linear bias must have out entries");
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.weight = std::move(weight);
    l.bias = std::move(bias);
    return l;
}

LayerSpec LayerSpec::relu() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
}

LayerSpec LayerSpec::maxpool(int window, int stride) {
    if (window < 1 || stride < 1) throw ValidationError("bad pool window/stride");
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.window = window;
    l.stride = stride;
    return l;
}

LayerSpec LayerSpec::avgpool(int window, int stride) {
    LayerSpec l = maxpool(window, stride);
    l.kind = LayerKind::avgpool;
    return l;
}

LayerSpec LayerSpec::flatten() {
    LayerSpec l;
    l.kind = LayerKind::flatten;
    return l;
}

std::size_t LayerSpec::kernel_count() const {
    if (!has_weights()) return 0;
    return weight.extent(0);
}

namespace {

std::vector<std::size_t> infer_output_shape(const LayerSpec& l, const std::vector<std::size_t>& in) {
    switch (l.kind) {
        case LayerKind::conv2d: {
            if (in.size() != 3) throw ValidationError("conv2d expects CHW input");
            if (in[0] != l.weight.extent(1))
                throw ValidationError("conv2d input channels do not match weights");
            return {l.weight.extent(0),
                    ops::out_dim(in[1], static_cast<int>(l.weight.extent(2)), l.stride, l.padding),
                    ops::out_dim(in[2], static_cast<int>(l.weight.extent(3)), l.stride, l.padding)};
        }
        case LayerKind::linear: {
            if (in.size() != 1) throw ValidationError("linear expects flat input (add flatten)");
            if (in[0] != l.weight.extent(1)) throw ValidationError("linear input size mismatch");
            return {l.weight.extent(0)};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::maxpool:
        case LayerKind::avgpool: {
            if (in.size() != 3) throw ValidationError("pool expects CHW input");
            return {in[0], ops::out_dim(in[1], l.window, l.stride, 0),
                    ops::out_dim(in[2], l.window, l.stride, 0)};
        }
        case LayerKind::flatten: {
            std::size_t n = 1;
            for (std::size_t e : in) n *= e;
            return {n};
        }
    }
    throw ValidationError("unknown layer kind");
}

} // namespace

NetworkModel::NetworkModel(std::vector<LayerSpec> layers, std::vector<std::size_t> input_shape)
    : layers_(std::move(layers)), input_shape_(std::move(input_shape)) {
    if (layers_.empty()) throw ValidationError("model needs at least one layer");
    if (input_shape_.empty()) throw ValidationError("model needs an input shape");
    shapes_.push_back(input_shape_);
    for (const LayerSpec& l : layers_) shapes_.push_back(infer_output_shape(l, shapes_.back()));
}

namespace {

Tensor apply_layer_fp(const LayerSpec& l, const Tensor& x) {
    switch (l.kind) {
        case LayerKind::conv2d: return ops::conv2d(x, l.weight, l.bias, l.stride, l.padding);
        case LayerKind::linear: return ops::linear(x, l.weight, l.bias);
        case LayerKind::relu: return ops::relu(x);
        case LayerKind::maxpool: return ops::maxpool(x, l.window, l.stride);
        case LayerKind::avgpool: return ops::avgpool(x, l.window, l.stride);
        case LayerKind::flatten: {
            std::size_t n = x.numel();
            return x.reshaped({n});
        }
    }
    throw ValidationError("unknown layer kind");
}

} // namespace

ForwardResult forward_fp(const NetworkModel& model, const Tensor& x, bool capture) {
    if (x.shape() != model.input_shape()) throw ValidationError("forward_fp: input shape mismatch");
    ForwardResult r;
    Tensor cur = x;
    for (const LayerSpec& l : model.layers()) {
        if (capture) r.layer_inputs.push_back(cur);
        cur = apply_layer_fp(l, cur);
    }
    r.output = std::move(cur);
    return r;
}

std::vector<Tensor> forward_fp_batch(const NetworkModel& model, const Tensor& x_batch) {
    if (x_batch.rank() != model.input_shape().size() + 1)
        throw ValidationError("forward_fp_batch: expected a leading sample axis");
    std::vector<Tensor> outs;
    outs.reserve(x_batch.extent(0));
    for (std::size_t i = 0; i < x_batch.extent(0); ++i)
        outs.push_back(forward_fp(model, x_batch.slice0(i), false).output);
    return outs;
}

void WeightGroup::set_gamma(double g) {
    gamma = g;
    for (QuantizedTensor& t : terms) t.gamma = g;
}

Tensor WeightGroup::dequantized() const {
    if (terms.empty()) throw ValidationError("weight group has no terms");
    Tensor out(terms[0].shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        double acc = 0.0;
        for (const QuantizedTensor& t : terms)
            acc += t.gamma * t.alpha * static_cast<double>(t.values[i]) + t.delta;
        out[i] = static_cast<float>(acc);
    }
    return out;
}

void QuantizedModel::validate() const {
    if (plans.size() != base.layer_count())
        throw ValidationError("quantized model: one plan slot per layer required");
    for (std::size_t l = 0; l < plans.size(); ++l) {
        const LayerSpec& layer = base.layers()[l];
        if (!plans[l]) {
            if (layer.has_weights()) throw ValidationError("weighted layer missing plan");
            continue;
        }
        if (!layer.has_weights()) throw ValidationError("plan attached to unweighted layer");
        const LayerQuantPlan& p = *plans[l];
        std::size_t expected =
            p.partitioning == Partitioning::kernel_wise ? layer.kernel_count() : 1;
        if (p.groups.size() != expected)
            throw ValidationError("plan group count does not match partitioning");
        if (p.act.residual && !p.is_key_layer)
            throw ValidationError("activation residual on non-key layer");
        std::size_t total = 0;
        for (const WeightGroup& g : p.groups) {
            if (g.terms.empty()) throw ValidationError("weight group has no terms");
            for (const QuantizedTensor& t : g.terms) t.validate();
            total += g.terms[0].numel();
        }
        if (total != layer.weight.numel())
            throw ValidationError("plan does not cover the weight tensor");
    }
}

Tensor QuantizedModel::dequantized_weight(std::size_t l) const {
    const LayerSpec& layer = base.layers().at(l);
    const LayerQuantPlan& plan = *plans.at(l);
    Tensor out(layer.weight.shape());
    if (plan.partitioning == Partitioning::global) {
        Tensor g = plan.groups.at(0).dequantized();
        std::copy(g.values().begin(), g.values().end(), out.values().begin());
        return out;
    }
    std::size_t stride = layer.weight.numel() / layer.kernel_count();
    for (std::size_t k = 0; k < plan.groups.size(); ++k) {
        Tensor g = plan.groups[k].dequantized();
        std::copy(g.values().begin(), g.values().end(), out.values().begin() + k * stride);
    }
    return out;
}

NetworkModel QuantizedModel::dequantized_model() const {
    std::vector<LayerSpec> layers = base.layers();
    for (std::size_t l = 0; l < layers.size(); ++l)
        if (plans[l]) layers[l].weight = dequantized_weight(l);
    return NetworkModel(std::move(layers), base.input_shape());
}

namespace {

Tensor group_slice(const LayerSpec& layer, Partitioning part, std::size_t k) {
    if (part == Partitioning::global) return layer.weight;
    return layer.weight.slice0(k);
}

LayerQuantPlan quantize_layer(const LayerSpec& layer, Partitioning part,
                              const WeightQuantConfig& cfg) {
    LayerQuantPlan plan;
    plan.partitioning = part;
    const std::size_t n_groups = part == Partitioning::kernel_wise ? layer.kernel_count() : 1;
    double weighted = 0.0;
    std::size_t total = 0;
    for (std::size_t k = 0; k < n_groups; ++k) {
        Tensor slice = group_slice(layer, part, k);
        QuantResult qr = quantize_with(cfg.method, slice, cfg.scheme, cfg.grid_points);
        WeightGroup g;
        g.terms = {std::move(qr.quantized)};
        g.weight_mse = qr.mse;
        weighted += qr.mse * static_cast<double>(slice.numel());
        total += slice.numel();
        plan.groups.push_back(std::move(g));
    }
    plan.layer_weight_mse = weighted / static_cast<double>(total);
    return plan;
}

void requantize_dual(const LayerSpec& layer, LayerQuantPlan& plan, const WeightQuantConfig& cfg) {
    const std::vector<QuantScheme> schemes{cfg.scheme, cfg.second_scheme()};
    double weighted = 0.0;
    std::size_t total = 0;
    for (std::size_t k = 0; k < plan.groups.size(); ++k) {
        Tensor slice = group_slice(layer, plan.partitioning, k);
        MultiQuantResult mr;
        // The exact search is quadratic in the grid and exponential in p1;
        // it is meant for kernel-sized tensors, so global groups always go
        // through the alternating route.
        if (cfg.dual_search == DualSearch::exact && plan.partitioning == Partitioning::kernel_wise)
            mr = dual_line_search(slice, schemes[0], schemes[1], cfg.dual_grid_points);
        else
            mr = alternating_multi_quantize(slice, schemes, omse_quantizer(cfg.grid_points),
                                            cfg.multi_eps, cfg.multi_max_iter);
        WeightGroup& g = plan.groups[k];
        double g_gamma = g.gamma;
        g.terms = std::move(mr.terms);
        g.weight_mse = mr.mse;
        g.set_gamma(g_gamma);
        weighted += mr.mse * static_cast<double>(slice.numel());
        total += slice.numel();
    }
    plan.layer_weight_mse = weighted / static_cast<double>(total);
    plan.is_key_layer = true;
}

} // namespace

QuantizedModel quantize_weights(const NetworkModel& model, const WeightQuantConfig& cfg) {
    cfg.scheme.validate();
    QuantizedModel qm;
    qm.base = model;
    qm.plans.resize(model.layer_count());

    std::map<int, double> layer_mse;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        const LayerSpec& layer = model.layers()[l];
        if (!layer.has_weights()) continue;
        Partitioning part = layer.kind == LayerKind::conv2d ? cfg.conv_partitioning
                                                            : cfg.fc_partitioning;
        qm.plans[l] = quantize_layer(layer, part, cfg);
        layer_mse[static_cast<int>(l)] = qm.plans[l]->layer_weight_mse;
    }

    if (cfg.dual_enabled) {
        std::set<int> keys = select_key_layers(layer_mse, cfg.tau);
        for (int l : keys) requantize_dual(model.layers()[l], *qm.plans[l], cfg);
    }

    qm.provenance["method"] = to_string(cfg.method);
    qm.provenance["bits"] = std::to_string(cfg.scheme.bits);
    qm.provenance["offset"] = cfg.scheme.offset_enabled ? "on" : "off";
    qm.provenance["grid"] = std::to_string(cfg.grid_points);
    qm.provenance["tau"] = std::to_string(cfg.tau);
    qm.provenance["dual"] = cfg.dual_enabled ? "on" : "off";
    return qm;
}

namespace {

struct ActTerms {
    // x ~ sum_a scales[a] * planes[a] + delta (delta applies once).
    std::vector<QuantizedTensor> planes;
    std::vector<double> scales;
    double delta = 0.0;
};

ActTerms quantize_activation(const Tensor& x, const ActQuant& act) {
    ActTerms terms;
    QuantizedTensor q1 = project(x, act.beta1, act.delta, act.scheme);
    terms.delta = q1.delta;
    terms.scales.push_back(act.beta1);
    if (act.residual) {
        Tensor rec = dequantize(q1);
        Tensor resid(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i)
            resid[i] = static_cast<float>(static_cast<double>(x[i]) - static_cast<double>(rec[i]));
        QuantizedTensor q2 = project(resid, act.beta2, 0.0, act.residual_scheme);
        terms.planes.push_back(std::move(q1));
        terms.planes.push_back(std::move(q2));
        terms.scales.push_back(act.beta2);
    } else {
        terms.planes.push_back(std::move(q1));
    }
    return terms;
}

void check_int_accumulator(std::size_t taps) {
    // p <= 8 bounds every product by 2^14; guard the 64-bit accumulator
    // explicitly so the exactness claim cannot silently break.
    const double worst = static_cast<double>(taps) * 127.0 * 255.0;
    if (worst >= static_cast<double>(std::numeric_limits<std::int64_t>::max()))
        throw ValidationError("integer accumulator would overflow");
}

// Integer-exact evaluation of one weighted layer.
Tensor weighted_layer_integer(const LayerSpec& layer, const LayerQuantPlan& plan, const Tensor& x) {
    const ActTerms acts = quantize_activation(x, plan.act);
    const bool is_conv = layer.kind == LayerKind::conv2d;
    const std::vector<std::size_t> x_shape =
        is_conv ? x.shape() : std::vector<std::size_t>{x.numel(), 1, 1};
    const std::size_t K = layer.kernel_count();
    const std::size_t group_elems = layer.weight.numel() / K;
    const std::vector<std::size_t> w_shape =
        is_conv ? std::vector<std::size_t>{layer.weight.extent(1), layer.weight.extent(2),
                                           layer.weight.extent(3)}
                : std::vector<std::size_t>{layer.weight.extent(1), 1, 1};
    const int stride = is_conv ? layer.stride : 1;
    const int pad = is_conv ? layer.padding : 0;
    check_int_accumulator(group_elems);

    // Plane-level maps shared across kernels (only needed for weight offsets).
    bool any_weight_delta = false;
    for (const WeightGroup& g : plan.groups)
        for (const QuantizedTensor& t : g.terms)
            if (t.delta != 0.0) any_weight_delta = true;
    std::vector<std::vector<std::int64_t>> plane_sums;
    std::vector<std::int64_t> counts;
    if (any_weight_delta) {
        for (const QuantizedTensor& p : acts.planes)
            plane_sums.push_back(ops::window_sum_int(p.values.data(), x_shape, w_shape, stride, pad));
        counts = ops::window_count(x_shape, w_shape, stride, pad);
    }

    const std::size_t oh = ops::out_dim(x_shape[1], static_cast<int>(w_shape[1]), stride, pad);
    const std::size_t ow = ops::out_dim(x_shape[2], static_cast<int>(w_shape[2]), stride, pad);
    const std::size_t map_len = oh * ow;
    Tensor out(is_conv ? std::vector<std::size_t>{K, oh, ow} : std::vector<std::size_t>{K});
    std::vector<double> acc(map_len);

    for (std::size_t k = 0; k < K; ++k) {
        const WeightGroup& g =
            plan.partitioning == Partitioning::kernel_wise ? plan.groups[k] : plan.groups[0];
        const std::size_t offset = plan.partitioning == Partitioning::kernel_wise ? 0 : k * group_elems;
        std::fill(acc.begin(), acc.end(), static_cast<double>(layer.bias[k]));

        for (const QuantizedTensor& term : g.terms) {
            const std::int8_t* w = term.values.data() + offset;
            const double scale = term.gamma * term.alpha;
            for (std::size_t a = 0; a < acts.planes.size(); ++a) {
                std::vector<std::int64_t> ic = ops::conv2d_int(
                    acts.planes[a].values.data(), x_shape, w, w_shape, stride, pad);
                const double s = scale * acts.scales[a];
                for (std::size_t i = 0; i < map_len; ++i)
                    acc[i] += s * static_cast<double>(ic[i]);
            }
            if (acts.delta != 0.0) {
                std::vector<std::int64_t> ws = ops::kernel_valid_sum(w, w_shape, x_shape, stride, pad);
                const double s = scale * acts.delta;
                for (std::size_t i = 0; i < map_len; ++i)
                    acc[i] += s * static_cast<double>(ws[i]);
            }
            if (term.delta != 0.0) {
                for (std::size_t a = 0; a < acts.planes.size(); ++a) {
                    const double s = term.delta * acts.scales[a];
                    for (std::size_t i = 0; i < map_len; ++i)
                        acc[i] += s * static_cast<double>(plane_sums[a][i]);
                }
                const double s = term.delta * acts.delta;
                for (std::size_t i = 0; i < map_len; ++i)
                    acc[i] += s * static_cast<double>(counts[i]);
            }
        }
        for (std::size_t i = 0; i < map_len; ++i)
            out[k * map_len + i] = static_cast<float>(acc[i]);
    }
    return out;
}

// Double-precision convolution used by the activation-quantized float path:
// the expression matches the integer decomposition algebraically, so the two
// modes only differ by accumulation rounding.
Tensor conv2d_dbl(const std::vector<double>& x, const std::vector<std::size_t>& x_shape,
                  const std::vector<double>& w, const std::vector<std::size_t>& w_shape,
                  const Tensor& bias, int stride, int pad, bool conv_shape) {
    const std::size_t C = x_shape[0], H = x_shape[1], W = x_shape[2];
    const std::size_t K = w_shape[0], kh = w_shape[2], kw = w_shape[3];
    const std::size_t oh = ops::out_dim(H, static_cast<int>(kh), stride, pad);
    const std::size_t ow = ops::out_dim(W, static_cast<int>(kw), stride, pad);
    Tensor out(conv_shape ? std::vector<std::size_t>{K, oh, ow} : std::vector<std::size_t>{K});
    for (std::size_t k = 0; k < K; ++k) {
        const double* wk = w.data() + k * C * kh * kw;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = static_cast<double>(bias[k]);
                const std::int64_t iy0 = static_cast<std::int64_t>(oy) * stride - pad;
                const std::int64_t ix0 = static_cast<std::int64_t>(ox) * stride - pad;
                for (std::size_t c = 0; c < C; ++c) {
                    const double* xc = x.data() + c * H * W;
                    const double* wc = wk + c * kh * kw;
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = iy0 + static_cast<std::int64_t>(ky);
                        if (iy < 0 || iy >= static_cast<std::int64_t>(H)) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ix0 + static_cast<std::int64_t>(kx);
                            if (ix < 0 || ix >= static_cast<std::int64_t>(W)) continue;
                            acc += xc[iy * W + ix] * wc[ky * kw + kx];
                        }
                    }
                }
                out[(k * oh + oy) * ow + ox] = static_cast<float>(acc);
            }
    }
    return out;
}

Tensor weighted_layer_float(const LayerSpec& layer, const LayerQuantPlan& plan, const Tensor& x,
                            const Tensor& deq_weight, bool quantize_act) {
    if (!quantize_act) {
        // Identical arithmetic to the dequantized-weight FP forward.
        if (layer.kind == LayerKind::conv2d)
            return ops::conv2d(x, deq_weight, layer.bias, layer.stride, layer.padding);
        return ops::linear(x, deq_weight, layer.bias);
    }

    const ActTerms acts = quantize_activation(x, plan.act);
    const bool is_conv = layer.kind == LayerKind::conv2d;
    std::vector<std::size_t> x_shape =
        is_conv ? x.shape() : std::vector<std::size_t>{x.numel(), 1, 1};
    std::vector<double> xhat(x.numel());
    for (std::size_t i = 0; i < xhat.size(); ++i) {
        double acc = acts.delta;
        for (std::size_t a = 0; a < acts.planes.size(); ++a)
            acc += acts.scales[a] * static_cast<double>(acts.planes[a].values[i]);
        xhat[i] = acc;
    }

    const std::size_t K = layer.kernel_count();
    const std::size_t group_elems = layer.weight.numel() / K;
    std::vector<std::size_t> w_shape =
        is_conv ? layer.weight.shape()
                : std::vector<std::size_t>{K, layer.weight.extent(1), 1, 1};
    std::vector<double> what(layer.weight.numel());
    for (std::size_t k = 0; k < K; ++k) {
        const WeightGroup& g =
            plan.partitioning == Partitioning::kernel_wise ? plan.groups[k] : plan.groups[0];
        const std::size_t offset = plan.partitioning == Partitioning::kernel_wise ? 0 : k * group_elems;
        for (std::size_t i = 0; i < group_elems; ++i) {
            double acc = 0.0;
            for (const QuantizedTensor& term : g.terms)
                acc += term.gamma * term.alpha * static_cast<double>(term.values[offset + i]) +
                       term.delta;
            what[k * group_elems + i] = acc;
        }
    }
    return conv2d_dbl(xhat, x_shape, what, w_shape, layer.bias, is_conv ? layer.stride : 1,
                      is_conv ? layer.padding : 0, is_conv);
}

} // namespace

Tensor forward_quant(const QuantizedModel& qmodel, const Tensor& x, SimMode mode) {
    if (x.shape() != qmodel.base.input_shape())
        throw ValidationError("forward_quant: input shape mismatch");
    std::size_t first_weighted = qmodel.base.layer_count();
    for (std::size_t l = 0; l < qmodel.base.layer_count(); ++l)
        if (qmodel.base.layers()[l].has_weights()) {
            first_weighted = l;
            break;
        }

    Tensor cur = x;
    for (std::size_t l = 0; l < qmodel.base.layer_count(); ++l) {
        const LayerSpec& layer = qmodel.base.layers()[l];
        if (!layer.has_weights()) {
            cur = apply_layer_fp(layer, cur);
            continue;
        }
        if (!qmodel.plans[l]) throw ValidationError("weighted layer missing plan");
        const LayerQuantPlan& plan = *qmodel.plans[l];
        const bool input_exempt = (l == first_weighted) && !qmodel.quantize_input;
        if (!plan.act.enabled) {
            if (mode == SimMode::integer_exact && !input_exempt)
                throw ValidationError("missing calibration scales for layer " + std::to_string(l));
            cur = weighted_layer_float(layer, plan, cur, qmodel.dequantized_weight(l), false);
            continue;
        }
        if (mode == SimMode::integer_exact)
            cur = weighted_layer_integer(layer, plan, cur);
        else
            cur = weighted_layer_float(layer, plan, cur, qmodel.dequantized_weight(l), true);
    }
    return cur;
}

ForwardResult forward_quant_capture(const QuantizedModel& qmodel, const Tensor& x) {
    ForwardResult r;
    Tensor cur = x;
    for (std::size_t l = 0; l < qmodel.base.layer_count(); ++l) {
        r.layer_inputs.push_back(cur);
        const LayerSpec& layer = qmodel.base.layers()[l];
        if (!layer.has_weights()) {
            cur = apply_layer_fp(layer, cur);
            continue;
        }
        const LayerQuantPlan& plan = *qmodel.plans[l];
        cur = weighted_layer_float(layer, plan, cur, qmodel.dequantized_weight(l), plan.act.enabled);
    }
    r.output = std::move(cur);
    return r;
}

LayerBitCount layer_weight_bits(const LayerSpec& layer, const LayerQuantPlan& plan) {
    LayerBitCount bits;
    for (const WeightGroup& g : plan.groups) {
        for (const QuantizedTensor& t : g.terms) {
            bits.value_bits += static_cast<std::uint64_t>(t.scheme.bits) * t.numel();
            bits.scale_bits += 32;   // fused gamma*alpha per term per group
            if (t.scheme.offset_enabled) bits.scale_bits += 32;
        }
    }
    bits.bias_bits = 32ull * layer.bias.numel();
    bits.fp_weight_bits = 32ull * layer.weight.numel();
    return bits;
}

CompressionRatio compression_ratio(const QuantizedModel& qmodel) {
    CompressionRatio cr;
    std::uint64_t num_w = 0, den_w = 0;
    std::uint64_t num_a = 0, den_a = 0;
    for (std::size_t l = 0; l < qmodel.base.layer_count(); ++l) {
        if (!qmodel.plans[l]) continue;
        const LayerSpec& layer = qmodel.base.layers()[l];
        const LayerQuantPlan& plan = *qmodel.plans[l];
        LayerBitCount bits = layer_weight_bits(layer, plan);
        num_w += bits.value_bits + bits.scale_bits + bits.bias_bits;
        den_w += bits.fp_weight_bits + bits.bias_bits;

        // Activation accounting per sample: the quantized input of every
        // weighted layer vs its FP32 size.
        std::size_t act_elems = 1;
        for (std::size_t e : qmodel.base.layer_input_shape(l)) act_elems *= e;
        den_a += 32ull * act_elems;
        if (plan.act.enabled) {
            num_a += static_cast<std::uint64_t>(plan.act.scheme.bits) * act_elems + 32;
            if (plan.act.scheme.offset_enabled) num_a += 32;
            if (plan.act.residual)
                num_a += static_cast<std::uint64_t>(plan.act.residual_scheme.bits) * act_elems + 32;
        } else {
            num_a += 32ull * act_elems;
        }
    }
    if (den_w) cr.cr_weights = static_cast<double>(num_w) / static_cast<double>(den_w);
    if (den_a) cr.cr_activations = static_cast<double>(num_a) / static_cast<double>(den_a);
    return cr;
}

std::vector<MseBoundRow> mse_bound_report(const NetworkModel& model, const QuantizedModel& qmodel,
                                          int n_samples, InputDist dist, std::uint64_t seed) {
    if (n_samples < 1) throw ValidationError("mse_bound_report needs samples");
    for (const LayerSpec& l : model.layers())
        if (!(l.has_weights() || l.kind == LayerKind::flatten))
            throw ValidationError("mse bound requires a linear-only model (conv/linear/flatten)");

    NetworkModel deq = qmodel.dequantized_model();
    std::vector<std::size_t> weighted;
    for (std::size_t l = 0; l < model.layer_count(); ++l)
        if (model.layers()[l].has_weights()) weighted.push_back(l);

    std::vector<double> measured(weighted.size(), 0.0);
    std::vector<double> ex2(weighted.size(), 0.0);   // E || X_l ||_F^2
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);

    Tensor x(model.input_shape());
    for (int s = 0; s < n_samples; ++s) {
        for (std::size_t i = 0; i < x.numel(); ++i)
            x[i] = static_cast<float>(dist == InputDist::normal ? normal(rng) : uni(rng));
        ForwardResult fp = forward_fp(model, x, true);
        ForwardResult qf = forward_fp(deq, x, true);
        for (std::size_t wi = 0; wi < weighted.size(); ++wi) {
            std::size_t l = weighted[wi];
            const Tensor& y_fp = (l + 1 < model.layer_count()) ? fp.layer_inputs[l + 1] : fp.output;
            const Tensor& y_q = (l + 1 < model.layer_count()) ? qf.layer_inputs[l + 1] : qf.output;
            double d2 = 0.0, x2 = 0.0;
            for (std::size_t i = 0; i < y_fp.numel(); ++i) {
                double d = static_cast<double>(y_fp[i]) - static_cast<double>(y_q[i]);
                d2 += d * d;
            }
            for (std::size_t i = 0; i < fp.layer_inputs[l].numel(); ++i) {
                double v = fp.layer_inputs[l][i];
                x2 += v * v;
            }
            measured[wi] += d2;
            ex2[wi] += x2;
        }
    }

    std::vector<MseBoundRow> rows(weighted.size());
    double prev_bound = 0.0;
    for (std::size_t wi = 0; wi < weighted.size(); ++wi) {
        std::size_t l = weighted[wi];
        const Tensor& w = model.layers()[l].weight;
        Tensor nw = qmodel.dequantized_weight(l);
        double w2 = 0.0, n2 = 0.0;
        for (std::size_t i = 0; i < w.numel(); ++i) {
            double wv = w[i];
            double dv = static_cast<double>(nw[i]) - wv;
            w2 += wv * wv;
            n2 += dv * dv;
        }
        double mean_x2 = ex2[wi] / n_samples;
        double bound = n2 * mean_x2 + w2 * prev_bound;
        rows[wi] = {l, measured[wi] / n_samples, bound};
        prev_bound = bound;
    }
    return rows;
}

std::size_t argmax(const Tensor& t) {
    if (t.numel() == 0) throw ValidationError("argmax of empty tensor");
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.numel(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

} // namespace qnet
