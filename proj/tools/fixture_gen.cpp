// Regenerates the committed model fixtures:
//   fixture_random.qnet  - seeded random weights on the fixture topology
//   fixture_trained.qnet - same topology trained on the 10-class synthetic task
// Usage: qnet_fixture_gen <output-dir>

#include "qnet/container.hpp"
#include "qnet/ops.hpp"
#include "qnet/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>

using namespace qnet;

namespace {

struct LayerGrads {
    Tensor weight;
    Tensor bias;
};

struct TrainTape {
    std::vector<Tensor> inputs;
    std::vector<std::vector<std::size_t>> pool_argmax;
    Tensor logits;
};

TrainTape forward(const NetworkModel& model, const Tensor& x) {
    TrainTape tape;
    tape.pool_argmax.resize(model.layer_count());
    Tensor cur = x;
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        const LayerSpec& spec = model.layers()[l];
        tape.inputs.push_back(cur);
        switch (spec.kind) {
            case LayerKind::conv2d:
                cur = ops::conv2d(cur, spec.weight, spec.bias, spec.stride, spec.padding);
                break;
            case LayerKind::linear: cur = ops::linear(cur, spec.weight, spec.bias); break;
            case LayerKind::relu: cur = ops::relu(cur); break;
            case LayerKind::maxpool:
                cur = ops::maxpool(cur, spec.window, spec.stride, &tape.pool_argmax[l]);
                break;
            case LayerKind::avgpool: cur = ops::avgpool(cur, spec.window, spec.stride); break;
            case LayerKind::flatten: cur = cur.reshaped({cur.numel()}); break;
        }
    }
    tape.logits = std::move(cur);
    return tape;
}

double softmax_ce(const Tensor& logits, int label, Tensor& grad) {
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.numel(); ++i) mx = std::max(mx, (double)logits[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < logits.numel(); ++i) z += std::exp((double)logits[i] - mx);
    grad = Tensor(logits.shape());
    for (std::size_t i = 0; i < logits.numel(); ++i) {
        double p = std::exp((double)logits[i] - mx) / z;
        grad[i] = static_cast<float>(p - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
    return -((double)logits[label] - mx - std::log(z));
}

void conv_weight_grad(const Tensor& x, const Tensor& g, const LayerSpec& spec, LayerGrads& out) {
    const std::size_t C = x.extent(0), H = x.extent(1), W = x.extent(2);
    const std::size_t K = spec.weight.extent(0), kh = spec.weight.extent(2),
                      kw = spec.weight.extent(3);
    const std::size_t oh = g.extent(1), ow = g.extent(2);
    for (std::size_t k = 0; k < K; ++k) {
        double bacc = 0.0;
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const double gv = g[(k * oh + oy) * ow + ox];
                bacc += gv;
                if (gv == 0.0) continue;
                const std::int64_t iy0 = (std::int64_t)oy * spec.stride - spec.padding;
                const std::int64_t ix0 = (std::int64_t)ox * spec.stride - spec.padding;
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t ky = 0; ky < kh; ++ky) {
                        std::int64_t iy = iy0 + (std::int64_t)ky;
                        if (iy < 0 || iy >= (std::int64_t)H) continue;
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            std::int64_t ix = ix0 + (std::int64_t)kx;
                            if (ix < 0 || ix >= (std::int64_t)W) continue;
                            std::size_t wi = ((k * C + c) * kh + ky) * kw + kx;
                            out.weight[wi] += static_cast<float>(gv * x[(c * H + iy) * W + ix]);
                        }
                    }
            }
        out.bias[k] += static_cast<float>(bacc);
    }
}

void backward(const NetworkModel& model, const TrainTape& tape, Tensor grad,
              std::vector<LayerGrads>& grads) {
    for (std::size_t li = model.layer_count(); li-- > 0;) {
        const LayerSpec& spec = model.layers()[li];
        const Tensor& x = tape.inputs[li];
        switch (spec.kind) {
            case LayerKind::conv2d: {
                conv_weight_grad(x, grad, spec, grads[li]);
                grad = ops::conv2d_backward_input(grad, spec.weight, x.shape(), spec.stride,
                                                  spec.padding);
                break;
            }
            case LayerKind::linear: {
                const std::size_t out_f = spec.weight.extent(0), in_f = spec.weight.extent(1);
                for (std::size_t o = 0; o < out_f; ++o) {
                    grads[li].bias[o] += grad[o];
                    for (std::size_t i = 0; i < in_f; ++i)
                        grads[li].weight[o * in_f + i] += static_cast<float>(
                            (double)grad[o] * (double)x[i]);
                }
                grad = ops::linear_backward_input(grad, spec.weight);
                break;
            }
            case LayerKind::relu: grad = ops::relu_backward(grad, x); break;
            case LayerKind::maxpool:
                grad = ops::maxpool_backward(grad, tape.pool_argmax[li], x.shape());
                break;
            case LayerKind::avgpool:
                grad = ops::avgpool_backward(grad, spec.window, spec.stride, x.shape());
                break;
            case LayerKind::flatten: grad = grad.reshaped(x.shape()); break;
        }
    }
}

double accuracy(const NetworkModel& model, const std::vector<Tensor>& xs,
                const std::vector<int>& ys) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        if (argmax(forward_fp(model, xs[i], false).output) == (std::size_t)ys[i]) ++hit;
    return (double)hit / (double)xs.size();
}

NetworkModel train_fixture(std::uint64_t seed) {
    NetworkModel model = fixture_model(seed);
    SyntheticTask task;
    const int steps = 2500;
    const int batch = 32;
    const double momentum = 0.9;
    const double weight_decay = 1e-4;

    std::vector<LayerGrads> velocity(model.layer_count());
    for (std::size_t l = 0; l < model.layer_count(); ++l)
        if (model.layers()[l].has_weights()) {
            velocity[l].weight = Tensor::zeros(model.layers()[l].weight.shape());
            velocity[l].bias = Tensor::zeros(model.layers()[l].bias.shape());
        }

    std::mt19937_64 rng(seed ^ 0xdeadbeef);
    for (int step = 0; step < steps; ++step) {
        const double lr = step < 1500 ? 0.03 : (step < 2100 ? 0.006 : 0.001);
        std::vector<LayerGrads> grads(model.layer_count());
        for (std::size_t l = 0; l < model.layer_count(); ++l)
            if (model.layers()[l].has_weights()) {
                grads[l].weight = Tensor::zeros(model.layers()[l].weight.shape());
                grads[l].bias = Tensor::zeros(model.layers()[l].bias.shape());
            }
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            auto [x, y] = task.sample(rng);
            TrainTape tape = forward(model, x);
            Tensor g;
            loss += softmax_ce(tape.logits, y, g);
            backward(model, tape, std::move(g), grads);
        }
        for (std::size_t l = 0; l < model.layer_count(); ++l) {
            if (!model.layers()[l].has_weights()) continue;
            LayerSpec& spec = model.layers()[l];
            for (std::size_t i = 0; i < spec.weight.numel(); ++i) {
                double g = (double)grads[l].weight[i] / batch + weight_decay * spec.weight[i];
                double v = momentum * velocity[l].weight[i] + g;
                velocity[l].weight[i] = static_cast<float>(v);
                spec.weight[i] = static_cast<float>(spec.weight[i] - lr * v);
            }
            for (std::size_t i = 0; i < spec.bias.numel(); ++i) {
                double g = (double)grads[l].bias[i] / batch;
                double v = momentum * velocity[l].bias[i] + g;
                velocity[l].bias[i] = static_cast<float>(v);
                spec.bias[i] = static_cast<float>(spec.bias[i] - lr * v);
            }
        }
        if ((step + 1) % 100 == 0)
            std::printf("step %4d  loss %.4f\n", step + 1, loss / batch);
    }
    // Re-validate the shape chain on the updated weights.
    return NetworkModel(model.layers(), model.input_shape());
}

} // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: %s <output-dir>\n", argv[0]);
        return 1;
    }
    std::filesystem::path dir(argv[1]);
    std::filesystem::create_directories(dir);

    NetworkModel random_model = fixture_model(42);
    save_container(wrap_fp_model(random_model), (dir / "fixture_random.qnet").string());
    std::printf("wrote %s\n", (dir / "fixture_random.qnet").c_str());

    NetworkModel trained = train_fixture(42);
    SyntheticTask task;
    auto [xs, ys] = task.batch(1000, 20260101);
    std::printf("trained fixture accuracy on held-out set: %.4f\n", accuracy(trained, xs, ys));
    save_container(wrap_fp_model(trained), (dir / "fixture_trained.qnet").string());
    std::printf("wrote %s\n", (dir / "fixture_trained.qnet").c_str());
    return 0;
}
