#include "qnet/synthetic.hpp"

#include <cmath>

namespace qnet {

Tensor random_tensor(const std::vector<std::size_t>& shape, std::mt19937_64& rng, TensorDist dist,
                     double scale) {
    Tensor t(shape);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    std::lognormal_distribution<double> logn(0.0, 1.0);
    std::exponential_distribution<double> expo(1.0);
    std::bernoulli_distribution sign(0.5);
    for (std::size_t i = 0; i < t.numel(); ++i) {
        double v = 0.0;
        switch (dist) {
            case TensorDist::normal: v = normal(rng); break;
            case TensorDist::uniform: v = uni(rng); break;
            case TensorDist::lognormal: v = logn(rng) * (sign(rng) ? 1.0 : -1.0); break;
            case TensorDist::laplace: v = expo(rng) * (sign(rng) ? 1.0 : -1.0); break;
            case TensorDist::bimodal: v = normal(rng) * 0.1 + (sign(rng) ? 1.0 : -1.0); break;
        }
        t[i] = static_cast<float>(v * scale);
    }
    return t;
}

Tensor random_mixed_tensor(const std::vector<std::size_t>& shape, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 4);
    std::uniform_real_distribution<double> sc(0.05, 4.0);
    return random_tensor(shape, rng, static_cast<TensorDist>(pick(rng)), sc(rng));
}

NetworkModel random_conv_model(std::mt19937_64& rng, int depth) {
    std::uniform_int_distribution<std::size_t> chan(2, 8);
    std::uniform_int_distribution<std::size_t> spatial(6, 10);
    std::size_t c = chan(rng), h = spatial(rng), w = h;
    std::vector<std::size_t> input{c, h, w};

    std::vector<LayerSpec> layers;
    std::size_t cur_c = c, cur_h = h, cur_w = w;
    for (int d = 0; d < depth; ++d) {
        std::size_t k = chan(rng);
        Tensor weight = random_tensor({k, cur_c, 3, 3}, rng, TensorDist::normal, 0.5);
        Tensor bias = random_tensor({k}, rng, TensorDist::uniform, 0.1);
        layers.push_back(LayerSpec::conv2d(std::move(weight), std::move(bias), 1, 1));
        layers.push_back(LayerSpec::relu());
        cur_c = k;
        if (d == 0 && cur_h >= 4) {
            layers.push_back(LayerSpec::maxpool(2, 2));
            cur_h /= 2;
            cur_w /= 2;
        }
    }
    layers.push_back(LayerSpec::flatten());
    std::size_t feat = cur_c * cur_h * cur_w;
    std::uniform_int_distribution<std::size_t> out_dim(2, 6);
    std::size_t out = out_dim(rng);
    layers.push_back(LayerSpec::linear(random_tensor({out, feat}, rng, TensorDist::normal, 0.3),
                                       random_tensor({out}, rng, TensorDist::uniform, 0.1)));
    return NetworkModel(std::move(layers), std::move(input));
}

NetworkModel random_linear_model(std::mt19937_64& rng, int n_layers, std::size_t width) {
    std::vector<LayerSpec> layers;
    for (int i = 0; i < n_layers; ++i) {
        Tensor w = random_tensor({width, width}, rng, TensorDist::normal,
                                 1.0 / std::sqrt(static_cast<double>(width)));
        layers.push_back(LayerSpec::linear(std::move(w), Tensor::zeros({width})));
    }
    return NetworkModel(std::move(layers), {width});
}

std::vector<std::size_t> fixture_input_shape() { return {3, 8, 8}; }

NetworkModel fixture_model(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    // Per-kernel magnitude spread mirrors the heterogeneous dynamic ranges of
    // trained conv layers, which is what makes per-kernel scaling matter.
    auto conv_init = [&rng](std::size_t k, std::size_t c) {
        double fan_in = static_cast<double>(c * 9);
        Tensor w = random_tensor({k, c, 3, 3}, rng, TensorDist::normal, std::sqrt(2.0 / fan_in));
        std::uniform_real_distribution<double> logspread(-1.1, 1.1);
        for (std::size_t kk = 0; kk < k; ++kk) {
            double f = std::exp(logspread(rng));
            for (std::size_t i = kk * c * 9; i < (kk + 1) * c * 9; ++i)
                w[i] = static_cast<float>(w[i] * f);
        }
        return w;
    };
    std::vector<LayerSpec> layers;
    layers.push_back(LayerSpec::conv2d(conv_init(16, 3), Tensor::zeros({16}), 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
    layers.push_back(LayerSpec::conv2d(conv_init(64, 16), Tensor::zeros({64}), 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
    layers.push_back(LayerSpec::conv2d(conv_init(128, 64), Tensor::zeros({128}), 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
    layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::linear(
        random_tensor({10, 128}, rng, TensorDist::normal, std::sqrt(1.0 / 128.0)),
        Tensor::zeros({10})));
    return NetworkModel(std::move(layers), fixture_input_shape());
}

SyntheticTask::SyntheticTask(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    // Classes share a common base pattern and differ only by a small
    // distinctive component, so class margins are narrow and sloppy
    // quantization visibly flips predictions.
    Tensor base = random_tensor(fixture_input_shape(), rng, TensorDist::normal, 1.0);
    templates.reserve(10);
    for (int c = 0; c < 10; ++c) {
        Tensor distinct = random_tensor(fixture_input_shape(), rng, TensorDist::normal, 0.45);
        Tensor t = base;
        for (std::size_t i = 0; i < t.numel(); ++i)
            t[i] = static_cast<float>(static_cast<double>(t[i]) + distinct[i]);
        templates.push_back(std::move(t));
    }
}

std::pair<Tensor, int> SyntheticTask::sample(std::mt19937_64& rng) const {
    std::uniform_int_distribution<int> cls(0, 9);
    std::uniform_real_distribution<double> amp(0.95, 1.05);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    int c = cls(rng);
    double a = amp(rng);
    Tensor x = templates[c];
    for (std::size_t i = 0; i < x.numel(); ++i)
        x[i] = static_cast<float>(a * static_cast<double>(x[i]) + noise(rng));
    return {std::move(x), c};
}

std::pair<std::vector<Tensor>, std::vector<int>> SyntheticTask::batch(std::size_t n,
                                                                      std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<Tensor> xs;
    std::vector<int> ys;
    xs.reserve(n);
    ys.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto [x, y] = sample(rng);
        xs.push_back(std::move(x));
        ys.push_back(y);
    }
    return {std::move(xs), std::move(ys)};
}

} // namespace qnet
