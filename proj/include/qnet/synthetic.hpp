#pragma once

#include "qnet/netmodel.hpp"

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace qnet {

enum class TensorDist { normal, uniform, lognormal, laplace, bimodal };

// Seeded random tensor; lognormal/laplace provide the heavy-tailed corpora.
Tensor random_tensor(const std::vector<std::size_t>& shape, std::mt19937_64& rng,
                     TensorDist dist = TensorDist::normal, double scale = 1.0);

// Random tensor with a distribution drawn from the mixed corpus.
Tensor random_mixed_tensor(const std::vector<std::size_t>& shape, std::mt19937_64& rng);

// Small random conv net (conv/relu/pool/linear) with a valid shape chain.
NetworkModel random_conv_model(std::mt19937_64& rng, int depth = 2);

// Random linear-only net (linear layers, no activations) for the MSE-bound
// diagnostic.
NetworkModel random_linear_model(std::mt19937_64& rng, int n_layers, std::size_t width);

// The committed fixture topology: 3x8x8 input, three conv/relu/pool stages
// (16, 64, 128 kernels) and a 10-way classifier head.
NetworkModel fixture_model(std::uint64_t seed);
std::vector<std::size_t> fixture_input_shape();

// 10-class synthetic task: per-class template patterns plus amplitude jitter
// and additive noise. Deterministic for a given seed.
struct SyntheticTask {
    std::vector<Tensor> templates;
    double noise_sigma = 0.3;

    explicit SyntheticTask(std::uint64_t seed = 7);
    std::pair<Tensor, int> sample(std::mt19937_64& rng) const;
    std::pair<std::vector<Tensor>, std::vector<int>> batch(std::size_t n, std::uint64_t seed) const;
};

} // namespace qnet
