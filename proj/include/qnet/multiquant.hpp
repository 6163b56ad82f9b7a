#pragma once

#include "qnet/quantizer.hpp"

#include <functional>
#include <map>
#include <set>
#include <vector>

namespace qnet {

// Approximation of one tensor as a sum of low-precision terms
// sum_i alpha_i * T~^i (+ offsets).
struct MultiQuantResult {
    std::vector<QuantizedTensor> terms;
    double mse = 0.0;
    int iterations = 0;   // completed sweeps
    bool converged = false;

    Tensor reconstruct() const;
};

// Single-tensor quantization mapping phi plugged into the alternating sweeps.
using QuantizerFn = std::function<QuantResult(const Tensor&, const QuantScheme&)>;

QuantizerFn omse_quantizer(int grid_points = 500);

// Alternating sweeps: term j is re-fit by phi on the residual of the others.
// Terms start at zero, so sweep one reproduces the greedy residual cascade.
// A candidate term is kept only if it does not increase the objective, which
// makes the sweep MSE sequence non-increasing even when phi's search grid
// shifts with the residual. Stops when the relative MSE improvement of a full
// sweep drops below eps, or after max_iter sweeps.
MultiQuantResult alternating_multi_quantize(const Tensor& t, const std::vector<QuantScheme>& schemes,
                                            const QuantizerFn& phi, double eps = 1e-4,
                                            int max_iter = 50);

// Exact dual search (n = 2): joint grid over (alpha1, alpha2) in
// (0, alpha_max1] x (0, alpha_max2]; at each grid pair every element picks the
// best integer t~ in scheme1's range with t~2 the elementwise-optimal rounded
// residual. Ties break lexicographically toward smaller scales. extra_pairs
// appends candidate scale pairs to the grid (comparison harnesses inject a
// baseline solution's scales, mirroring the single-tensor extra_alphas hook).
// Cost is O(grid^2 * 2^p1 * numel) — intended for conv kernels.
MultiQuantResult dual_line_search(const Tensor& t, const QuantScheme& scheme1,
                                  const QuantScheme& scheme2, int grid_points = 100,
                                  const std::vector<std::pair<double, double>>& extra_pairs = {});

// Dual objective at one fixed (alpha1, alpha2) pair with the elementwise-exact
// integer assignment (used for landscape dumps). Returns the mean squared error.
double dual_objective_mse(const Tensor& t, double alpha1, double alpha2,
                          const QuantScheme& scheme1, const QuantScheme& scheme2);

// Key layers: post-quantization MSE above the threshold tau.
std::set<int> select_key_layers(const std::map<int, double>& per_layer_mse, double tau);

inline constexpr double kDefaultTau = 8e-5;

} // namespace qnet
