#pragma once

#include "qnet/tensor.hpp"

#include <vector>

namespace qnet {

enum class QuantMethod { uniform, omse, golden, alternating };

const char* to_string(QuantMethod m);
QuantMethod quant_method_from_string(const std::string& s);

struct QuantResult {
    QuantizedTensor quantized;
    double mse = 0.0;
    QuantMethod method = QuantMethod::uniform;
    int grid_points = 0;
    int iterations = 0;         // alternating only
    bool degenerate = false;    // all-zero input or collapsed iterate
};

// Scale of the plain uniform rule: offset schemes use
// delta = min(T), alpha = (max(T) - delta)/(2^p - 1); no-offset schemes use
// delta = 0, alpha = max|T| / hi. Also the upper end of every search grid.
double uniform_alpha(const Tensor& t, const QuantScheme& scheme);

// Offset fixed during every scale search: min(T) for offset schemes, else 0.
double search_delta(const Tensor& t, const QuantScheme& scheme);

// Objective shared by all searches: reconstruction MSE of
// project(t, alpha, delta, scheme), evaluated identically to
// mse(t, dequantize(project(...))).
double projection_mse(const Tensor& t, double alpha, double delta, const QuantScheme& scheme);

QuantResult uniform_quantize(const Tensor& t, const QuantScheme& scheme);

// Exact line search over the grid {alpha_max * k/grid_points : k = 1..grid_points}.
// Ties break toward smaller alpha. extra_alphas are appended candidate scales
// (used by comparison harnesses to inject a baseline into the scan).
QuantResult omse_grid_search(const Tensor& t, const QuantScheme& scheme, int grid_points,
                             const std::vector<double>& extra_alphas = {});

// Golden-section search over alpha in (0, alpha_max]. Stops once the bracket
// width drops below tol * alpha_max and returns the best alpha visited; the
// objective is non-convex so the final bracket need not contain the optimum.
QuantResult golden_section_quantize(const Tensor& t, const QuantScheme& scheme, double tol = 1e-4);

// Coordinate descent on (alpha, values): project for fixed alpha, then the
// least-squares alpha for fixed values. Objective is non-increasing.
QuantResult alternating_quantize(const Tensor& t, const QuantScheme& scheme, int max_iter = 100);

QuantResult quantize_with(QuantMethod method, const Tensor& t, const QuantScheme& scheme,
                          int grid_points);

} // namespace qnet
