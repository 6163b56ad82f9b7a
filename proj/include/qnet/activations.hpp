#pragma once

#include "qnet/netmodel.hpp"

#include <cstdint>
#include <vector>

namespace qnet {

// Collected inputs of one weighted layer across the calibration set, plus the
// scales fitted on them.
struct LayerCalibration {
    std::size_t layer = 0;
    Tensor stacked;            // (d, ...) or a flat reservoir when capped
    bool subsampled = false;
    double beta1 = 1.0;
    double delta = 0.0;
    bool has_residual = false;
    double beta2 = 1.0;
    double mse_single = 0.0;
    double mse_residual = 0.0;
    bool degenerate = false;   // all-zero activations
};

struct CalibrationStats {
    std::size_t sample_count = 0;
    std::vector<LayerCalibration> layers;

    const LayerCalibration& for_layer(std::size_t layer) const;
};

// Runs the FP forward pass over the calibration set and stacks the input of
// every weighted layer along a new leading axis. Layers whose stacked size
// exceeds reservoir_cap elements keep a seeded reservoir subsample instead
// (approximation knob for large calibration sets).
CalibrationStats collect_activations(const NetworkModel& model, const std::vector<Tensor>& calib_inputs,
                                     std::size_t reservoir_cap = (1ull << 22),
                                     std::uint64_t seed = 0x9e3779b97f4a7c15ull);

struct ActScaleFit {
    double beta1 = 1.0;
    double delta = 0.0;
    double mse = 0.0;
    bool degenerate = false;
};

// MMSE saturation threshold over the stacked calibration tensor (50-point
// grid by default). Offset schemes fix delta at the calibration minimum.
ActScaleFit calibrate_activation_scale(const Tensor& x_l, const QuantScheme& scheme,
                                       int grid_points = 50,
                                       const std::vector<double>& extra_alphas = {});

struct ResidualFit {
    double beta2 = 1.0;
    double mse = 0.0;          // two-term reconstruction MSE
    bool disabled = false;     // zero residual
};

// Scale for the residual X - (beta1*X1~ + delta), quantized signed at the
// same bit width. Greedy one-pass fit, beta1 stays fixed.
ResidualFit calibrate_residual_scale(const Tensor& x_l, double beta1, double delta,
                                     const QuantScheme& scheme, int grid_points = 50);

struct MinMaxScale {
    double alpha = 1.0;
    double delta = 0.0;
};

// Baseline clipping to the mean per-sample extrema of the calibration set.
// `stacked` must keep its leading sample axis.
MinMaxScale minmax_baseline(const Tensor& stacked, const QuantScheme& scheme);

// Fits activation scales for every weighted layer of qmodel and writes them
// into the plans. Residual scales are fitted only for key layers when
// residual_on_key_layers is set. When qmodel.quantize_input is false, the
// first weighted layer keeps an FP input.
CalibrationStats calibrate_model(QuantizedModel& qmodel, const std::vector<Tensor>& calib_inputs,
                                 const QuantScheme& act_scheme, int grid_points = 50,
                                 bool residual_on_key_layers = true);

} // namespace qnet
