#pragma once

#include "qnet/netmodel.hpp"

#include <vector>

namespace qnet {

enum class Optimizer { sgd, sgd_momentum };

struct RefineConfig {
    int epochs = 25;
    int batch_size = 32;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::sgd;
    double momentum = 0.9;
    int calib_size = 500;   // M

    void validate() const;
};

struct LayerGammaStats {
    std::size_t layer = 0;
    double mean = 1.0;
    double stddev = 0.0;
};

struct RefineTrace {
    std::vector<double> objective;          // epochs + 1 entries, index 0 = initial
    std::vector<LayerGammaStats> gamma_stats;
};

struct RefineResult {
    QuantizedModel model;
    RefineTrace trace;
};

// Data-driven rescale of the per-group quantization scales: minimizes the
// summed squared output mismatch against the FP model over the calibration
// set by mini-batch gradient descent on the gammas only. The forward runs on
// dequantized weights with FP activations; integer values, alpha and delta
// never change. If an epoch raises the full objective the step is rolled back
// and the learning rate halved, so the recorded objective is non-increasing.
RefineResult refine_scales(const NetworkModel& model, const QuantizedModel& qmodel,
                           const std::vector<Tensor>& calib_inputs, const RefineConfig& cfg);

// Central finite differences of the refinement objective w.r.t. every gamma
// against the analytic gradient, on one input. Gammas whose downstream ReLU
// inputs lie within eps of zero are excluded (kink exclusion). Returns the
// max relative discrepancy.
double grad_check(const NetworkModel& model, const QuantizedModel& qmodel, const Tensor& x,
                  double eps);

} // namespace qnet
