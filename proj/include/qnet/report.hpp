#pragma once

#include "qnet/netmodel.hpp"

#include <string>

namespace qnet {

// MSE-vs-scale curve of one weight group against its original FP tensor.
// Single-term plans produce `alpha,mse` rows over the omse grid (one row per
// grid point, same grid construction and tie-break as the search). Dual plans
// produce an `alpha1,alpha2,mse` landscape over the joint grid.
std::string curve_csv(const QuantizedModel& qmodel, std::size_t layer, std::size_t kernel,
                      int grid_points);

// Per-layer statistics of the fitted scales: alpha normalized by max|T| of
// the tensor it approximates, beta1 normalized by the calibration max|X|,
// and raw gamma. Mean and standard deviation over the layer's groups/terms.
std::string scales_csv(const QuantizedModel& qmodel);

} // namespace qnet
