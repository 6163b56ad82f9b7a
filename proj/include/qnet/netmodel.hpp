#pragma once

#include "qnet/multiquant.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qnet {

enum class LayerKind { conv2d, linear, relu, maxpool, avgpool, flatten };

const char* to_string(LayerKind k);
LayerKind layer_kind_from_string(const std::string& s);

// One layer of a sequential net. conv2d weights are KCHW, linear weights are
// out x in; biases are full precision throughout the toolkit.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    Tensor weight;
    Tensor bias;
    int stride = 1;
    int padding = 0;
    int window = 2;   // pools

    static LayerSpec conv2d(Tensor weight, Tensor bias, int stride = 1, int padding = 0);
    static LayerSpec linear(Tensor weight, Tensor bias);
    static LayerSpec relu();
    static LayerSpec maxpool(int window, int stride);
    static LayerSpec avgpool(int window, int stride);
    static LayerSpec flatten();

    bool has_weights() const { return kind == LayerKind::conv2d || kind == LayerKind::linear; }
    // Number of weight groups under kernel-wise partitioning.
    std::size_t kernel_count() const;
};

class NetworkModel {
public:
    NetworkModel() = default;
    // Validates the shape chain end to end and caches per-layer input shapes.
    NetworkModel(std::vector<LayerSpec> layers, std::vector<std::size_t> input_shape);

    const std::vector<LayerSpec>& layers() const { return layers_; }
    std::vector<LayerSpec>& layers() { return layers_; }
    const std::vector<std::size_t>& input_shape() const { return input_shape_; }
    const std::vector<std::size_t>& output_shape() const { return shapes_.back(); }
    // Input shape of layer l (single sample, no batch axis).
    const std::vector<std::size_t>& layer_input_shape(std::size_t l) const { return shapes_.at(l); }
    std::size_t layer_count() const { return layers_.size(); }

private:
    std::vector<LayerSpec> layers_;
    std::vector<std::size_t> input_shape_;
    std::vector<std::vector<std::size_t>> shapes_;   // layer inputs + final output
};

struct ForwardResult {
    Tensor output;
    std::vector<Tensor> layer_inputs;   // populated when capture is requested
};

// Single-sample forward pass. X must match the model input shape.
ForwardResult forward_fp(const NetworkModel& model, const Tensor& x, bool capture = false);

// Batched convenience wrapper: X has a leading sample axis.
std::vector<Tensor> forward_fp_batch(const NetworkModel& model, const Tensor& x_batch);

enum class Partitioning { kernel_wise, global };

const char* to_string(Partitioning p);
Partitioning partitioning_from_string(const std::string& s);

// One quantized weight group: a conv kernel / linear row under kernel-wise
// partitioning, or the whole tensor under global partitioning. gamma is the
// data-driven rescale shared by all terms of the group.
struct WeightGroup {
    std::vector<QuantizedTensor> terms;
    double gamma = 1.0;
    double weight_mse = 0.0;

    void set_gamma(double g);
    Tensor dequantized() const;   // gamma * sum_t alpha_t * values_t (+ offsets)
};

// Calibrated activation quantization for one layer input.
struct ActQuant {
    bool enabled = false;
    QuantScheme scheme;
    double beta1 = 1.0;
    double delta = 0.0;
    bool residual = false;        // second pass encoding X - (b1*X1~ + delta)
    double beta2 = 1.0;
    QuantScheme residual_scheme;  // signed, same bit width
    double calib_mse_single = 0.0;
    double calib_mse_residual = 0.0;
    double calib_abs_max = 0.0;   // max |X| over the calibration set (for reports)
};

struct LayerQuantPlan {
    Partitioning partitioning = Partitioning::kernel_wise;
    std::vector<WeightGroup> groups;   // kernel_count entries, or 1 when global
    ActQuant act;
    bool is_key_layer = false;
    double layer_weight_mse = 0.0;     // element-count-weighted mean over groups
};

struct QuantizedModel {
    NetworkModel base;                                  // FP weights retained
    std::vector<std::optional<LayerQuantPlan>> plans;   // one slot per layer
    bool quantize_input = true;                         // network-input activation quantization
    std::map<std::string, std::string> provenance;

    void validate() const;
    // Weights of layer l reconstructed from the plan (shapes match base).
    Tensor dequantized_weight(std::size_t l) const;
    // Model with plan weights dequantized into an FP net (bias unchanged).
    NetworkModel dequantized_model() const;
};

enum class DualSearch { alternating, exact };

struct WeightQuantConfig {
    QuantScheme scheme;
    QuantMethod method = QuantMethod::omse;
    int grid_points = 500;
    Partitioning conv_partitioning = Partitioning::kernel_wise;
    Partitioning fc_partitioning = Partitioning::global;
    bool dual_enabled = true;
    double tau = kDefaultTau;
    QuantScheme dual_scheme2;            // defaults to `scheme` when bits == 0
    DualSearch dual_search = DualSearch::alternating;
    int dual_grid_points = 100;
    double multi_eps = 1e-4;
    int multi_max_iter = 50;

    WeightQuantConfig() { dual_scheme2.bits = 0; }
    QuantScheme second_scheme() const { return dual_scheme2.bits == 0 ? scheme : dual_scheme2; }
};

// Quantizes every weighted layer (first and last included). Layers whose
// weighted-mean MSE exceeds tau are re-quantized with two terms per group.
QuantizedModel quantize_weights(const NetworkModel& model, const WeightQuantConfig& cfg);

enum class SimMode { integer_exact, float_sim };

// Quantized forward pass. integer_exact runs every MAC in 64-bit integer
// accumulation and applies the scale products afterwards; float_sim evaluates
// the algebraically identical expression on dequantized operands.
Tensor forward_quant(const QuantizedModel& qmodel, const Tensor& x, SimMode mode);

// float_sim forward that also returns the output of every layer (used by the
// MSE-bound diagnostic and the refinement objective).
ForwardResult forward_quant_capture(const QuantizedModel& qmodel, const Tensor& x);

struct CompressionRatio {
    double cr_weights = 1.0;
    double cr_activations = 1.0;
};

// Bit accounting of one layer's quantized weights (values + scale scalars,
// bias excluded). Exposed for reporting.
struct LayerBitCount {
    std::uint64_t value_bits = 0;
    std::uint64_t scale_bits = 0;
    std::uint64_t bias_bits = 0;
    std::uint64_t fp_weight_bits = 0;
};

LayerBitCount layer_weight_bits(const LayerSpec& layer, const LayerQuantPlan& plan);

CompressionRatio compression_ratio(const QuantizedModel& qmodel);

enum class InputDist { normal, uniform };

struct MseBoundRow {
    std::size_t layer = 0;
    double measured_e2 = 0.0;
    double bound_e2 = 0.0;
};

// Monte-Carlo check of the recursive output-MSE bound on nets made of
// conv/linear/flatten layers only (no nonlinearities).
std::vector<MseBoundRow> mse_bound_report(const NetworkModel& model, const QuantizedModel& qmodel,
                                          int n_samples, InputDist dist, std::uint64_t seed);

std::size_t argmax(const Tensor& t);

} // namespace qnet
