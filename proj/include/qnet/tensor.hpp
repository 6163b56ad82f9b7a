#pragma once

#include "qnet/common.hpp"

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace qnet {

// Dense row-major float32 tensor. Activations are CHW / NCHW, conv weights
// are KCHW. All quantization entry points require finite values.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);
    Tensor(std::initializer_list<std::size_t> shape, std::vector<float> data);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, float value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    bool all_finite() const;
    void require_finite(const char* what) const;

    float min() const;
    float max() const;
    float abs_max() const;

    // Contiguous sub-tensor along axis 0, e.g. one KCHW kernel slice.
    Tensor slice0(std::size_t index) const;
    Tensor reshaped(std::vector<std::size_t> shape) const;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

bool same_shape(const Tensor& a, const Tensor& b);

// Integer domain of a quantized tensor: bit width p plus signedness and
// whether an additive offset is carried alongside the scale.
struct QuantScheme {
    int bits = 4;
    bool is_signed = true;
    bool offset_enabled = false;

    static QuantScheme signed_bits(int p) { return QuantScheme{p, true, false}; }
    static QuantScheme unsigned_offset(int p) { return QuantScheme{p, false, true}; }

    void validate() const;
    bool operator==(const QuantScheme&) const = default;
};

struct QuantRange {
    int lo = 0;
    int hi = 0;
};

// Closed integer interval of the scheme: signed {-2^(p-1) .. 2^(p-1)-1},
// unsigned {0 .. 2^p-1}.
QuantRange quant_range(const QuantScheme& scheme);

// Integer value array plus the linear reconstruction parameters:
// dequantize(i) = gamma * alpha * values[i] + delta.
// Values are stored in int8 containers for any p <= 8; the scheme range is
// enforced logically.
struct QuantizedTensor {
    std::vector<std::size_t> shape;
    std::vector<std::int8_t> values;
    double alpha = 1.0;
    double delta = 0.0;
    double gamma = 1.0;
    QuantScheme scheme;

    std::size_t numel() const { return values.size(); }
    void validate() const;
};

// Round-half-away-from-zero projection of (T - delta)/alpha onto the scheme
// range, followed by saturation. gamma of the result is 1.
QuantizedTensor project(const Tensor& t, double alpha, double delta, const QuantScheme& scheme);

Tensor dequantize(const QuantizedTensor& q);

// Mean squared elementwise difference.
double mse(const Tensor& a, const Tensor& b);

// MSE between a float tensor and the reconstruction of q, without
// materializing the dequantized tensor.
double reconstruction_mse(const Tensor& t, const QuantizedTensor& q);

namespace detail {
// Shared rounding rule (ties away from zero) used by every projection path.
inline double round_half_away(double x) {
    return (x >= 0.0) ? std::floor(x + 0.5) : std::ceil(x - 0.5);
}

// Scales are carried at float32 precision throughout (the container stores
// them as f32); narrowing once at the search boundary keeps in-memory and
// serialized models bit-identical.
inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }
} // namespace detail

} // namespace qnet
