#include "qnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace qnet {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) {
        if (e == 0) throw ValidationError("tensor extents must be positive");
        n *= e;
    }
    return n;
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size())
        throw ValidationError("tensor shape does not match data length");
}

Tensor::Tensor(std::initializer_list<std::size_t> shape, std::vector<float> data)
    : Tensor(std::vector<std::size_t>(shape), std::move(data)) {}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, float value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void Tensor::require_finite(const char* what) const {
    if (!all_finite()) throw ValidationError(std::string(what) + ": tensor contains NaN/Inf");
}

float Tensor::min() const {
    if (data_.empty()) throw ValidationError("min of empty tensor");
    return *std::min_element(data_.begin(), data_.end());
}

float Tensor::max() const {
    if (data_.empty()) throw ValidationError("max of empty tensor");
    return *std::max_element(data_.begin(), data_.end());
}

float Tensor::abs_max() const {
    float m = 0.0f;
    for (float v : data_) m = std::max(m, std::fabs(v));
    return m;
}

Tensor Tensor::slice0(std::size_t index) const {
    if (shape_.empty()) throw ValidationError("slice0 on rank-0 tensor");
    if (index >= shape_[0]) throw ValidationError("slice0 index out of range");
    std::vector<std::size_t> sub(shape_.begin() + 1, shape_.end());
    if (sub.empty()) sub.push_back(1);
    std::size_t stride = numel() / shape_[0];
    std::vector<float> data(data_.begin() + index * stride, data_.begin() + (index + 1) * stride);
    return Tensor(std::move(sub), std::move(data));
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_numel(shape) != numel()) throw ValidationError("reshape changes element count");
    return Tensor(std::move(shape), data_);
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

void QuantScheme::validate() const {
    if (bits < 1 || bits > 8)
        throw ValidationError("quantization bit width must be in [1, 8]");
}

QuantRange quant_range(const QuantScheme& scheme) {
    scheme.validate();
    if (scheme.is_signed)
        return QuantRange{-(1 << (scheme.bits - 1)), (1 << (scheme.bits - 1)) - 1};
    return QuantRange{0, (1 << scheme.bits) - 1};
}

void QuantizedTensor::validate() const {
    scheme.validate();
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    if (n != values.size()) throw ValidationError("quantized tensor shape/value mismatch");
    if (!(alpha > 0.0)) throw ValidationError("quantized tensor scale must be positive");
    if (!scheme.offset_enabled && delta != 0.0)
        throw ValidationError("offset-disabled scheme carries nonzero delta");
    const auto [lo, hi] = quant_range(scheme);
    for (std::int8_t v : values)
        if (v < lo || v > hi) throw ValidationError("quantized value outside scheme range");
}

QuantizedTensor project(const Tensor& t, double alpha, double delta, const QuantScheme& scheme) {
    if (!(alpha > 0.0)) throw ValidationError("project: scale must be positive");
    t.require_finite("project");
    const auto [lo, hi] = quant_range(scheme);
    QuantizedTensor q;
    q.shape = t.shape();
    q.values.resize(t.numel());
    q.alpha = alpha;
    q.delta = scheme.offset_enabled ? delta : 0.0;
    q.scheme = scheme;
    const float* src = t.data();
    for (std::size_t i = 0; i < q.values.size(); ++i) {
        double r = detail::round_half_away((static_cast<double>(src[i]) - q.delta) / alpha);
        r = std::clamp(r, static_cast<double>(lo), static_cast<double>(hi));
        q.values[i] = static_cast<std::int8_t>(r);
    }
    return q;
}

Tensor dequantize(const QuantizedTensor& q) {
    Tensor out(q.shape);
    float* dst = out.data();
    for (std::size_t i = 0; i < q.values.size(); ++i)
        dst[i] = static_cast<float>(q.gamma * q.alpha * static_cast<double>(q.values[i]) + q.delta);
    return out;
}

double mse(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b)) throw ValidationError("mse: shape mismatch");
    double acc = 0.0;
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

double reconstruction_mse(const Tensor& t, const QuantizedTensor& q) {
    if (t.shape() != q.shape) throw ValidationError("reconstruction_mse: shape mismatch");
    double acc = 0.0;
    const float* src = t.data();
    for (std::size_t i = 0; i < q.values.size(); ++i) {
        // Narrow through float like dequantize() so this recomputes the exact
        // same value as mse(t, dequantize(q)).
        double rec = static_cast<float>(q.gamma * q.alpha * static_cast<double>(q.values[i]) + q.delta);
        double d = static_cast<double>(src[i]) - rec;
        acc += d * d;
    }
    return acc / static_cast<double>(t.numel());
}

} // namespace qnet
