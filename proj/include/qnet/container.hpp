#pragma once

#include "qnet/netmodel.hpp"

#include <string>
#include <vector>

namespace qnet {

// QNET1 model container: 5-byte magic, u64 manifest length, UTF-8 JSON
// manifest, u64 blob length, blob. Tensor payloads live in the blob
// (little-endian: f32 for FP tensors, signed 8-bit for quantized values);
// shapes, hyperparameters, plans and scales (narrowed to 32-bit floats) live
// in the manifest. save(load(bytes)) is byte-identical.
std::vector<std::uint8_t> save_container_bytes(const QuantizedModel& model);
QuantizedModel load_container_bytes(const std::vector<std::uint8_t>& bytes);

// FP-only convenience: a model with empty plans.
QuantizedModel wrap_fp_model(const NetworkModel& model);
bool has_plans(const QuantizedModel& model);

void save_container(const QuantizedModel& model, const std::string& path);
QuantizedModel load_container(const std::string& path);

// QCAL1 calibration/input set: 5-byte magic, u32 sample count, u32 rank,
// u32 extents, then the samples as little-endian f32.
void save_calibration(const std::vector<Tensor>& samples, const std::string& path);
std::vector<Tensor> load_calibration(const std::string& path);

// Atomic file write (temp + rename).
void write_file_atomic(const std::string& path, const void* data, std::size_t size);
void write_text_atomic(const std::string& path, const std::string& text);

} // namespace qnet
