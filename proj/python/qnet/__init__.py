"""Python front end for the MMSE low-bit quantization toolkit."""

from qnet._qnet import (  # noqa: F401
    IoError,
    MultiQuantResult,
    NetworkModel,
    QuantResult,
    QuantScheme,
    QuantizedModel,
    QuantizedTensor,
    ValidationError,
    alternating_multi_quantize,
    alternating_quantize,
    calibrate_model,
    dequantize,
    dual_line_search,
    fixture_model,
    golden_section_quantize,
    load_calibration,
    load_container,
    mse,
    omse_grid_search,
    project,
    quant_range,
    quantize_weights,
    refine_scales,
    save_calibration,
    save_container,
    select_key_layers,
    synthetic_batch,
    uniform_quantize,
    wrap_fp_model,
)

__all__ = [
    "IoError",
    "MultiQuantResult",
    "NetworkModel",
    "QuantResult",
    "QuantScheme",
    "QuantizedModel",
    "QuantizedTensor",
    "ValidationError",
    "alternating_multi_quantize",
    "alternating_quantize",
    "calibrate_model",
    "dequantize",
    "dual_line_search",
    "fixture_model",
    "golden_section_quantize",
    "load_calibration",
    "load_container",
    "mse",
    "omse_grid_search",
    "project",
    "quant_range",
    "quantize_weights",
    "refine_scales",
    "save_calibration",
    "save_container",
    "select_key_layers",
    "synthetic_batch",
    "uniform_quantize",
    "wrap_fp_model",
]
