#include "qnet/activations.hpp"
#include "qnet/container.hpp"
#include "qnet/refine.hpp"
#include "qnet/report.hpp"
#include "qnet/synthetic.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace qnet;

namespace {

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& arr) {
    std::vector<std::size_t> shape(arr.ndim());
    for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<std::size_t>(arr.shape(i));
    std::vector<float> data(arr.data(), arr.data() + arr.size());
    return Tensor(std::move(shape), std::move(data));
}

py::array_t<float> tensor_to_array(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<float> arr(shape);
    std::copy(t.data(), t.data() + t.numel(), arr.mutable_data());
    return arr;
}

std::vector<Tensor> tensors_from_list(const py::list& list) {
    std::vector<Tensor> out;
    out.reserve(list.size());
    for (const auto& item : list)
        out.push_back(tensor_from_array(
            item.cast<py::array_t<float, py::array::c_style | py::array::forcecast>>()));
    return out;
}

QuantScheme make_scheme(int bits, bool is_signed, bool offset_enabled) {
    QuantScheme s{bits, is_signed, offset_enabled};
    s.validate();
    return s;
}

} // namespace

PYBIND11_MODULE(_qnet, m) {
    m.doc() = "MMSE low-bit quantization toolkit";

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);

    py::class_<QuantScheme>(m, "QuantScheme")
        .def(py::init(&make_scheme), py::arg("bits") = 4, py::arg("is_signed") = true,
             py::arg("offset_enabled") = false)
        .def_readonly("bits", &QuantScheme::bits)
        .def_readonly("is_signed", &QuantScheme::is_signed)
        .def_readonly("offset_enabled", &QuantScheme::offset_enabled)
        .def("__repr__", [](const QuantScheme& s) {
            return "QuantScheme(bits=" + std::to_string(s.bits) +
                   ", signed=" + (s.is_signed ? std::string("True") : "False") +
                   ", offset=" + (s.offset_enabled ? std::string("True") : "False") + ")";
        });

    m.def("quant_range", [](const QuantScheme& s) {
        auto r = quant_range(s);
        return py::make_tuple(r.lo, r.hi);
    });

    py::class_<QuantizedTensor>(m, "QuantizedTensor")
        .def_property_readonly("values",
                               [](const QuantizedTensor& q) {
                                   std::vector<py::ssize_t> shape(q.shape.begin(), q.shape.end());
                                   py::array_t<std::int8_t> arr(shape);
                                   std::copy(q.values.begin(), q.values.end(), arr.mutable_data());
                                   return arr;
                               })
        .def_readonly("alpha", &QuantizedTensor::alpha)
        .def_readonly("delta", &QuantizedTensor::delta)
        .def_readonly("gamma", &QuantizedTensor::gamma)
        .def_readonly("scheme", &QuantizedTensor::scheme);

    m.def(
        "project",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& t, double alpha,
           double delta, const QuantScheme& s) { return project(tensor_from_array(t), alpha, delta, s); },
        py::arg("tensor"), py::arg("alpha"), py::arg("delta"), py::arg("scheme"));
    m.def("dequantize", [](const QuantizedTensor& q) { return tensor_to_array(dequantize(q)); });
    m.def("mse",
          [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
             const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
              return mse(tensor_from_array(a), tensor_from_array(b));
          });

    py::class_<QuantResult>(m, "QuantResult")
        .def_readonly("quantized", &QuantResult::quantized)
        .def_readonly("mse", &QuantResult::mse)
        .def_readonly("grid_points", &QuantResult::grid_points)
        .def_readonly("iterations", &QuantResult::iterations)
        .def_readonly("degenerate", &QuantResult::degenerate)
        .def_property_readonly("method",
                               [](const QuantResult& r) { return std::string(to_string(r.method)); });

    m.def(
        "uniform_quantize",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& t,
           const QuantScheme& s) { return uniform_quantize(tensor_from_array(t), s); },
        py::arg("tensor"), py::arg("scheme"));
    m.def(
        "omse_grid_search",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& t,
           const QuantScheme& s, int grid) { return omse_grid_search(tensor_from_array(t), s, grid); },
        py::arg("tensor"), py::arg("scheme"), py::arg("grid_points") = 500);
    m.def(
        "golden_section_quantize",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& t,
           const QuantScheme& s, double tol) {
            return golden_section_quantize(tensor_from_array(t), s, tol);
        },
        py::arg("tensor"), py::arg("scheme"), py::arg("tol") = 1e-4);
    m.def(
        "alternating_quantize",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& t,
           const QuantScheme& s, int max_iter) {
            return alternating_quantize(tensor_from_array(t), s, max_iter);
        },
        py::arg("tensor"), py::arg("scheme"), py::arg("max_iter") = 100);

    py::class_<MultiQuantResult>(m, "MultiQuantResult")
        .def_readonly("terms", &MultiQuantResult::terms)
        .def_readonly("mse", &MultiQuantResult::mse)
        .def_readonly("iterations", &MultiQuantResult::iterations)
        .def_readonly("converged", &MultiQuantResult::converged)
        .def("reconstruct",
             [](const MultiQuantResult& r) { return tensor_to_array(r.reconstruct()); });

    m.def(
        "alternating_multi_quantize",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& t,
           const std::vector<QuantScheme>& schemes, int grid, double eps, int max_iter) {
            return alternating_multi_quantize(tensor_from_array(t), schemes, omse_quantizer(grid),
                                              eps, max_iter);
        },
        py::arg("tensor"), py::arg("schemes"), py::arg("grid_points") = 500, py::arg("eps") = 1e-4,
        py::arg("max_iter") = 50);
    m.def(
        "dual_line_search",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& t,
           const QuantScheme& s1, const QuantScheme& s2, int grid) {
            return dual_line_search(tensor_from_array(t), s1, s2, grid);
        },
        py::arg("tensor"), py::arg("scheme1"), py::arg("scheme2"), py::arg("grid_points") = 100);
    m.def("select_key_layers", &select_key_layers, py::arg("per_layer_mse"),
          py::arg("tau") = kDefaultTau);

    py::class_<NetworkModel>(m, "NetworkModel")
        .def_property_readonly("input_shape", &NetworkModel::input_shape)
        .def_property_readonly("layer_count", &NetworkModel::layer_count)
        .def("forward",
             [](const NetworkModel& model,
                const py::array_t<float, py::array::c_style | py::array::forcecast>& x) {
                 return tensor_to_array(forward_fp(model, tensor_from_array(x), false).output);
             });

    py::class_<QuantizedModel>(m, "QuantizedModel")
        .def_property_readonly("base", [](const QuantizedModel& qm) { return qm.base; })
        .def_readonly("quantize_input", &QuantizedModel::quantize_input)
        .def_readonly("provenance", &QuantizedModel::provenance)
        .def("forward",
             [](const QuantizedModel& qm,
                const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
                const std::string& mode) {
                 SimMode sm = mode == "integer" ? SimMode::integer_exact : SimMode::float_sim;
                 return tensor_to_array(forward_quant(qm, tensor_from_array(x), sm));
             },
             py::arg("x"), py::arg("mode") = "integer")
        .def("compression_ratio", [](const QuantizedModel& qm) {
            CompressionRatio cr = compression_ratio(qm);
            return py::make_tuple(cr.cr_weights, cr.cr_activations);
        });

    m.def(
        "quantize_weights",
        [](const NetworkModel& model, int bits, bool offset, const std::string& method, int grid,
           double tau, bool dual) {
            WeightQuantConfig cfg;
            cfg.scheme = offset ? QuantScheme::unsigned_offset(bits) : QuantScheme::signed_bits(bits);
            cfg.method = quant_method_from_string(method);
            cfg.grid_points = grid;
            cfg.tau = tau;
            cfg.dual_enabled = dual;
            return quantize_weights(model, cfg);
        },
        py::arg("model"), py::arg("bits") = 4, py::arg("offset") = false, py::arg("method") = "omse",
        py::arg("grid_points") = 500, py::arg("tau") = kDefaultTau, py::arg("dual") = true);

    m.def(
        "calibrate_model",
        [](QuantizedModel& qm, const py::list& inputs, int bits, bool offset, int grid,
           bool residual) {
            QuantScheme s = offset ? QuantScheme::unsigned_offset(bits) : QuantScheme::signed_bits(bits);
            calibrate_model(qm, tensors_from_list(inputs), s, grid, residual);
            return qm;
        },
        py::arg("qmodel"), py::arg("inputs"), py::arg("bits") = 4, py::arg("offset") = false,
        py::arg("grid_points") = 50, py::arg("residual_on_key_layers") = true);

    m.def(
        "refine_scales",
        [](const NetworkModel& model, const QuantizedModel& qm, const py::list& inputs, int epochs,
           int batch, double lr, int calib_size) {
            RefineConfig cfg;
            cfg.epochs = epochs;
            cfg.batch_size = batch;
            cfg.learning_rate = lr;
            cfg.calib_size = calib_size;
            RefineResult rr = refine_scales(model, qm, tensors_from_list(inputs), cfg);
            return py::make_tuple(rr.model, rr.trace.objective);
        },
        py::arg("model"), py::arg("qmodel"), py::arg("inputs"), py::arg("epochs") = 25,
        py::arg("batch_size") = 32, py::arg("learning_rate") = 1e-3, py::arg("calib_size") = 500);

    m.def("load_container", &load_container, py::arg("path"));
    m.def("save_container", &save_container, py::arg("model"), py::arg("path"));
    m.def(
        "save_calibration",
        [](const py::list& samples, const std::string& path) {
            save_calibration(tensors_from_list(samples), path);
        },
        py::arg("samples"), py::arg("path"));
    m.def("load_calibration", [](const std::string& path) {
        py::list out;
        for (const Tensor& t : load_calibration(path)) out.append(tensor_to_array(t));
        return out;
    });

    m.def("fixture_model", &fixture_model, py::arg("seed") = 42);
    m.def("wrap_fp_model", &wrap_fp_model);
    m.def(
        "synthetic_batch",
        [](std::size_t n, std::uint64_t seed) {
            SyntheticTask task;
            auto [xs, ys] = task.batch(n, seed);
            py::list arrays;
            for (const Tensor& t : xs) arrays.append(tensor_to_array(t));
            return py::make_tuple(arrays, ys);
        },
        py::arg("n"), py::arg("seed") = 0);
}
