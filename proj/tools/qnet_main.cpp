#include "qnet/activations.hpp"
#include "qnet/container.hpp"
#include "qnet/refine.hpp"
#include "qnet/report.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace qnet;

QuantScheme make_scheme(int bits, bool offset) {
    return offset ? QuantScheme::unsigned_offset(bits) : QuantScheme::signed_bits(bits);
}

void parse_partition(const std::string& text, WeightQuantConfig& cfg) {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        auto eq = item.find('=');
        if (eq == std::string::npos) throw ValidationError("bad --partition entry: " + item);
        std::string kind = item.substr(0, eq);
        Partitioning p = partitioning_from_string(item.substr(eq + 1));
        if (kind == "conv")
            cfg.conv_partitioning = p;
        else if (kind == "fc")
            cfg.fc_partitioning = p;
        else
            throw ValidationError("bad --partition layer kind: " + kind);
    }
}

bool parse_on_off(const std::string& v, const char* flag) {
    if (v == "on") return true;
    if (v == "off") return false;
    throw ValidationError(std::string(flag) + " expects on|off");
}

std::vector<int> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open labels file: " + path);
    std::vector<int> labels;
    int v;
    while (in >> v) labels.push_back(v);
    return labels;
}

int run_quantize(const std::string& model_path, const std::string& out_path, int bits, bool offset,
                 const std::string& method, int grid, double tau, const std::string& dual,
                 const std::string& partition, const std::string& dual_search, bool skip_input) {
    QuantizedModel fp = load_container(model_path);
    WeightQuantConfig cfg;
    cfg.scheme = make_scheme(bits, offset);
    cfg.method = quant_method_from_string(method);
    cfg.grid_points = grid;
    cfg.tau = tau;
    cfg.dual_enabled = parse_on_off(dual, "--dual");
    cfg.dual_search = dual_search == "exact" ? DualSearch::exact : DualSearch::alternating;
    parse_partition(partition, cfg);

    QuantizedModel qm = quantize_weights(fp.base, cfg);
    qm.quantize_input = !skip_input;
    save_container(qm, out_path);

    std::printf("layer  kind     partition  groups  mse            key\n");
    for (std::size_t l = 0; l < qm.base.layer_count(); ++l) {
        if (!qm.plans[l]) continue;
        const LayerQuantPlan& p = *qm.plans[l];
        std::printf("%-6zu %-8s %-10s %-7zu %.6e %s\n", l, to_string(qm.base.layers()[l].kind),
                    to_string(p.partitioning), p.groups.size(), p.layer_weight_mse,
                    p.is_key_layer ? "yes" : "no");
    }
    CompressionRatio cr = compression_ratio(qm);
    std::printf("CR_w %.6f\n", cr.cr_weights);
    return 0;
}

int run_calibrate(const std::string& qmodel_path, const std::string& calib_path,
                  const std::string& out_path, int grid, const std::string& residual, int act_bits,
                  const std::string& act_offset) {
    QuantizedModel qm = load_container(qmodel_path);
    if (!has_plans(qm)) throw ValidationError("container has no quantization plans; run quantize first");
    std::vector<Tensor> calib = load_calibration(calib_path);

    int bits = act_bits > 0 ? act_bits : std::stoi(qm.provenance.count("bits") ? qm.provenance["bits"] : "4");
    bool offset;
    if (act_offset == "auto")
        offset = qm.provenance.count("offset") && qm.provenance["offset"] == "on";
    else
        offset = parse_on_off(act_offset, "--act-offset");

    CalibrationStats stats = calibrate_model(qm, calib, make_scheme(bits, offset), grid,
                                             parse_on_off(residual, "--residual-on-key-layers"));
    save_container(qm, out_path.empty() ? qmodel_path : out_path);

    std::printf("layer  beta1          mse_single     mse_residual   residual\n");
    for (const LayerCalibration& lc : stats.layers) {
        if (!qm.plans[lc.layer]->act.enabled) {
            std::printf("%-6zu (input quantization disabled)\n", lc.layer);
            continue;
        }
        std::printf("%-6zu %.6e %.6e %.6e %s\n", lc.layer, lc.beta1, lc.mse_single,
                    lc.has_residual ? lc.mse_residual : lc.mse_single,
                    lc.has_residual ? "yes" : "no");
    }
    CompressionRatio cr = compression_ratio(qm);
    std::printf("CR_a %.6f\n", cr.cr_activations);
    return 0;
}

int run_refine(const std::string& model_path, const std::string& qmodel_path,
               const std::string& calib_path, const std::string& out_path,
               const std::string& trace_path, int epochs, double lr, int batch, int calib_size) {
    QuantizedModel fp = load_container(model_path);
    QuantizedModel qm = load_container(qmodel_path);
    if (!has_plans(qm)) throw ValidationError("container has no quantization plans; run quantize first");
    if (fp.base.input_shape() != qm.base.input_shape() ||
        fp.base.layer_count() != qm.base.layer_count())
        throw ValidationError("model and quantized container topologies do not match");
    for (std::size_t l = 0; l < fp.base.layer_count(); ++l)
        if (fp.base.layers()[l].kind != qm.base.layers()[l].kind ||
            fp.base.layers()[l].weight.shape() != qm.base.layers()[l].weight.shape())
            throw ValidationError("model and quantized container topologies do not match at layer " +
                                  std::to_string(l));

    std::vector<Tensor> calib = load_calibration(calib_path);
    RefineConfig cfg;
    cfg.epochs = epochs;
    cfg.learning_rate = lr;
    cfg.batch_size = batch;
    cfg.calib_size = calib_size;
    RefineResult rr = refine_scales(fp.base, qm, calib, cfg);
    save_container(rr.model, out_path.empty() ? qmodel_path : out_path);

    std::ostringstream csv;
    csv << "epoch,objective\n";
    for (std::size_t e = 0; e < rr.trace.objective.size(); ++e) {
        std::ostringstream num;
        num.precision(17);
        num << rr.trace.objective[e];
        csv << e << "," << num.str() << "\n";
    }
    std::string tp = trace_path.empty() ? (out_path.empty() ? qmodel_path : out_path) + ".trace.csv"
                                        : trace_path;
    write_text_atomic(tp, csv.str());
    std::printf("objective %.9e -> %.9e (%zu epochs, trace %s)\n", rr.trace.objective.front(),
                rr.trace.objective.back(), rr.trace.objective.size() - 1, tp.c_str());
    return 0;
}

int run_eval(const std::string& model_path, const std::string& qmodel_path,
             const std::string& data_path, const std::string& mode_s,
             const std::string& labels_path) {
    QuantizedModel fp = load_container(model_path);
    QuantizedModel qm = load_container(qmodel_path);
    std::vector<Tensor> data = load_calibration(data_path);
    SimMode mode;
    if (mode_s == "integer")
        mode = SimMode::integer_exact;
    else if (mode_s == "floatsim")
        mode = SimMode::float_sim;
    else
        throw ValidationError("--mode expects integer|floatsim");

    std::vector<int> labels;
    if (!labels_path.empty()) {
        labels = load_labels(labels_path);
        if (labels.size() != data.size())
            throw ValidationError("labels count does not match sample count");
    }

    double total_mse = 0.0;
    std::size_t agree = 0, fp_correct = 0, q_correct = 0;
    const bool quantized = has_plans(qm);
    for (std::size_t i = 0; i < data.size(); ++i) {
        Tensor y_fp = forward_fp(fp.base, data[i], false).output;
        Tensor y_q = quantized ? forward_quant(qm, data[i], mode)
                               : forward_fp(qm.base, data[i], false).output;
        total_mse += mse(y_fp, y_q);
        std::size_t a_fp = argmax(y_fp), a_q = argmax(y_q);
        if (a_fp == a_q) ++agree;
        if (!labels.empty()) {
            if (a_fp == static_cast<std::size_t>(labels[i])) ++fp_correct;
            if (a_q == static_cast<std::size_t>(labels[i])) ++q_correct;
        }
    }
    const double n = static_cast<double>(data.size());
    std::printf("samples %zu\n", data.size());
    std::printf("output_mse %.9e\n", total_mse / n);
    std::printf("top1_agreement %.4f\n", static_cast<double>(agree) / n);
    if (!labels.empty()) {
        std::printf("fp_top1 %.4f\n", static_cast<double>(fp_correct) / n);
        std::printf("quant_top1 %.4f\n", static_cast<double>(q_correct) / n);
    }
    return 0;
}

int run_report(const std::string& qmodel_path, const std::string& curve,
               const std::string& curve_out, bool scales, const std::string& scales_out, int grid) {
    QuantizedModel qm = load_container(qmodel_path);
    if (!curve.empty()) {
        auto colon = curve.find(':');
        if (colon == std::string::npos) throw ValidationError("--curve expects layer:kernel");
        std::size_t layer = std::stoul(curve.substr(0, colon));
        std::size_t kernel = std::stoul(curve.substr(colon + 1));
        write_text_atomic(curve_out, curve_csv(qm, layer, kernel, grid));
        std::printf("curve -> %s\n", curve_out.c_str());
    }
    if (scales) {
        write_text_atomic(scales_out, scales_csv(qm));
        std::printf("scales -> %s\n", scales_out.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MMSE low-bit quantization toolkit"};
    app.require_subcommand(1);

    // quantize
    std::string q_model, q_out, q_method = "omse", q_dual = "on", q_partition = "conv=kernel,fc=global";
    std::string q_dual_search = "alternating";
    int q_bits = 4, q_grid = 500;
    double q_tau = kDefaultTau;
    bool q_offset = false, q_skip_input = false;
    CLI::App* quantize = app.add_subcommand("quantize", "quantize model weights");
    quantize->add_option("model", q_model, "input FP container")->required();
    quantize->add_option("out", q_out, "output container")->required();
    quantize->add_option("--bits", q_bits, "bit width")->envname("QNET_BITS");
    quantize->add_flag("--offset", q_offset, "unsigned scheme with offset")->envname("QNET_OFFSET");
    quantize->add_option("--method", q_method, "uniform|omse|golden|alternating")->envname("QNET_METHOD");
    quantize->add_option("--grid", q_grid, "line-search grid points")->envname("QNET_GRID");
    quantize->add_option("--tau", q_tau, "key-layer MSE threshold")->envname("QNET_TAU");
    quantize->add_option("--dual", q_dual, "dual quantization of key layers: on|off")->envname("QNET_DUAL");
    quantize->add_option("--dual-search", q_dual_search, "alternating|exact")->envname("QNET_DUAL_SEARCH");
    quantize->add_option("--partition", q_partition, "conv=kernel|global,fc=kernel|global")
        ->envname("QNET_PARTITION");
    quantize->add_flag("--skip-input-quant", q_skip_input, "keep the network input in FP")
        ->envname("QNET_SKIP_INPUT_QUANT");

    // calibrate
    std::string c_qmodel, c_calib, c_out, c_residual = "on", c_act_offset = "auto";
    int c_grid = 50, c_act_bits = 0;
    CLI::App* calibrate = app.add_subcommand("calibrate", "fit activation scales on a calibration set");
    calibrate->add_option("qmodel", c_qmodel, "quantized container")->required();
    calibrate->add_option("calib", c_calib, "calibration set (QCAL1)")->required();
    calibrate->add_option("--out", c_out, "output container (default: in place)");
    calibrate->add_option("--grid", c_grid, "line-search grid points")->envname("QNET_ACT_GRID");
    calibrate->add_option("--residual-on-key-layers", c_residual, "on|off")
        ->envname("QNET_RESIDUAL");
    calibrate->add_option("--act-bits", c_act_bits, "activation bit width (default: weight bits)")
        ->envname("QNET_ACT_BITS");
    calibrate->add_option("--act-offset", c_act_offset, "on|off|auto")->envname("QNET_ACT_OFFSET");

    // refine
    std::string r_model, r_qmodel, r_calib, r_out, r_trace;
    int r_epochs = 25, r_batch = 32, r_calib_size = 500;
    double r_lr = 1e-3;
    CLI::App* refine = app.add_subcommand("refine", "gradient-descent rescale of quantized weights");
    refine->add_option("model", r_model, "FP container")->required();
    refine->add_option("qmodel", r_qmodel, "quantized container")->required();
    refine->add_option("calib", r_calib, "calibration set (QCAL1)")->required();
    refine->add_option("--out", r_out, "output container (default: in place)");
    refine->add_option("--trace-csv", r_trace, "epoch/objective CSV path");
    refine->add_option("--epochs", r_epochs, "epochs")->envname("QNET_EPOCHS");
    refine->add_option("--lr", r_lr, "learning rate")->envname("QNET_LR");
    refine->add_option("--batch", r_batch, "batch size")->envname("QNET_BATCH");
    refine->add_option("--calib-size", r_calib_size, "max calibration samples (M)")
        ->envname("QNET_CALIB_SIZE");

    // eval
    std::string e_model, e_qmodel, e_data, e_mode = "integer", e_labels;
    CLI::App* eval = app.add_subcommand("eval", "compare quantized inference against the FP model");
    eval->add_option("model", e_model, "FP container")->required();
    eval->add_option("qmodel", e_qmodel, "quantized container")->required();
    eval->add_option("data", e_data, "input set (QCAL1)")->required();
    eval->add_option("--mode", e_mode, "integer|floatsim")->envname("QNET_MODE");
    eval->add_option("--labels", e_labels, "optional label file (one integer per line)");

    // report
    std::string p_qmodel, p_curve, p_curve_out = "curve.csv", p_scales_out = "scales.csv";
    bool p_scales = false;
    int p_grid = 500;
    CLI::App* report = app.add_subcommand("report", "CSV reports from a quantized container");
    report->add_option("qmodel", p_qmodel, "quantized container")->required();
    report->add_option("--curve", p_curve, "layer:kernel MSE curve");
    report->add_option("--curve-out", p_curve_out, "curve CSV path");
    report->add_flag("--scales", p_scales, "per-layer scale statistics");
    report->add_option("--scales-out", p_scales_out, "scales CSV path");
    report->add_option("--grid", p_grid, "curve grid points")->envname("QNET_REPORT_GRID");

    try {
        app.parse(argc, argv);
        if (quantize->parsed())
            return run_quantize(q_model, q_out, q_bits, q_offset, q_method, q_grid, q_tau, q_dual,
                                q_partition, q_dual_search, q_skip_input);
        if (calibrate->parsed())
            return run_calibrate(c_qmodel, c_calib, c_out, c_grid, c_residual, c_act_bits,
                                 c_act_offset);
        if (refine->parsed())
            return run_refine(r_model, r_qmodel, r_calib, r_out, r_trace, r_epochs, r_lr, r_batch,
                              r_calib_size);
        if (eval->parsed()) return run_eval(e_model, e_qmodel, e_data, e_mode, e_labels);
        if (report->parsed())
            return run_report(p_qmodel, p_curve, p_curve_out, p_scales, p_scales_out, p_grid);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const qnet::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const qnet::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
