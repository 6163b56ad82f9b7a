#include "qnet/container.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace qnet {

namespace {

using nlohmann::json;

constexpr char kModelMagic[5] = {'Q', 'N', 'E', 'T', '1'};
constexpr char kCalibMagic[5] = {'Q', 'C', 'A', 'L', '1'};

// Scales are stored at 32-bit float precision; narrowing before widening to a
// JSON double keeps save->load->save a fixed point.
double narrow_scale(double v) { return static_cast<double>(static_cast<float>(v)); }

class BlobWriter {
public:
    json push_f32(const Tensor& t) {
        json ref;
        ref["offset"] = bytes_.size();
        ref["length"] = t.numel() * 4;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            std::uint32_t u = std::bit_cast<std::uint32_t>(t[i]);
            bytes_.push_back(static_cast<std::uint8_t>(u & 0xff));
            bytes_.push_back(static_cast<std::uint8_t>((u >> 8) & 0xff));
            bytes_.push_back(static_cast<std::uint8_t>((u >> 16) & 0xff));
            bytes_.push_back(static_cast<std::uint8_t>((u >> 24) & 0xff));
        }
        return ref;
    }
    json push_i8(const std::vector<std::int8_t>& v) {
        json ref;
        ref["offset"] = bytes_.size();
        ref["length"] = v.size();
        for (std::int8_t b : v) bytes_.push_back(static_cast<std::uint8_t>(b));
        return ref;
    }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class BlobReader {
public:
    BlobReader(const std::uint8_t* data, std::size_t size, std::size_t base_offset)
        : data_(data), size_(size), base_(base_offset) {}

    void check(const json& ref, std::size_t need) const {
        std::size_t off = ref.at("offset").get<std::size_t>();
        std::size_t len = ref.at("length").get<std::size_t>();
        if (len != need || off + len > size_)
            throw ValidationError("malformed container: blob reference out of range at byte offset " +
                                  std::to_string(base_ + off));
    }
    Tensor read_f32(const json& ref, std::vector<std::size_t> shape) const {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        check(ref, n * 4);
        const std::uint8_t* p = data_ + ref.at("offset").get<std::size_t>();
        std::vector<float> vals(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t u = static_cast<std::uint32_t>(p[4 * i]) |
                              (static_cast<std::uint32_t>(p[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(p[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(p[4 * i + 3]) << 24);
            vals[i] = std::bit_cast<float>(u);
        }
        return Tensor(std::move(shape), std::move(vals));
    }
    std::vector<std::int8_t> read_i8(const json& ref, std::size_t n) const {
        check(ref, n);
        const std::uint8_t* p = data_ + ref.at("offset").get<std::size_t>();
        std::vector<std::int8_t> vals(n);
        std::memcpy(vals.data(), p, n);
        return vals;
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t base_;
};

json scheme_to_json(const QuantScheme& s) {
    json j;
    j["bits"] = s.bits;
    j["signed"] = s.is_signed;
    j["offset_enabled"] = s.offset_enabled;
    return j;
}

QuantScheme scheme_from_json(const json& j) {
    QuantScheme s;
    s.bits = j.at("bits").get<int>();
    s.is_signed = j.at("signed").get<bool>();
    s.offset_enabled = j.at("offset_enabled").get<bool>();
    s.validate();
    return s;
}

json term_to_json(const QuantizedTensor& t, BlobWriter& blob) {
    json j = scheme_to_json(t.scheme);
    j["shape"] = t.shape;
    j["alpha"] = narrow_scale(t.alpha);
    j["delta"] = narrow_scale(t.delta);
    j["gamma"] = narrow_scale(t.gamma);
    j["values"] = blob.push_i8(t.values);
    return j;
}

QuantizedTensor term_from_json(const json& j, const BlobReader& blob) {
    QuantizedTensor t;
    t.scheme = scheme_from_json(j);
    t.shape = j.at("shape").get<std::vector<std::size_t>>();
    t.alpha = j.at("alpha").get<double>();
    t.delta = j.at("delta").get<double>();
    t.gamma = j.at("gamma").get<double>();
    std::size_t n = 1;
    for (std::size_t e : t.shape) n *= e;
    t.values = blob.read_i8(j.at("values"), n);
    t.validate();
    return t;
}

json act_to_json(const ActQuant& a) {
    json j;
    j["enabled"] = a.enabled;
    if (!a.enabled) return j;
    j["scheme"] = scheme_to_json(a.scheme);
    j["beta1"] = narrow_scale(a.beta1);
    j["delta"] = narrow_scale(a.delta);
    j["residual"] = a.residual;
    if (a.residual) {
        j["beta2"] = narrow_scale(a.beta2);
        j["residual_scheme"] = scheme_to_json(a.residual_scheme);
    }
    j["calib_mse_single"] = a.calib_mse_single;
    j["calib_mse_residual"] = a.calib_mse_residual;
    j["calib_abs_max"] = a.calib_abs_max;
    return j;
}

ActQuant act_from_json(const json& j) {
    ActQuant a;
    a.enabled = j.at("enabled").get<bool>();
    if (!a.enabled) return a;
    a.scheme = scheme_from_json(j.at("scheme"));
    a.beta1 = j.at("beta1").get<double>();
    a.delta = j.at("delta").get<double>();
    a.residual = j.at("residual").get<bool>();
    if (a.residual) {
        a.beta2 = j.at("beta2").get<double>();
        a.residual_scheme = scheme_from_json(j.at("residual_scheme"));
    }
    a.calib_mse_single = j.at("calib_mse_single").get<double>();
    a.calib_mse_residual = j.at("calib_mse_residual").get<double>();
    a.calib_abs_max = j.at("calib_abs_max").get<double>();
    return a;
}

} // namespace

std::vector<std::uint8_t> save_container_bytes(const QuantizedModel& model) {
    BlobWriter blob;
    json manifest;
    manifest["input_shape"] = model.base.input_shape();
    manifest["quantize_input"] = model.quantize_input;
    manifest["provenance"] = model.provenance;

    json jlayers = json::array();
    for (std::size_t l = 0; l < model.base.layer_count(); ++l) {
        const LayerSpec& layer = model.base.layers()[l];
        json jl;
        jl["kind"] = to_string(layer.kind);
        if (layer.has_weights()) {
            jl["weight_shape"] = layer.weight.shape();
            jl["weight"] = blob.push_f32(layer.weight);
            jl["bias"] = blob.push_f32(layer.bias);
            if (layer.kind == LayerKind::conv2d) {
                jl["stride"] = layer.stride;
                jl["padding"] = layer.padding;
            }
        } else if (layer.kind == LayerKind::maxpool || layer.kind == LayerKind::avgpool) {
            jl["window"] = layer.window;
            jl["stride"] = layer.stride;
        }
        if (model.plans[l]) {
            const LayerQuantPlan& p = *model.plans[l];
            json jp;
            jp["partitioning"] = to_string(p.partitioning);
            jp["is_key_layer"] = p.is_key_layer;
            jp["layer_weight_mse"] = p.layer_weight_mse;
            json jgroups = json::array();
            for (const WeightGroup& g : p.groups) {
                json jg;
                jg["gamma"] = narrow_scale(g.gamma);
                jg["weight_mse"] = g.weight_mse;
                json jterms = json::array();
                for (const QuantizedTensor& t : g.terms) jterms.push_back(term_to_json(t, blob));
                jg["terms"] = std::move(jterms);
                jgroups.push_back(std::move(jg));
            }
            jp["groups"] = std::move(jgroups);
            jp["act"] = act_to_json(p.act);
            jl["plan"] = std::move(jp);
        }
        jlayers.push_back(std::move(jl));
    }
    manifest["layers"] = std::move(jlayers);

    std::string mtext = manifest.dump();
    std::vector<std::uint8_t> blob_bytes = blob.take();
    std::vector<std::uint8_t> out;
    out.reserve(5 + 16 + mtext.size() + blob_bytes.size());
    out.insert(out.end(), kModelMagic, kModelMagic + 5);
    auto push_u64 = [&out](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    };
    push_u64(mtext.size());
    out.insert(out.end(), mtext.begin(), mtext.end());
    push_u64(blob_bytes.size());
    out.insert(out.end(), blob_bytes.begin(), blob_bytes.end());
    return out;
}

QuantizedModel load_container_bytes(const std::vector<std::uint8_t>& bytes) {
    auto fail = [](std::size_t offset, const std::string& what) -> ValidationError {
        return ValidationError("malformed container at byte offset " + std::to_string(offset) + ": " +
                               what);
    };
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kModelMagic, 5) != 0)
        throw fail(0, "bad magic, expected QNET1");
    auto read_u64 = [&bytes, &fail](std::size_t at) {
        if (at + 8 > bytes.size()) throw fail(at, "truncated length field");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[at + i]) << (8 * i);
        return v;
    };
    std::uint64_t mlen = read_u64(5);
    std::size_t mstart = 13;
    if (mstart + mlen + 8 > bytes.size()) throw fail(mstart, "manifest overruns file");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + mstart, bytes.begin() + mstart + mlen);
    } catch (const json::exception& e) {
        throw fail(mstart, std::string("manifest is not valid JSON: ") + e.what());
    }
    std::uint64_t blen = read_u64(mstart + mlen);
    std::size_t bstart = mstart + mlen + 8;
    if (bstart + blen != bytes.size()) throw fail(bstart, "blob length does not match file size");
    BlobReader blob(bytes.data() + bstart, blen, bstart);

    try {
        std::vector<LayerSpec> layers;
        std::vector<std::optional<LayerQuantPlan>> plans;
        for (const json& jl : manifest.at("layers")) {
            LayerKind kind = layer_kind_from_string(jl.at("kind").get<std::string>());
            LayerSpec spec;
            switch (kind) {
                case LayerKind::conv2d: {
                    auto shape = jl.at("weight_shape").get<std::vector<std::size_t>>();
                    Tensor w = blob.read_f32(jl.at("weight"), shape);
                    Tensor b = blob.read_f32(jl.at("bias"), {shape.at(0)});
                    spec = LayerSpec::conv2d(std::move(w), std::move(b), jl.at("stride").get<int>(),
                                             jl.at("padding").get<int>());
                    break;
                }
                case LayerKind::linear: {
                    auto shape = jl.at("weight_shape").get<std::vector<std::size_t>>();
                    Tensor w = blob.read_f32(jl.at("weight"), shape);
                    Tensor b = blob.read_f32(jl.at("bias"), {shape.at(0)});
                    spec = LayerSpec::linear(std::move(w), std::move(b));
                    break;
                }
                case LayerKind::relu: spec = LayerSpec::relu(); break;
                case LayerKind::flatten: spec = LayerSpec::flatten(); break;
                case LayerKind::maxpool:
                    spec = LayerSpec::maxpool(jl.at("window").get<int>(), jl.at("stride").get<int>());
                    break;
                case LayerKind::avgpool:
                    spec = LayerSpec::avgpool(jl.at("window").get<int>(), jl.at("stride").get<int>());
                    break;
            }
            layers.push_back(std::move(spec));

            if (jl.contains("plan")) {
                const json& jp = jl.at("plan");
                LayerQuantPlan p;
                p.partitioning = partitioning_from_string(jp.at("partitioning").get<std::string>());
                p.is_key_layer = jp.at("is_key_layer").get<bool>();
                p.layer_weight_mse = jp.at("layer_weight_mse").get<double>();
                for (const json& jg : jp.at("groups")) {
                    WeightGroup g;
                    g.gamma = jg.at("gamma").get<double>();
                    g.weight_mse = jg.at("weight_mse").get<double>();
                    for (const json& jt : jg.at("terms")) g.terms.push_back(term_from_json(jt, blob));
                    p.groups.push_back(std::move(g));
                }
                p.act = act_from_json(jp.at("act"));
                plans.emplace_back(std::move(p));
            } else {
                plans.emplace_back(std::nullopt);
            }
        }
        QuantizedModel qm;
        qm.base = NetworkModel(std::move(layers),
                               manifest.at("input_shape").get<std::vector<std::size_t>>());
        qm.plans = std::move(plans);
        qm.quantize_input = manifest.at("quantize_input").get<bool>();
        qm.provenance = manifest.at("provenance").get<std::map<std::string, std::string>>();
        if (has_plans(qm)) qm.validate();
        return qm;
    } catch (const json::exception& e) {
        throw fail(mstart, std::string("manifest field error: ") + e.what());
    }
}

QuantizedModel wrap_fp_model(const NetworkModel& model) {
    QuantizedModel qm;
    qm.base = model;
    qm.plans.resize(model.layer_count());
    return qm;
}

bool has_plans(const QuantizedModel& model) {
    for (const auto& p : model.plans)
        if (p) return true;
    return false;
}

void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
    namespace fs = std::filesystem;
    fs::path target(path);
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw IoError("short write: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw IoError("rename failed: " + target.string() + ": " + ec.message());
}

void write_text_atomic(const std::string& path, const std::string& text) {
    write_file_atomic(path, text.data(), text.size());
}

void save_container(const QuantizedModel& model, const std::string& path) {
    std::vector<std::uint8_t> bytes = save_container_bytes(model);
    write_file_atomic(path, bytes.data(), bytes.size());
}

QuantizedModel load_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open container: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return load_container_bytes(bytes);
}

void save_calibration(const std::vector<Tensor>& samples, const std::string& path) {
    if (samples.empty()) throw ValidationError("empty calibration set");
    const std::vector<std::size_t>& shape = samples[0].shape();
    for (const Tensor& t : samples)
        if (t.shape() != shape) throw ValidationError("calibration samples must share one shape");

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kCalibMagic, kCalibMagic + 5);
    auto push_u32 = [&out](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    };
    push_u32(static_cast<std::uint32_t>(samples.size()));
    push_u32(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t e : shape) push_u32(static_cast<std::uint32_t>(e));
    for (const Tensor& t : samples)
        for (std::size_t i = 0; i < t.numel(); ++i) {
            std::uint32_t u = std::bit_cast<std::uint32_t>(t[i]);
            push_u32(u);
        }
    write_file_atomic(path, out.data(), out.size());
}

std::vector<Tensor> load_calibration(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open calibration file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    auto fail = [](std::size_t offset, const std::string& what) -> ValidationError {
        return ValidationError("malformed calibration file at byte offset " +
                               std::to_string(offset) + ": " + what);
    };
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kCalibMagic, 5) != 0)
        throw fail(0, "bad magic, expected QCAL1");
    std::size_t at = 5;
    auto read_u32 = [&bytes, &fail, &at]() {
        if (at + 4 > bytes.size()) throw fail(at, "truncated field");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
        at += 4;
        return v;
    };
    std::uint32_t d = read_u32();
    if (d == 0) throw ValidationError("empty calibration set");
    std::uint32_t rank = read_u32();
    if (rank == 0 || rank > 8) throw fail(at - 4, "bad rank");
    std::vector<std::size_t> shape;
    std::size_t per = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
        shape.push_back(read_u32());
        per *= shape.back();
    }
    if (at + 4ull * per * d != bytes.size()) throw fail(at, "payload size mismatch");
    std::vector<Tensor> samples;
    samples.reserve(d);
    for (std::uint32_t s = 0; s < d; ++s) {
        std::vector<float> vals(per);
        for (std::size_t i = 0; i < per; ++i) {
            std::uint32_t u = read_u32();
            vals[i] = std::bit_cast<float>(u);
        }
        samples.emplace_back(shape, std::move(vals));
    }
    return samples;
}

} // namespace qnet
