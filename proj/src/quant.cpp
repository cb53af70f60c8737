#include "fogmesh/quant.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include <json.hpp>

using nlohmann::json;

namespace fogmesh::quant {

namespace {

double round_half_even(double x) {
    // assumes the default FE_TONEAREST rounding mode
    return std::nearbyint(x);
}

std::int8_t clamp_i8(long v) {
    return static_cast<std::int8_t>(std::clamp(v, -128L, 127L));
}

}  // namespace

QuantParams params_from_range(double min, double max) {
    min = std::min(min, 0.0);
    max = std::max(max, 0.0);
    constexpr double kScaleFloor = 1e-8;
    QuantParams qp;
    if (max - min < kScaleFloor * 255.0) {
        double c = (max + min) / 2.0;
        qp.scale = kScaleFloor;
        qp.zero_point = static_cast<int>(
            std::clamp(-round_half_even(c / qp.scale), -128.0, 127.0));
        return qp;
    }
    qp.scale = (max - min) / 255.0;
    qp.zero_point = static_cast<int>(
        std::clamp(round_half_even(-128.0 - min / qp.scale), -128.0, 127.0));
    return qp;
}

std::int8_t quantize_value(double x, const QuantParams& qp) {
    return clamp_i8(static_cast<long>(round_half_even(x / qp.scale)) + qp.zero_point);
}

double dequantize(std::int8_t q, const QuantParams& qp) {
    return qp.scale * (static_cast<int>(q) - qp.zero_point);
}

Requant make_requant(double real_multiplier) {
    if (real_multiplier <= 0.0) throw Error("make_requant: multiplier must be positive");
    int exp = 0;
    double frac = std::frexp(real_multiplier, &exp);  // frac in [0.5, 1)
    auto mult = static_cast<std::int64_t>(round_half_even(frac * (1LL << 31)));
    if (mult == (1LL << 31)) {
        mult /= 2;
        ++exp;
    }
    Requant r;
    r.mult = static_cast<std::int32_t>(mult);
    r.shift = 31 - exp;
    if (r.shift < 0 || r.shift > 62) throw Error("make_requant: multiplier out of range");
    return r;
}

std::int32_t requant_apply(std::int64_t acc, const Requant& r) {
    __int128 prod = static_cast<__int128>(acc) * r.mult;
    __int128 half = static_cast<__int128>(1) << (r.shift - 1);
    __int128 rounded = prod >= 0 ? (prod + half) >> r.shift : -((-prod + half) >> r.shift);
    return static_cast<std::int32_t>(rounded);
}

ActivationRanges calibrate(const secnn::Model<float>& model,
                           const std::vector<std::vector<float>>& windows) {
    if (windows.size() < kMinCalibrationWindows)
        throw TooFewSamples("calibrate: need at least " +
                            std::to_string(kMinCalibrationWindows) + " windows, got " +
                            std::to_string(windows.size()));

    ActivationRanges ranges;
    auto observe = [&ranges](const std::string& name, const auto& values) {
        auto it = ranges.find(name);
        double mn = it == ranges.end() ? std::numeric_limits<double>::infinity() : it->second.first;
        double mx = it == ranges.end() ? -std::numeric_limits<double>::infinity() : it->second.second;
        for (double v : values) {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        ranges[name] = {mn, mx};
    };

    for (const auto& w : windows) {
        secnn::Trace<float> tr;
        secnn::forward(model, w, &tr);
        observe("input", w);
        for (int b = 0; b < 3; ++b) {
            std::string p = "block" + std::to_string(b + 1) + ".";
            observe(p + "relu", tr.blocks[b].relu);
            observe(p + "se.hid", tr.blocks[b].hid);
            observe(p + "se.gate_pre", tr.blocks[b].gate_pre);
        }
        observe("dense1.out", tr.d1);
        observe("dense2.out", tr.d2);
    }
    return ranges;
}

const QTensor& QModel::weight(const std::string& name) const {
    for (const auto& t : weights)
        if (t.name == name) return t;
    throw Error("qmodel: no weight tensor named " + name);
}

const std::vector<std::int32_t>& QModel::bias(const std::string& name) const {
    for (const auto& [n, v] : biases)
        if (n == name) return v;
    throw Error("qmodel: no bias named " + name);
}

const QuantParams& QModel::act_params(const std::string& name) const {
    auto it = act.find(name);
    if (it == act.end()) throw Error("qmodel: no activation params for " + name);
    return it->second;
}

namespace {

// input activation feeding each weighted layer
std::string input_activation_of(const std::string& weight_name) {
    if (weight_name == "block1.conv.w") return "input";
    if (weight_name == "block2.conv.w") return "block1.relu";
    if (weight_name == "block3.conv.w") return "block2.relu";
    if (weight_name == "dense1.w") return "block3.relu";
    if (weight_name == "dense2.w") return "dense1.out";
    if (weight_name == "out.w") return "dense2.out";
    // SE layers: fcN inside block B
    std::string block = weight_name.substr(0, 6);  // "blockB"
    if (weight_name.find("se.fc1") != std::string::npos) return block + ".relu";
    return block + ".se.hid";
}

// output activation produced by each weighted layer (empty = raw logit)
std::string output_activation_of(const std::string& weight_name) {
    if (weight_name == "block1.conv.w") return "block1.relu";
    if (weight_name == "block2.conv.w") return "block2.relu";
    if (weight_name == "block3.conv.w") return "block3.relu";
    if (weight_name == "dense1.w") return "dense1.out";
    if (weight_name == "dense2.w") return "dense2.out";
    if (weight_name == "out.w") return "";
    std::string block = weight_name.substr(0, 6);
    if (weight_name.find("se.fc1") != std::string::npos) return block + ".se.hid";
    return block + ".se.gate_pre";
}

// derive requant multipliers and sigmoid tables from the stored params
void finalize(QModel& qm) {
    qm.requants.clear();
    for (const auto& t : qm.weights) {
        std::string out = output_activation_of(t.name);
        if (out.empty()) continue;  // final logit stays in accumulator scale
        double s_in = qm.act_params(input_activation_of(t.name)).scale;
        double s_out = qm.act_params(out).scale;
        qm.requants[t.name] = make_requant(s_in * t.qp.scale / s_out);
    }
    for (int b = 0; b < 3; ++b) {
        std::string p = "block" + std::to_string(b + 1) + ".";
        // gated output reuses the relu params; s_relu cancels, leaving the
        // gate scale as the multiplier
        qm.requants[p + "gate"] = make_requant(kGateScale);
        const QuantParams& gp = qm.act_params(p + "se.gate_pre");
        for (int q = -128; q <= 127; ++q) {
            double x = gp.scale * (q - gp.zero_point);
            double g = 1.0 / (1.0 + std::exp(-x));
            qm.gate_lut[b][q + 128] = clamp_i8(
                static_cast<long>(round_half_even(g / kGateScale)) + kGateZeroPoint);
        }
    }
}

}  // namespace

QModel quantize(const secnn::WeightsBundle& bundle, const ActivationRanges& ranges) {
    QModel qm;
    qm.config = bundle.config;
    qm.norm = bundle.norm;
    for (const auto& [name, range] : ranges) qm.act[name] = params_from_range(range.first, range.second);

    // weights first so bias scales (s_in * s_w) can be derived
    std::map<std::string, double> weight_scale;
    for (const auto& t : bundle.tensors) {
        if (t.shape.size() == 1) continue;
        double mn = *std::min_element(t.v.begin(), t.v.end());
        double mx = *std::max_element(t.v.begin(), t.v.end());
        QTensor qt;
        qt.name = t.name;
        qt.shape = t.shape;
        qt.qp = params_from_range(mn, mx);
        qt.v.reserve(t.v.size());
        for (float v : t.v) qt.v.push_back(quantize_value(v, qt.qp));
        weight_scale[t.name] = qt.qp.scale;
        qm.weights.push_back(std::move(qt));
    }
    for (const auto& t : bundle.tensors) {
        if (t.shape.size() != 1) continue;
        std::string wname = t.name.substr(0, t.name.size() - 2) + ".w";  // x.b -> x.w
        double s_bias = qm.act_params(input_activation_of(wname)).scale * weight_scale.at(wname);
        std::vector<std::int32_t> qb;
        qb.reserve(t.v.size());
        for (float v : t.v)
            qb.push_back(static_cast<std::int32_t>(round_half_even(v / s_bias)));
        qm.biases.emplace_back(t.name, std::move(qb));
    }
    finalize(qm);
    return qm;
}

namespace {

// int8 "same" conv; acc = bias + sum (qw - zpw)(qx - zpx)
void qconv_same(const std::vector<std::int8_t>& in, int len, int cin, const QTensor& w,
                const std::vector<std::int32_t>& bias, int zp_in, const Requant& rq, int zp_out,
                bool relu, std::int8_t q_zero, std::vector<std::int8_t>& out) {
    const int cout = w.shape[0];
    const int k = w.shape[2];
    const int pad = k / 2;
    const int zpw = w.qp.zero_point;
    out.assign(static_cast<std::size_t>(len) * cout, 0);
    for (int t = 0; t < len; ++t) {
        for (int o = 0; o < cout; ++o) {
            std::int64_t acc = bias[o];
            const std::int8_t* wrow = &w.v[static_cast<std::size_t>(o) * cin * k];
            for (int i = 0; i < cin; ++i) {
                for (int kk = 0; kk < k; ++kk) {
                    int src = t + kk - pad;
                    if (src < 0 || src >= len) continue;
                    acc += static_cast<std::int32_t>(wrow[i * k + kk] - zpw) *
                           static_cast<std::int32_t>(in[static_cast<std::size_t>(src) * cin + i] - zp_in);
                }
            }
            long q = static_cast<long>(zp_out) + requant_apply(acc, rq);
            std::int8_t qv = clamp_i8(q);
            if (relu && qv < q_zero) qv = q_zero;
            out[static_cast<std::size_t>(t) * cout + o] = qv;
        }
    }
}

void qdense(const std::vector<std::int8_t>& x, const QTensor& w,
            const std::vector<std::int32_t>& bias, int zp_in, const Requant& rq, int zp_out,
            bool relu, std::int8_t q_zero, std::vector<std::int8_t>& y) {
    const int rows = w.shape[0];
    const int cols = w.shape[1];
    const int zpw = w.qp.zero_point;
    y.assign(rows, 0);
    for (int r = 0; r < rows; ++r) {
        std::int64_t acc = bias[r];
        const std::int8_t* wrow = &w.v[static_cast<std::size_t>(r) * cols];
        for (int c = 0; c < cols; ++c)
            acc += static_cast<std::int32_t>(wrow[c] - zpw) * static_cast<std::int32_t>(x[c] - zp_in);
        long q = static_cast<long>(zp_out) + requant_apply(acc, rq);
        std::int8_t qv = clamp_i8(q);
        if (relu && qv < q_zero) qv = q_zero;
        y[r] = qv;
    }
}

}  // namespace

double forward_q(const QModel& qm, const std::vector<float>& window) {
    const secnn::ModelConfig& cfg = qm.config;
    if (window.size() != static_cast<std::size_t>(cfg.input_len) * cfg.input_channels)
        throw ShapeMismatch("forward_q: window shape mismatch");

    const QuantParams& in_qp = qm.act_params("input");
    std::vector<std::int8_t> x(window.size());
    for (std::size_t i = 0; i < window.size(); ++i) x[i] = quantize_value(window[i], in_qp);

    int len = cfg.input_len;
    int cin = cfg.input_channels;
    int zp_in = in_qp.zero_point;
    for (int b = 0; b < 3; ++b) {
        std::string p = "block" + std::to_string(b + 1) + ".";
        const int cout = cfg.conv_channels[b];
        const QuantParams& relu_qp = qm.act_params(p + "relu");
        const std::int8_t relu_qzero = quantize_value(0.0, relu_qp);

        std::vector<std::int8_t> relu_out;
        qconv_same(x, len, cin, qm.weight(p + "conv.w"), qm.bias(p + "conv.b"), zp_in,
                   qm.requants.at(p + "conv.w"), relu_qp.zero_point, true, relu_qzero, relu_out);

        // squeeze: integer mean over time, stays in the relu scale
        std::vector<std::int8_t> squeeze(cout);
        for (int c = 0; c < cout; ++c) {
            std::int64_t sum = 0;
            for (int t = 0; t < len; ++t)
                sum += relu_out[static_cast<std::size_t>(t) * cout + c] - relu_qp.zero_point;
            std::int64_t mean = sum >= 0 ? (sum + len / 2) / len : -((-sum + len / 2) / len);
            squeeze[c] = clamp_i8(static_cast<long>(mean + relu_qp.zero_point));
        }

        const QuantParams& hid_qp = qm.act_params(p + "se.hid");
        std::vector<std::int8_t> hid;
        qdense(squeeze, qm.weight(p + "se.fc1.w"), qm.bias(p + "se.fc1.b"), relu_qp.zero_point,
               qm.requants.at(p + "se.fc1.w"), hid_qp.zero_point, true,
               quantize_value(0.0, hid_qp), hid);

        const QuantParams& gp_qp = qm.act_params(p + "se.gate_pre");
        std::vector<std::int8_t> gate_pre;
        qdense(hid, qm.weight(p + "se.fc2.w"), qm.bias(p + "se.fc2.b"), hid_qp.zero_point,
               qm.requants.at(p + "se.fc2.w"), gp_qp.zero_point, false, 0, gate_pre);

        std::vector<std::int8_t> gate(cout);
        for (int c = 0; c < cout; ++c) gate[c] = qm.gate_lut[b][gate_pre[c] + 128];

        // per-channel gating; output stays on the relu grid
        const Requant& grq = qm.requants.at(p + "gate");
        std::vector<std::int8_t> gated(relu_out.size());
        for (int t = 0; t < len; ++t) {
            for (int c = 0; c < cout; ++c) {
                std::size_t i = static_cast<std::size_t>(t) * cout + c;
                std::int64_t prod = static_cast<std::int64_t>(relu_out[i] - relu_qp.zero_point) *
                                    (gate[c] - kGateZeroPoint);
                gated[i] = clamp_i8(static_cast<long>(relu_qp.zero_point) + requant_apply(prod, grq));
            }
        }

        // max pool
        const int plen = len / cfg.pool_size;
        std::vector<std::int8_t> pooled(static_cast<std::size_t>(plen) * cout);
        for (int t = 0; t < plen; ++t)
            for (int c = 0; c < cout; ++c) {
                std::int8_t best = gated[static_cast<std::size_t>(t * cfg.pool_size) * cout + c];
                for (int j = 1; j < cfg.pool_size; ++j)
                    best = std::max(best,
                                    gated[static_cast<std::size_t>(t * cfg.pool_size + j) * cout + c]);
                pooled[static_cast<std::size_t>(t) * cout + c] = best;
            }

        x = std::move(pooled);
        len = plen;
        cin = cout;
        zp_in = relu_qp.zero_point;
    }

    const QuantParams& d1_qp = qm.act_params("dense1.out");
    std::vector<std::int8_t> d1;
    qdense(x, qm.weight("dense1.w"), qm.bias("dense1.b"), zp_in, qm.requants.at("dense1.w"),
           d1_qp.zero_point, true, quantize_value(0.0, d1_qp), d1);

    const QuantParams& d2_qp = qm.act_params("dense2.out");
    std::vector<std::int8_t> d2;
    qdense(d1, qm.weight("dense2.w"), qm.bias("dense2.b"), d1_qp.zero_point,
           qm.requants.at("dense2.w"), d2_qp.zero_point, true, quantize_value(0.0, d2_qp), d2);

    // final layer: keep the int32 accumulator, dequantize once, sigmoid in float
    const QTensor& ow = qm.weight("out.w");
    const auto& ob = qm.bias("out.b");
    std::int64_t acc = ob[0];
    for (int c = 0; c < cfg.dense_units[1]; ++c)
        acc += static_cast<std::int32_t>(ow.v[c] - ow.qp.zero_point) *
               static_cast<std::int32_t>(d2[c] - d2_qp.zero_point);
    double logit = static_cast<double>(acc) * d2_qp.scale * ow.qp.scale;
    return 1.0 / (1.0 + std::exp(-logit));
}

std::vector<std::uint8_t> serialize(const QModel& qm) {
    json header;
    header["config"] = json::parse(
        // reuse the bundle's config serialization via a round trip
        json{{"conv_channels", qm.config.conv_channels},
             {"kernel_size", qm.config.kernel_size},
             {"pool_size", qm.config.pool_size},
             {"se_reduction", qm.config.se_reduction},
             {"dense_units", qm.config.dense_units},
             {"dropout_rate", qm.config.dropout_rate},
             {"input_len", qm.config.input_len},
             {"input_channels", qm.config.input_channels},
             {"seed", qm.config.seed}}
            .dump());
    header["norm"] = {{"min", qm.norm.min}, {"max", qm.norm.max}};
    json acts = json::object();
    for (const auto& [name, qp] : qm.act)
        acts[name] = {{"scale", qp.scale}, {"zero_point", qp.zero_point}};
    header["activations"] = acts;
    json biases = json::array();
    for (const auto& [name, v] : qm.biases) biases.push_back({{"name", name}, {"values", v}});
    header["biases"] = biases;
    json weights = json::array();
    std::size_t offset = 0;
    for (const auto& t : qm.weights) {
        weights.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"scale", t.qp.scale},
                           {"zero_point", t.qp.zero_point},
                           {"offset", offset}});
        offset += t.v.size();
    }
    header["weights"] = weights;
    std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(12 + hs.size() + offset);
    out.insert(out.end(), {'F', 'O', 'G', 'Q'});
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(kQModelVersion >> (8 * i)));
    auto hlen = static_cast<std::uint32_t>(hs.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(hlen >> (8 * i)));
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& t : qm.weights) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.v.data());
        out.insert(out.end(), p, p + t.v.size());
    }
    return out;
}

QModel deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "FOGQ", 4) != 0)
        throw BadMagic("not a FOGQ model");
    std::uint32_t version = 0, hlen = 0;
    for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
    for (int i = 0; i < 4; ++i) hlen |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
    if (version != kQModelVersion) throw VersionMismatch("unsupported qmodel version");
    if (bytes.size() < 12 + hlen) throw ShapeMismatch("truncated qmodel header");

    json header;
    try {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
    } catch (const json::exception&) {
        throw BadMagic("corrupt qmodel header");
    }

    QModel qm;
    const auto& jc = header.at("config");
    jc.at("conv_channels").get_to(qm.config.conv_channels);
    jc.at("kernel_size").get_to(qm.config.kernel_size);
    jc.at("pool_size").get_to(qm.config.pool_size);
    jc.at("se_reduction").get_to(qm.config.se_reduction);
    jc.at("dense_units").get_to(qm.config.dense_units);
    jc.at("dropout_rate").get_to(qm.config.dropout_rate);
    jc.at("input_len").get_to(qm.config.input_len);
    jc.at("input_channels").get_to(qm.config.input_channels);
    jc.at("seed").get_to(qm.config.seed);
    header.at("norm").at("min").get_to(qm.norm.min);
    header.at("norm").at("max").get_to(qm.norm.max);
    for (const auto& [name, j] : header.at("activations").items())
        qm.act[name] = {j.at("scale").get<double>(), j.at("zero_point").get<int>()};
    for (const auto& j : header.at("biases"))
        qm.biases.emplace_back(j.at("name").get<std::string>(),
                               j.at("values").get<std::vector<std::int32_t>>());
    const std::size_t payload_base = 12 + hlen;
    for (const auto& j : header.at("weights")) {
        QTensor t;
        t.name = j.at("name").get<std::string>();
        j.at("shape").get_to(t.shape);
        t.qp = {j.at("scale").get<double>(), j.at("zero_point").get<int>()};
        std::size_t off = payload_base + j.at("offset").get<std::size_t>();
        std::size_t n = secnn::shape_product(t.shape);
        if (off + n > bytes.size()) throw ShapeMismatch("truncated qmodel payload");
        t.v.resize(n);
        std::memcpy(t.v.data(), bytes.data() + off, n);
        qm.weights.push_back(std::move(t));
    }
    finalize(qm);
    return qm;
}

void save_qmodel(const std::string& path, const QModel& qm) {
    auto bytes = serialize(qm);
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

QModel load_qmodel(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace fogmesh::quant
