#include "fogmesh/bundle.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

using nlohmann::json;

namespace fogmesh::secnn {

namespace {

json config_to_json(const ModelConfig& cfg) {
    return json{{"conv_channels", cfg.conv_channels},
                {"kernel_size", cfg.kernel_size},
                {"pool_size", cfg.pool_size},
                {"se_reduction", cfg.se_reduction},
                {"dense_units", cfg.dense_units},
                {"dropout_rate", cfg.dropout_rate},
                {"input_len", cfg.input_len},
                {"input_channels", cfg.input_channels},
                {"seed", cfg.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    j.at("conv_channels").get_to(cfg.conv_channels);
    j.at("kernel_size").get_to(cfg.kernel_size);
    j.at("pool_size").get_to(cfg.pool_size);
    j.at("se_reduction").get_to(cfg.se_reduction);
    j.at("dense_units").get_to(cfg.dense_units);
    j.at("dropout_rate").get_to(cfg.dropout_rate);
    j.at("input_len").get_to(cfg.input_len);
    j.at("input_channels").get_to(cfg.input_channels);
    j.at("seed").get_to(cfg.seed);
    return cfg;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
    return v;
}

}  // namespace

std::string config_hash(const ModelConfig& cfg) {
    // seed is provenance, not architecture; it does not affect compatibility
    json j = config_to_json(cfg);
    j.erase("seed");
    std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

WeightsBundle bundle_from_model(const Model<float>& model, const dsp::NormStats& norm,
                                std::uint64_t training_seed, int fold_id) {
    WeightsBundle b;
    b.config = model.cfg;
    b.tensors = model.params;
    b.norm = norm;
    b.training_seed = training_seed;
    b.fold_id = fold_id;
    for (const auto& t : b.tensors)
        for (float v : t.v)
            if (!std::isfinite(v)) throw ShapeMismatch("bundle: non-finite value in " + t.name);
    return b;
}

Model<float> model_from_bundle(const WeightsBundle& bundle) {
    Model<float> m;
    m.cfg = bundle.config;
    m.params = bundle.tensors;
    auto manifest = tensor_manifest(m.cfg);
    if (manifest.size() != m.params.size()) throw ShapeMismatch("bundle: tensor count mismatch");
    for (std::size_t i = 0; i < manifest.size(); ++i)
        if (manifest[i].first != m.params[i].name || manifest[i].second != m.params[i].shape)
            throw ShapeMismatch("bundle: tensor " + m.params[i].name + " shape mismatch");
    return m;
}

std::vector<std::uint8_t> serialize(const WeightsBundle& bundle) {
    json header;
    header["config"] = config_to_json(bundle.config);
    header["norm"] = {{"min", bundle.norm.min}, {"max", bundle.norm.max}};
    header["meta"] = {{"config_hash", bundle.hash()},
                      {"training_seed", bundle.training_seed},
                      {"fold_id", bundle.fold_id},
                      {"format_version", kBundleVersion}};
    json manifest = json::array();
    std::size_t offset = 0;
    for (const auto& t : bundle.tensors) {
        manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.size() * sizeof(float);
    }
    header["tensors"] = manifest;
    std::string hs = header.dump();

    std::vector<std::uint8_t> out;
    out.reserve(8 + hs.size() + offset);
    out.insert(out.end(), {'F', 'O', 'G', 'W'});
    put_u32(out, kBundleVersion);
    put_u32(out, static_cast<std::uint32_t>(hs.size()));
    out.insert(out.end(), hs.begin(), hs.end());
    for (const auto& t : bundle.tensors) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(t.v.data());
        out.insert(out.end(), p, p + t.size() * sizeof(float));
    }
    return out;
}

WeightsBundle deserialize(const std::vector<std::uint8_t>& bytes, const std::string& expected_hash) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "FOGW", 4) != 0)
        throw BadMagic("not a FOGW bundle");
    if (get_u32(bytes, 4) != kBundleVersion) throw VersionMismatch("unsupported bundle version");
    std::size_t header_len = get_u32(bytes, 8);
    if (bytes.size() < 12 + header_len) throw ShapeMismatch("truncated bundle header");

    json header;
    try {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    } catch (const json::exception&) {
        throw BadMagic("corrupt bundle header");
    }

    WeightsBundle b;
    b.config = config_from_json(header.at("config"));
    header.at("norm").at("min").get_to(b.norm.min);
    header.at("norm").at("max").get_to(b.norm.max);
    const auto& meta = header.at("meta");
    meta.at("training_seed").get_to(b.training_seed);
    meta.at("fold_id").get_to(b.fold_id);

    std::string stored_hash = meta.at("config_hash").get<std::string>();
    if (stored_hash != config_hash(b.config))
        throw VersionMismatch("bundle config hash does not match its config");
    if (!expected_hash.empty() && stored_hash != expected_hash)
        throw VersionMismatch("bundle built from a different model config");

    const std::size_t payload_base = 12 + header_len;
    auto manifest = tensor_manifest(b.config);
    const auto& jt = header.at("tensors");
    if (jt.size() != manifest.size()) throw ShapeMismatch("bundle: tensor count mismatch");
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        NamedTensor<float> t;
        t.name = jt[i].at("name").get<std::string>();
        jt[i].at("shape").get_to(t.shape);
        if (t.name != manifest[i].first || t.shape != manifest[i].second)
            throw ShapeMismatch("bundle: tensor " + t.name + " does not match config");
        std::size_t off = payload_base + jt[i].at("offset").get<std::size_t>();
        std::size_t n = shape_product(t.shape);
        if (off + n * sizeof(float) > bytes.size()) throw ShapeMismatch("truncated bundle payload");
        t.v.resize(n);
        std::memcpy(t.v.data(), bytes.data() + off, n * sizeof(float));
        for (float v : t.v)
            if (!std::isfinite(v)) throw ShapeMismatch("bundle: non-finite value in " + t.name);
        b.tensors.push_back(std::move(t));
    }
    return b;
}

void save_bundle(const std::string& path, const WeightsBundle& bundle) {
    auto bytes = serialize(bundle);
    // write-then-rename so an interrupted run never leaves a corrupt bundle
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw Error("cannot write " + tmp);
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

WeightsBundle load_bundle(const std::string& path, const std::string& expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes, expected_hash);
}

}  // namespace fogmesh::secnn
