#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fogmesh/dsp.hpp"
#include "fogmesh/secnn.hpp"

namespace fogmesh::secnn {

// Serialized model artifact: tensors + normalization stats + provenance.
struct WeightsBundle {
    ModelConfig config;
    std::vector<NamedTensor<float>> tensors;
    dsp::NormStats norm;
    std::uint64_t training_seed = 0;
    int fold_id = 0;

    std::string hash() const { return config_hash(config); }
};

constexpr std::uint32_t kBundleVersion = 1;

WeightsBundle bundle_from_model(const Model<float>& model, const dsp::NormStats& norm,
                                std::uint64_t training_seed, int fold_id);
Model<float> model_from_bundle(const WeightsBundle& bundle);

// "FOGW" | version | header length | JSON header | little-endian f32 payload.
std::vector<std::uint8_t> serialize(const WeightsBundle& bundle);

// If expected_hash is nonempty, a bundle built from a different config is
// rejected with VersionMismatch.
WeightsBundle deserialize(const std::vector<std::uint8_t>& bytes,
                          const std::string& expected_hash = {});

void save_bundle(const std::string& path, const WeightsBundle& bundle);
WeightsBundle load_bundle(const std::string& path, const std::string& expected_hash = {});

}  // namespace fogmesh::secnn
