#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fogmesh/bundle.hpp"
#include "fogmesh/secnn.hpp"

namespace fogmesh::quant {

// Affine per-tensor scheme: real = scale * (q - zero_point), q in [-128,127].
struct QuantParams {
    double scale = 1.0;
    int zero_point = 0;
};

// Derive params mapping [min,max] (widened to include 0) onto [-128,127].
// A degenerate range gets the 1e-8 scale floor with the constant centered.
QuantParams params_from_range(double min, double max);

std::int8_t quantize_value(double x, const QuantParams& qp);  // round half to even
double dequantize(std::int8_t q, const QuantParams& qp);

// Fixed-point representation of a positive real multiplier < 1:
// real ~= mult * 2^-shift with mult in [2^30, 2^31).
struct Requant {
    std::int32_t mult = 0;
    int shift = 0;
};

Requant make_requant(double real_multiplier);
std::int32_t requant_apply(std::int64_t acc, const Requant& r);  // rounding shift

// activation name -> (min, max) observed over the calibration set
using ActivationRanges = std::map<std::string, std::pair<double, double>>;

constexpr std::size_t kMinCalibrationWindows = 100;

// Observe per-layer activation ranges by running the float model on
// calibration windows (drawn from training folds). Throws TooFewSamples.
ActivationRanges calibrate(const secnn::Model<float>& model,
                           const std::vector<std::vector<float>>& windows);

struct QTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<std::int8_t> v;
    QuantParams qp;
};

// Gate outputs live on a fixed [0,1) grid so the sigmoid becomes a table.
constexpr double kGateScale = 1.0 / 256.0;
constexpr int kGateZeroPoint = -128;

struct QModel {
    secnn::ModelConfig config;
    std::vector<QTensor> weights;  // weight tensors, manifest order
    std::vector<std::pair<std::string, std::vector<std::int32_t>>> biases;
    std::map<std::string, QuantParams> act;  // calibrated activation params
    dsp::NormStats norm;

    // derived at quantize/load time; not serialized
    std::map<std::string, Requant> requants;
    std::array<std::array<std::int8_t, 256>, 3> gate_lut{};

    const QTensor& weight(const std::string& name) const;
    const std::vector<std::int32_t>& bias(const std::string& name) const;
    const QuantParams& act_params(const std::string& name) const;
};

QModel quantize(const secnn::WeightsBundle& bundle, const ActivationRanges& ranges);

// Integer inference: int8 weights/activations, int32 accumulators,
// fixed-point requantization between layers. The only floating-point step is
// the sigmoid on the dequantized final logit.
double forward_q(const QModel& qm, const std::vector<float>& window);

constexpr std::uint32_t kQModelVersion = 1;

// "FOGQ" | version | header length | JSON manifest | int8 payload
std::vector<std::uint8_t> serialize(const QModel& qm);
QModel deserialize(const std::vector<std::uint8_t>& bytes);
void save_qmodel(const std::string& path, const QModel& qm);
QModel load_qmodel(const std::string& path);

}  // namespace fogmesh::quant
