#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fogmesh/bundle.hpp"
#include "fogmesh/daphnet.hpp"
#include "fogmesh/dsp.hpp"
#include "fogmesh/quant.hpp"

namespace fogmesh::nodesim {

struct Prediction {
    dsp::SensorSite node_id;
    int epoch_index;
    double probability;
    double sim_time_ms;
};

struct TransportConfig {
    double loss_probability = 0.0;
    double latency_ms = 0.0;
    double jitter_ms = 0.0;
    std::uint64_t seed = 0;
};

struct VoteConfig {
    double threshold = 0.4;
    int quorum = 2;
};

struct VoteFrame {
    int epoch_index;
    std::map<dsp::SensorSite, double> received;
    bool alert = false;
};

struct AlertEvent {
    int epoch_index;
    double sim_time_ms;
    std::map<dsp::SensorSite, double> contributors;  // nodes above threshold
};

// Alert iff at least `quorum` received probabilities strictly exceed the
// threshold. Lost messages abstain.
bool central_vote(const std::vector<double>& received, double threshold, int quorum);

// One sensor node: embedded preprocessing chain feeding a 128-sample rolling
// buffer, inference every 64 filtered samples once warm. Single-owner.
class SensorNode {
public:
    SensorNode(dsp::SensorSite site, const secnn::WeightsBundle& bundle,
               const quant::QModel* qmodel = nullptr,
               dsp::FilterConfig filter = {}, double saturation_limit_mg = 5000.0);

    // Feed one raw 3-axis sample (milli-g). The centered median filter runs
    // one sample behind the input, so filtered sample k enters the buffer on
    // raw sample k+1.
    std::optional<Prediction> ingest(const std::array<double, 3>& sample_mg, double sim_time_ms);

    // End of stream: push the median filter's trailing edge-replicated value
    // so the streamed sequence covers every input sample, as the batch
    // pipeline does. May emit one final Prediction.
    std::optional<Prediction> finish(double sim_time_ms);

    int epochs_emitted() const { return next_epoch_; }

private:
    std::optional<Prediction> push_filtered(const std::array<double, 3>& filtered,
                                            double sim_time_ms);

    dsp::SensorSite site_;
    secnn::Model<float> model_;
    const quant::QModel* qmodel_;  // non-null selects the quantized path
    dsp::NormStats norm_;
    double saturation_limit_;
    double alpha_;
    std::array<dsp::Median3, 3> median_;
    std::array<dsp::LowPass, 3> lowpass_;
    std::vector<float> ring_;  // [128][3], circular by row
    int window_len_;
    std::size_t filtered_count_ = 0;
    int next_epoch_ = 0;
};

struct SimTrace {
    std::vector<Prediction> predictions;
    std::vector<VoteFrame> frames;
    std::vector<AlertEvent> alerts;
    std::vector<int> epoch_truth;  // 1 freeze, 0 no-freeze, -1 excluded (annotation 0)
};

struct SimConfig {
    TransportConfig transport;
    VoteConfig vote;
    bool quantized = false;
    dsp::WindowingConfig windowing;  // supplies the epoch ground-truth rule
    dsp::FilterConfig filter;
};

// Per-site bundles in site order (ankle, thigh, trunk). When cfg.quantized,
// `qmodels` must hold one quantized model per site.
SimTrace run_simulation(const daphnet::SubjectRecording& recording,
                        const std::array<secnn::WeightsBundle, 3>& bundles,
                        const std::array<const quant::QModel*, 3>& qmodels, const SimConfig& cfg);

// Batch reference for the streamed node pipeline: saturate -> centered
// median3 -> low-pass -> min-max normalize, windows at the 64-sample hop,
// one forward per window. Used by the stream/batch equivalence checks.
std::vector<double> batch_node_probabilities(const daphnet::SubjectRecording& recording,
                                             dsp::SensorSite site,
                                             const secnn::WeightsBundle& bundle,
                                             const quant::QModel* qmodel = nullptr,
                                             dsp::FilterConfig filter = {},
                                             double saturation_limit_mg = 5000.0);

struct FreezeSegment {
    double start_s;
    double end_s;  // half-open [start, end)
};

// 64 Hz synthetic 9-channel recording: slow gait oscillation in non-freeze
// spans, 4-6 Hz tremor-band oscillation in freeze spans, plus noise.
daphnet::SubjectRecording gen_synthetic(double duration_s,
                                        const std::vector<FreezeSegment>& freeze_segments,
                                        std::uint64_t seed);

void write_trace_jsonl(std::ostream& out, const SimTrace& trace);
std::string trace_summary_json(const SimTrace& trace);

}  // namespace fogmesh::nodesim
