#include "fogmesh/nodesim.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

using nlohmann::json;

namespace fogmesh::nodesim {

bool central_vote(const std::vector<double>& received, double threshold, int quorum) {
    int positives = 0;
    for (double p : received)
        if (p > threshold) ++positives;
    return positives >= quorum;
}

namespace {

std::array<double, 3> site_sample(const daphnet::RawRecord& r, dsp::SensorSite site) {
    switch (site) {
        case dsp::SensorSite::Ankle: return r.ankle;
        case dsp::SensorSite::Thigh: return r.thigh;
        default: return r.trunk;
    }
}

const char* site_name(dsp::SensorSite site) {
    switch (site) {
        case dsp::SensorSite::Ankle: return "ankle";
        case dsp::SensorSite::Thigh: return "thigh";
        default: return "trunk";
    }
}

}  // namespace

SensorNode::SensorNode(dsp::SensorSite site, const secnn::WeightsBundle& bundle,
                       const quant::QModel* qmodel, dsp::FilterConfig filter,
                       double saturation_limit_mg)
    : site_(site),
      model_(secnn::model_from_bundle(bundle)),
      qmodel_(qmodel),
      norm_(bundle.norm),
      saturation_limit_(saturation_limit_mg),
      alpha_(filter.alpha()),
      lowpass_{dsp::LowPass(filter.alpha()), dsp::LowPass(filter.alpha()),
               dsp::LowPass(filter.alpha())},
      window_len_(bundle.config.input_len) {
    if (norm_.min.size() != 3 || norm_.max.size() != 3)
        throw ShapeMismatch("SensorNode: bundle norm stats must cover 3 channels");
    ring_.assign(static_cast<std::size_t>(window_len_) * 3, 0.0f);
}

std::optional<Prediction> SensorNode::ingest(const std::array<double, 3>& sample_mg,
                                             double sim_time_ms) {
    std::array<double, 3> filtered{};
    bool have_filtered = false;
    for (int c = 0; c < 3; ++c) {
        double v = dsp::saturate_one(sample_mg[c], saturation_limit_);
        if (auto m = median_[c].step(v)) {
            filtered[c] = lowpass_[c].step(*m);
            have_filtered = true;
        }
    }
    if (!have_filtered) return std::nullopt;  // median warm-up (first sample)
    return push_filtered(filtered, sim_time_ms);
}

std::optional<Prediction> SensorNode::finish(double sim_time_ms) {
    std::array<double, 3> filtered{};
    for (int c = 0; c < 3; ++c) {
        auto m = median_[c].flush();
        if (!m) return std::nullopt;  // empty stream
        filtered[c] = lowpass_[c].step(*m);
    }
    return push_filtered(filtered, sim_time_ms);
}

std::optional<Prediction> SensorNode::push_filtered(const std::array<double, 3>& filtered,
                                                    double sim_time_ms) {
    std::size_t row = filtered_count_ % static_cast<std::size_t>(window_len_);
    for (int c = 0; c < 3; ++c)
        ring_[row * 3 + c] =
            static_cast<float>(dsp::apply_norm_one(filtered[c], norm_.min[c], norm_.max[c]));
    ++filtered_count_;

    if (filtered_count_ < static_cast<std::size_t>(window_len_)) return std::nullopt;
    if ((filtered_count_ - window_len_) % 64 != 0) return std::nullopt;

    // unroll the ring into window order (oldest first)
    std::vector<float> window(static_cast<std::size_t>(window_len_) * 3);
    std::size_t oldest = filtered_count_ % static_cast<std::size_t>(window_len_);
    for (int i = 0; i < window_len_; ++i) {
        std::size_t src = (oldest + i) % static_cast<std::size_t>(window_len_);
        for (int c = 0; c < 3; ++c)
            window[static_cast<std::size_t>(i) * 3 + c] = ring_[src * 3 + c];
    }

    Prediction pred;
    pred.node_id = site_;
    pred.epoch_index = next_epoch_++;
    pred.sim_time_ms = sim_time_ms;
    pred.probability = qmodel_ ? quant::forward_q(*qmodel_, window)
                               : static_cast<double>(secnn::forward(model_, window));
    return pred;
}

SimTrace run_simulation(const daphnet::SubjectRecording& recording,
                        const std::array<secnn::WeightsBundle, 3>& bundles,
                        const std::array<const quant::QModel*, 3>& qmodels, const SimConfig& cfg) {
    std::array<std::unique_ptr<SensorNode>, 3> nodes;
    for (int s = 0; s < 3; ++s)
        nodes[s] = std::make_unique<SensorNode>(
            static_cast<dsp::SensorSite>(s), bundles[s], cfg.quantized ? qmodels[s] : nullptr,
            cfg.filter, cfg.windowing.saturation_limit_mg);

    SimTrace trace;
    // delivered predictions per epoch; drop/latency are deterministic per
    // (node, epoch) so run order cannot perturb the draw sequence
    std::map<int, std::map<dsp::SensorSite, std::pair<double, double>>> delivered;
    std::map<int, double> epoch_time;

    auto handle = [&](std::optional<Prediction> pred, double t, int s) {
        if (!pred) return;
        trace.predictions.push_back(*pred);
        epoch_time[pred->epoch_index] = t;

        Rng rng(derive_seed(cfg.transport.seed, "transport",
                            static_cast<std::uint64_t>(pred->epoch_index) * 8 + s));
        bool lost = rng.next_uniform() < cfg.transport.loss_probability;
        double latency = cfg.transport.latency_ms + rng.next_uniform() * cfg.transport.jitter_ms;
        if (!lost)
            delivered[pred->epoch_index][pred->node_id] = {pred->probability, t + latency};
    };

    for (const auto& rec : recording.records) {
        auto t = static_cast<double>(rec.time_ms);
        for (int s = 0; s < 3; ++s)
            handle(nodes[s]->ingest(site_sample(rec, static_cast<dsp::SensorSite>(s)), t), t, s);
    }
    double t_end = recording.records.empty()
                       ? 0.0
                       : static_cast<double>(recording.records.back().time_ms);
    for (int s = 0; s < 3; ++s) handle(nodes[s]->finish(t_end), t_end, s);

    // one frame per epoch every node reached
    int frame_count = nodes[0]->epochs_emitted();
    for (const auto& n : nodes) frame_count = std::min(frame_count, n->epochs_emitted());

    for (int e = 0; e < frame_count; ++e) {
        VoteFrame frame;
        frame.epoch_index = e;
        std::vector<double> probs;
        auto it = delivered.find(e);
        if (it != delivered.end())
            for (const auto& [site, pp] : it->second) {
                frame.received[site] = pp.first;
                probs.push_back(pp.first);
            }
        frame.alert = central_vote(probs, cfg.vote.threshold, cfg.vote.quorum);
        if (frame.alert) {
            AlertEvent ev;
            ev.epoch_index = e;
            ev.sim_time_ms = epoch_time[e] + cfg.transport.latency_ms + cfg.transport.jitter_ms;
            for (const auto& [site, p] : frame.received)
                if (p > cfg.vote.threshold) ev.contributors[site] = p;
            trace.alerts.push_back(std::move(ev));
        }
        trace.frames.push_back(std::move(frame));
    }

    // epoch ground truth from the training-side labeling rule; the epoch's
    // window spans filtered samples [64e, 64e+128)
    trace.epoch_truth.assign(frame_count, -1);
    for (int e = 0; e < frame_count; ++e) {
        std::size_t start = static_cast<std::size_t>(e) * 64;
        int freeze = 0;
        bool excluded = false;
        for (int i = 0; i < cfg.windowing.window_len; ++i) {
            int a = recording.records[start + i].annotation;
            if (a == 0) {
                excluded = true;
                break;
            }
            if (a == 2) ++freeze;
        }
        if (!excluded)
            trace.epoch_truth[e] =
                static_cast<double>(freeze) / cfg.windowing.window_len >
                        cfg.windowing.freeze_fraction_threshold
                    ? 1
                    : 0;
    }
    return trace;
}

std::vector<double> batch_node_probabilities(const daphnet::SubjectRecording& recording,
                                             dsp::SensorSite site,
                                             const secnn::WeightsBundle& bundle,
                                             const quant::QModel* qmodel,
                                             dsp::FilterConfig filter,
                                             double saturation_limit_mg) {
    const std::size_t n = recording.records.size();
    std::array<std::vector<double>, 3> channels;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> raw(n);
        for (std::size_t i = 0; i < n; ++i)
            raw[i] = site_sample(recording.records[i], site)[c];
        auto filtered = dsp::lowpass(dsp::median3(dsp::saturate(raw, saturation_limit_mg)),
                                     filter.alpha());
        channels[c] = dsp::apply_norm(filtered, bundle.norm.min[c], bundle.norm.max[c]);
    }

    auto model = secnn::model_from_bundle(bundle);
    const int len = bundle.config.input_len;
    std::vector<double> probs;
    for (std::size_t start = 0; start + len <= n; start += 64) {
        std::vector<float> window(static_cast<std::size_t>(len) * 3);
        for (int i = 0; i < len; ++i)
            for (int c = 0; c < 3; ++c)
                window[static_cast<std::size_t>(i) * 3 + c] =
                    static_cast<float>(channels[c][start + i]);
        probs.push_back(qmodel ? quant::forward_q(*qmodel, window)
                               : static_cast<double>(secnn::forward(model, window)));
    }
    return probs;
}

daphnet::SubjectRecording gen_synthetic(double duration_s,
                                        const std::vector<FreezeSegment>& freeze_segments,
                                        std::uint64_t seed) {
    const int rate = 64;
    const auto n = static_cast<std::size_t>(std::llround(duration_s * rate));
    daphnet::SubjectRecording rec;
    rec.subject_id = 0;
    rec.trial_id = 0;
    rec.sample_rate_hz = rate;

    // fixed per-channel phases and frequencies, drawn once from the seed
    Rng setup(derive_seed(seed, "synthetic-setup"));
    std::array<double, 9> phase{}, gait_hz{}, freeze_hz{};
    for (int c = 0; c < 9; ++c) {
        phase[c] = setup.next_uniform(0.0, 2.0 * dsp::kPi);
        gait_hz[c] = setup.next_uniform(1.0, 2.0);    // locomotor band
        freeze_hz[c] = setup.next_uniform(4.0, 6.0);  // freeze band
    }
    Rng noise(derive_seed(seed, "synthetic-noise"));

    rec.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / rate;
        bool freezing = false;
        for (const auto& seg : freeze_segments)
            if (t >= seg.start_s && t < seg.end_s) freezing = true;

        std::array<double, 9> v{};
        for (int c = 0; c < 9; ++c) {
            double base = (c % 3 == 2) ? -980.0 : 0.0;  // gravity on the z axis
            double hz = freezing ? freeze_hz[c] : gait_hz[c];
            double amp = freezing ? 400.0 : 600.0;
            v[c] = base + amp * std::sin(2.0 * dsp::kPi * hz * t + phase[c]) +
                   50.0 * noise.next_normal();
        }

        daphnet::RawRecord r;
        r.time_ms = static_cast<std::int64_t>(std::llround(t * 1000.0));
        r.ankle = {v[0], v[1], v[2]};
        r.thigh = {v[3], v[4], v[5]};
        r.trunk = {v[6], v[7], v[8]};
        r.annotation = freezing ? 2 : 1;
        rec.records.push_back(r);
    }
    return rec;
}

void write_trace_jsonl(std::ostream& out, const SimTrace& trace) {
    for (const auto& p : trace.predictions) {
        json j{{"kind", "prediction"},
               {"node", site_name(p.node_id)},
               {"epoch", p.epoch_index},
               {"probability", p.probability},
               {"sim_time_ms", p.sim_time_ms}};
        out << j.dump() << '\n';
    }
    for (const auto& f : trace.frames) {
        json received = json::object();
        for (const auto& [site, p] : f.received) received[site_name(site)] = p;
        json j{{"kind", "vote_frame"},
               {"epoch", f.epoch_index},
               {"received", received},
               {"decision", f.alert ? "Alert" : "NoAlert"}};
        out << j.dump() << '\n';
    }
    for (const auto& a : trace.alerts) {
        json contributors = json::object();
        for (const auto& [site, p] : a.contributors) contributors[site_name(site)] = p;
        json j{{"kind", "alert"},
               {"epoch", a.epoch_index},
               {"sim_time_ms", a.sim_time_ms},
               {"contributors", contributors}};
        out << j.dump() << '\n';
    }
}

std::string trace_summary_json(const SimTrace& trace) {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0, excluded = 0;
    for (std::size_t e = 0; e < trace.frames.size(); ++e) {
        int truth = trace.epoch_truth[e];
        if (truth < 0) {
            ++excluded;
            continue;
        }
        bool alert = trace.frames[e].alert;
        if (alert && truth) ++tp;
        else if (alert && !truth) ++fp;
        else if (!alert && truth) ++fn;
        else ++tn;
    }
    json j{{"epochs", trace.frames.size()},
           {"alerts", trace.alerts.size()},
           {"excluded_epochs", excluded},
           {"confusion", {{"tp", tp}, {"tn", tn}, {"fp", fp}, {"fn", fn}}}};
    return j.dump(2);
}

}  // namespace fogmesh::nodesim
