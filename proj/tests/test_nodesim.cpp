#include <doctest.h>

#include <cmath>
#include <complex>
#include <vector>

#include "fogmesh/nodesim.hpp"

using namespace fogmesh;
using namespace fogmesh::nodesim;

namespace {

secnn::WeightsBundle seeded_bundle(std::uint64_t seed) {
    secnn::ModelConfig cfg;
    cfg.seed = seed;
    auto model = secnn::build_model<float>(cfg);
    dsp::NormStats norm;
    norm.min = {-3000.0, -3000.0, -3000.0};
    norm.max = {3000.0, 3000.0, 3000.0};
    return secnn::bundle_from_model(model, norm, seed, 0);
}

secnn::WeightsBundle zero_bundle() {
    secnn::ModelConfig cfg;
    secnn::Model<float> model;
    model.cfg = cfg;
    model.params = secnn::zero_params<float>(cfg);
    dsp::NormStats norm;
    norm.min = {-3000.0, -3000.0, -3000.0};
    norm.max = {3000.0, 3000.0, 3000.0};
    return secnn::bundle_from_model(model, norm, 0, 0);
}

// magnitude of the DFT of `x` at frequency `hz` for a 64 Hz sample rate
double dft_mag(const std::vector<double>& x, double hz) {
    std::complex<double> acc{0, 0};
    for (std::size_t i = 0; i < x.size(); ++i) {
        double phase = -2.0 * M_PI * hz * static_cast<double>(i) / 64.0;
        acc += x[i] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    return std::abs(acc) / static_cast<double>(x.size());
}

}  // namespace

TEST_CASE("central_vote basics") {
    CHECK(central_vote({0.5, 0.5, 0.1}, 0.4, 2));
    CHECK(!central_vote({0.5, 0.3, 0.1}, 0.4, 2));
    CHECK(!central_vote({0.4, 0.4, 0.4}, 0.4, 2));  // strict inequality
    CHECK(!central_vote({0.9}, 0.4, 2));            // two messages lost
    CHECK(central_vote({0.9}, 0.4, 1));
    CHECK(!central_vote({}, 0.4, 1));
}

TEST_CASE("central_vote matches a brute-force count over a probability grid") {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
    std::vector<double> thresholds{0.0, 0.25, 0.4, 0.55, 0.7, 0.85, 0.95, 1.0};
    for (double a : grid)
        for (double b : grid)
            for (double c : grid)
                for (double t : thresholds)
                    for (int q = 1; q <= 3; ++q) {
                        int above = (a > t) + (b > t) + (c > t);
                        CHECK(central_vote({a, b, c}, t, q) == (above >= q));
                    }
}

TEST_CASE("gen_synthetic timing, annotations, and length") {
    auto rec = gen_synthetic(10.0, {{4.0, 6.0}}, 3);
    REQUIRE(rec.records.size() == 640);
    for (std::size_t i = 0; i < rec.records.size(); ++i) {
        CHECK(rec.records[i].time_ms == std::llround(static_cast<double>(i) * 15.625));
        int want = (i >= 256 && i < 384) ? 2 : 1;
        CHECK(rec.records[i].annotation == want);
    }
}

TEST_CASE("gen_synthetic freeze spans carry tremor-band energy") {
    auto rec = gen_synthetic(10.0, {{4.0, 6.0}}, 5);
    std::vector<double> freeze, walk;
    for (std::size_t i = 256; i < 384; ++i) freeze.push_back(rec.records[i].ankle[0]);
    for (std::size_t i = 0; i < 128; ++i) walk.push_back(rec.records[i].ankle[0]);

    auto band_peak = [](const std::vector<double>& x, double lo, double hi) {
        double best = 0.0;
        for (double hz = lo; hz <= hi + 1e-9; hz += 0.25) best = std::max(best, dft_mag(x, hz));
        return best;
    };
    // freeze span: dominant 4-6 Hz component; walking span: dominant 1-2 Hz
    CHECK(band_peak(freeze, 4.0, 6.0) > 3.0 * band_peak(freeze, 0.5, 2.5));
    CHECK(band_peak(walk, 0.5, 2.5) > 3.0 * band_peak(walk, 4.0, 6.0));
}

TEST_CASE("sensor node stays silent through warm-up, then fires every 64 samples") {
    auto bundle = zero_bundle();
    SensorNode node(dsp::SensorSite::Ankle, bundle);
    auto rec = gen_synthetic(10.0, {}, 9);

    std::vector<int> fired_at;
    for (std::size_t i = 0; i < rec.records.size(); ++i) {
        auto p = node.ingest(rec.records[i].ankle, static_cast<double>(rec.records[i].time_ms));
        if (i < 128) CHECK(!p.has_value());
        if (p) fired_at.push_back(static_cast<int>(i));
    }
    if (auto p = node.finish(10000.0)) fired_at.push_back(640);

    CHECK(node.epochs_emitted() == 9);
    REQUIRE(fired_at.size() == 9);
    // the centered median runs one sample behind, so epoch e completes on
    // raw sample index 64*e + 128 (the final epoch needs the end-of-stream
    // flush)
    for (int e = 0; e < 8; ++e) CHECK(fired_at[e] == 64 * e + 128);
    CHECK(fired_at[8] == 640);
}

TEST_CASE("streamed node probabilities equal the batch pipeline") {
    auto rec = gen_synthetic(10.0, {{3.0, 5.0}, {7.5, 8.5}}, 17);
    auto bundle = seeded_bundle(42);

    for (auto site : {dsp::SensorSite::Ankle, dsp::SensorSite::Thigh, dsp::SensorSite::Trunk}) {
        auto batch = batch_node_probabilities(rec, site, bundle);
        REQUIRE(batch.size() == 9);

        SensorNode node(site, bundle);
        std::vector<double> streamed;
        for (const auto& r : rec.records) {
            const auto& axes = site == dsp::SensorSite::Ankle   ? r.ankle
                               : site == dsp::SensorSite::Thigh ? r.thigh
                                                                : r.trunk;
            if (auto p = node.ingest(axes, static_cast<double>(r.time_ms)))
                streamed.push_back(p->probability);
        }
        if (auto p = node.finish(10000.0)) streamed.push_back(p->probability);

        REQUIRE(streamed.size() == batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i)
            CHECK(std::abs(streamed[i] - batch[i]) <= 1e-6);
    }
}

TEST_CASE("lossless transport delivers all three votes per epoch") {
    auto rec = gen_synthetic(10.0, {{4.0, 6.0}}, 21);
    std::array<secnn::WeightsBundle, 3> bundles{seeded_bundle(1), seeded_bundle(2),
                                                seeded_bundle(3)};
    SimConfig cfg;
    auto trace = run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, cfg);

    REQUIRE(trace.frames.size() == 9);
    CHECK(trace.predictions.size() == 27);
    for (const auto& f : trace.frames) CHECK(f.received.size() == 3);
    REQUIRE(trace.epoch_truth.size() == 9);
    // freeze spans samples 256..383: epochs starting at 192, 256, 320 are
    // majority-freeze enough to cross the 40% rule
    CHECK(trace.epoch_truth == std::vector<int>{0, 0, 0, 1, 1, 1, 0, 0, 0});
}

TEST_CASE("epoch truth marks annotation-0 epochs as excluded") {
    auto rec = gen_synthetic(10.0, {}, 23);
    for (std::size_t i = 0; i < 64; ++i) rec.records[i].annotation = 0;
    std::array<secnn::WeightsBundle, 3> bundles{zero_bundle(), zero_bundle(), zero_bundle()};
    SimConfig cfg;
    auto trace = run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, cfg);
    REQUIRE(trace.epoch_truth.size() == 9);
    CHECK(trace.epoch_truth[0] == -1);  // window 0 covers samples 0..127
    for (std::size_t e = 1; e < 9; ++e) CHECK(trace.epoch_truth[e] == 0);
}

TEST_CASE("zero-weight models alert on every epoch at the default vote") {
    auto rec = gen_synthetic(10.0, {}, 25);
    std::array<secnn::WeightsBundle, 3> bundles{zero_bundle(), zero_bundle(), zero_bundle()};
    SimConfig cfg;
    auto trace = run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, cfg);

    for (const auto& p : trace.predictions) CHECK(p.probability == 0.5);
    CHECK(trace.alerts.size() == trace.frames.size());  // 0.5 > 0.4 on all nodes
    for (const auto& f : trace.frames) CHECK(f.alert);
}

TEST_CASE("total message loss suppresses every alert") {
    auto rec = gen_synthetic(10.0, {{2.0, 9.0}}, 27);
    std::array<secnn::WeightsBundle, 3> bundles{zero_bundle(), zero_bundle(), zero_bundle()};
    SimConfig cfg;
    cfg.transport.loss_probability = 1.0;
    auto trace = run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, cfg);

    CHECK(trace.predictions.size() == 27);  // nodes still run locally
    CHECK(trace.alerts.empty());
    for (const auto& f : trace.frames) {
        CHECK(f.received.empty());
        CHECK(!f.alert);
    }
}

TEST_CASE("simulation with lossy transport is seed-deterministic") {
    auto rec = gen_synthetic(15.0, {{5.0, 8.0}}, 29);
    std::array<secnn::WeightsBundle, 3> bundles{seeded_bundle(4), seeded_bundle(5),
                                                seeded_bundle(6)};
    SimConfig cfg;
    cfg.transport.loss_probability = 0.3;
    cfg.transport.latency_ms = 20.0;
    cfg.transport.jitter_ms = 10.0;
    cfg.transport.seed = 77;

    auto a = run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, cfg);
    auto b = run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, cfg);

    REQUIRE(a.frames.size() == b.frames.size());
    for (std::size_t i = 0; i < a.frames.size(); ++i) {
        CHECK(a.frames[i].received == b.frames[i].received);
        CHECK(a.frames[i].alert == b.frames[i].alert);
    }
    CHECK(a.alerts.size() == b.alerts.size());

    // and a different transport seed changes the loss pattern
    cfg.transport.seed = 78;
    auto c = run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, cfg);
    bool differs = false;
    for (std::size_t i = 0; i < a.frames.size(); ++i)
        if (a.frames[i].received != c.frames[i].received) differs = true;
    CHECK(differs);
}

TEST_CASE("quantized node path matches its batch reference") {
    auto rec = gen_synthetic(10.0, {{4.0, 6.0}}, 31);
    auto bundle = seeded_bundle(42);
    auto model = secnn::model_from_bundle(bundle);

    // calibration windows drawn from the batch preprocessing of this recording
    std::vector<std::vector<float>> calib;
    Rng rng(33);
    secnn::ModelConfig cfg;
    for (int i = 0; i < 120; ++i) {
        std::vector<float> w(static_cast<std::size_t>(cfg.input_len) * cfg.input_channels);
        for (auto& v : w) v = static_cast<float>(rng.next_uniform());
        calib.push_back(std::move(w));
    }
    auto qm = quant::quantize(bundle, quant::calibrate(model, calib));

    auto batch = batch_node_probabilities(rec, dsp::SensorSite::Ankle, bundle, &qm);
    SensorNode node(dsp::SensorSite::Ankle, bundle, &qm);
    std::vector<double> streamed;
    for (const auto& r : rec.records)
        if (auto p = node.ingest(r.ankle, static_cast<double>(r.time_ms)))
            streamed.push_back(p->probability);
    if (auto p = node.finish(10000.0)) streamed.push_back(p->probability);

    REQUIRE(streamed.size() == batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) CHECK(streamed[i] == batch[i]);
}
