#include <doctest.h>

#include <cmath>
#include <vector>

#include "fogmesh/dsp.hpp"

using namespace fogmesh;
using namespace fogmesh::dsp;

TEST_CASE("saturate clamps to the limit, boundary included") {
    CHECK(saturate({7000, -6000, 300}, 5000) == std::vector<double>{5000, -5000, 300});
    CHECK(saturate({0, 0, 0}, 5000) == std::vector<double>{0, 0, 0});
    CHECK(saturate({5000}, 5000) == std::vector<double>{5000});
}

TEST_CASE("filter alpha for 20 Hz at 64 Hz") {
    FilterConfig cfg;
    CHECK(cfg.alpha() == doctest::Approx(0.6625606379770598).epsilon(1e-12));
}

TEST_CASE("lowpass with alpha 1 is the identity") {
    std::vector<double> x{3, -1, 7, 0.5};
    CHECK(lowpass(x, 1.0) == x);
}

TEST_CASE("lowpass unit-step response matches the closed form") {
    // y[k] = 1 - (1-alpha)^k for a unit step; independent geometric oracle
    double alpha = FilterConfig{}.alpha();
    LowPass f(alpha);
    CHECK(f.step(0.0) == 0.0);
    for (int k = 1; k <= 1000; ++k) {
        double expected = 1.0 - std::pow(1.0 - alpha, k);
        CHECK(std::abs(f.step(1.0) - expected) < 1e-9);
    }
}

TEST_CASE("lowpass fixes constant inputs") {
    LowPass f(0.3);
    for (int i = 0; i < 50; ++i) CHECK(f.step(4.25) == doctest::Approx(4.25).epsilon(1e-15));
}

TEST_CASE("lowpass is linear for zero initial state") {
    Rng rng(11);
    std::vector<double> x(200), y(200);
    for (auto& v : x) v = rng.next_uniform(-10, 10);
    for (auto& v : y) v = rng.next_uniform(-10, 10);
    double a = 1.7, b = -0.4, alpha = 0.6625606379770598;
    std::vector<double> mix(200);
    for (int i = 0; i < 200; ++i) mix[i] = a * x[i] + b * y[i];
    auto fx = lowpass(x, alpha), fy = lowpass(y, alpha), fm = lowpass(mix, alpha);
    for (int i = 0; i < 200; ++i) {
        double expected = a * fx[i] + b * fy[i];
        CHECK(std::abs(fm[i] - expected) <= 1e-9 * std::max(1.0, std::abs(expected)));
    }
}

TEST_CASE("median3 removes spikes and keeps monotone signals") {
    CHECK(median3({1, 100, 1}) == std::vector<double>{1, 1, 1});
    CHECK(median3({1, 2, 3, 5, 9}) == std::vector<double>{1, 2, 3, 5, 9});
    CHECK(median3({5}) == std::vector<double>{5});
    CHECK(median3({2, 1}) == std::vector<double>{2, 1});
}

TEST_CASE("streaming median3 + lowpass equals the batch application") {
    Rng rng(7);
    std::vector<double> x(500);
    for (auto& v : x) v = rng.next_uniform(-5000, 5000);

    double alpha = FilterConfig{}.alpha();
    auto batch = lowpass(median3(x), alpha);

    Median3 med;
    LowPass lp(alpha);
    std::vector<double> streamed;
    for (double v : x)
        if (auto m = med.step(v)) streamed.push_back(lp.step(*m));
    if (auto m = med.flush()) streamed.push_back(lp.step(*m));

    REQUIRE(streamed.size() == batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) CHECK(streamed[i] == batch[i]);
}

TEST_CASE("fit_norm per channel") {
    auto stats = fit_norm({{-5000, 0, 5000}, {1, 2, 3}});
    CHECK(stats.min == std::vector<double>{-5000, 1});
    CHECK(stats.max == std::vector<double>{5000, 3});
    CHECK_THROWS_AS(fit_norm({{}}), EmptyChannel);
}

TEST_CASE("apply_norm maps min to 0, max to 1, clamps excursions") {
    CHECK(apply_norm_one(-10, -10, 30) == 0.0);
    CHECK(apply_norm_one(30, -10, 30) == 1.0);
    CHECK(apply_norm_one(-50, -10, 30) == 0.0);
    CHECK(apply_norm_one(70, -10, 30) == 1.0);
    CHECK(apply_norm_one(123, 4, 4) == 0.5);  // degenerate channel
}

namespace {

std::vector<Window> run_segment(const std::vector<int>& annotations) {
    std::array<std::vector<double>, 3> channels;
    for (auto& ch : channels) ch.assign(annotations.size(), 0.25);
    return segment_and_label(channels, annotations, WindowingConfig{}, 1, SensorSite::Ankle);
}

}  // namespace

TEST_CASE("segment_and_label: 40% freeze threshold is strict") {
    // 52 of 128 freezing samples: 40.6% > 40% -> Freeze
    std::vector<int> ann(128, 1);
    for (int i = 0; i < 52; ++i) ann[i] = 2;
    CHECK(run_segment(ann)[0].label == Label::Freeze);

    // 51 of 128: 39.8% -> NoFreeze
    std::vector<int> ann2(128, 1);
    for (int i = 0; i < 51; ++i) ann2[i] = 2;
    CHECK(run_segment(ann2)[0].label == Label::NoFreeze);
}

TEST_CASE("segment_and_label drops windows containing annotation 0") {
    std::vector<int> ann(128, 1);
    ann[100] = 0;
    CHECK(run_segment(ann).empty());
    CHECK_THROWS_AS(run_segment(std::vector<int>(100, 1)), SignalTooShort);
}

TEST_CASE("segment_and_label window offsets and count vs brute force") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 128 + rng.next_below(1000);
        std::vector<int> ann(n);
        for (auto& a : ann) {
            double u = rng.next_uniform();
            a = u < 0.05 ? 0 : (u < 0.5 ? 1 : 2);
        }
        auto windows = run_segment(ann);

        // brute-force enumerator
        std::vector<std::size_t> expected_starts;
        std::vector<Label> expected_labels;
        for (std::size_t s = 0; s + 128 <= n; s += 64) {
            bool drop = false;
            int freeze = 0;
            for (int i = 0; i < 128; ++i) {
                if (ann[s + i] == 0) drop = true;
                if (ann[s + i] == 2) ++freeze;
            }
            if (drop) continue;
            expected_starts.push_back(s);
            expected_labels.push_back(freeze / 128.0 > 0.40 ? Label::Freeze : Label::NoFreeze);
        }
        REQUIRE(windows.size() == expected_starts.size());
        for (std::size_t i = 0; i < windows.size(); ++i) {
            CHECK(windows[i].start_index == expected_starts[i]);
            CHECK(windows[i].label == expected_labels[i]);
        }
    }
}

TEST_CASE("pipeline order saturate -> lowpass -> normalize, golden vector") {
    std::vector<double> sig{7000, -6000, 300, 1000, 5000, -2500, 0, 800};
    double alpha = FilterConfig{}.alpha();
    auto lp = lowpass(saturate(sig, 5000), alpha);
    auto stats = fit_norm({lp});
    auto norm = apply_norm(lp, stats.min[0], stats.max[0]);

    const std::vector<double> golden{1.0,
                                     0.0,
                                     0.19256063797705975,
                                     0.32753817680676917,
                                     0.7730849113968928,
                                     0.17342991726838852,
                                     0.22108271861579606,
                                     0.3171626495010712};
    REQUIRE(norm.size() == golden.size());
    for (std::size_t i = 0; i < golden.size(); ++i)
        CHECK(norm[i] == doctest::Approx(golden[i]).epsilon(1e-12));

    // permuting normalization before saturation changes the result
    auto stats_raw = fit_norm({sig});
    auto swapped = lowpass(saturate(apply_norm(sig, stats_raw.min[0], stats_raw.max[0]), 5000), alpha);
    bool differs = false;
    for (std::size_t i = 0; i < norm.size(); ++i)
        if (std::abs(swapped[i] - norm[i]) > 1e-6) differs = true;
    CHECK(differs);
}
