#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "fogmesh/common.hpp"

namespace fogmesh::dsp {

inline constexpr double kPi = 3.14159265358979323846;

struct FilterConfig {
    double cutoff_hz = 20.0;
    double sample_rate_hz = 64.0;

    // alpha = dt / (RC + dt), RC = 1 / (2*pi*fc)
    double alpha() const {
        double dt = 1.0 / sample_rate_hz;
        double rc = 1.0 / (2.0 * kPi * cutoff_hz);
        return dt / (rc + dt);
    }
};

struct NormStats {
    // one entry per channel, order (x, y, z) per sensor site
    std::vector<double> min;
    std::vector<double> max;
};

enum class SensorSite : std::uint8_t { Ankle = 0, Thigh = 1, Trunk = 2 };

enum class Label : std::uint8_t { NoFreeze = 0, Freeze = 1 };

struct WindowingConfig {
    int window_len = 128;
    int overlap = 64;
    double freeze_fraction_threshold = 0.40;
    double saturation_limit_mg = 5000.0;  // 5 g

    int hop() const { return window_len - overlap; }
};

struct Window {
    // row-major [window_len][3], normalized to [0,1]
    std::vector<float> data;
    Label label = Label::NoFreeze;
    int subject_id = 0;
    SensorSite site = SensorSite::Ankle;
    std::size_t start_index = 0;
};

// Clamp every value to [-limit, +limit].
std::vector<double> saturate(const std::vector<double>& signal, double limit);

inline double saturate_one(double v, double limit) {
    if (v > limit) return limit;
    if (v < -limit) return -limit;
    return v;
}

// First-order IIR low-pass, streaming form. y[0] = x[0].
class LowPass {
public:
    explicit LowPass(double alpha) : alpha_(alpha) {}

    double step(double x) {
        if (!primed_) {
            y_ = x;
            primed_ = true;
        } else {
            y_ += alpha_ * (x - y_);
        }
        return y_;
    }

    void reset() { primed_ = false; }

private:
    double alpha_;
    double y_ = 0.0;
    bool primed_ = false;
};

std::vector<double> lowpass(const std::vector<double>& signal, double alpha);

// Streaming centered 3-point median. The window for sample i is
// (x[i-1], x[i], x[i+1]) with edge replication, so the stream runs one
// sample behind the input: step(x[i]) emits the filtered value for sample
// i-1, and flush() emits the value for the final sample.
class Median3 {
public:
    std::optional<double> step(double x) {
        std::optional<double> out;
        if (count_ == 0) {
            prev_ = prev2_ = x;
        } else if (count_ == 1) {
            out = median(prev_, prev_, x);  // index 0, left edge replicated
            prev2_ = prev_;
            prev_ = x;
        } else {
            out = median(prev2_, prev_, x);
            prev2_ = prev_;
            prev_ = x;
        }
        ++count_;
        return out;
    }

    std::optional<double> flush() const {
        if (count_ == 0) return std::nullopt;
        if (count_ == 1) return prev_;
        return median(prev2_, prev_, prev_);  // right edge replicated
    }

    void reset() { count_ = 0; }

private:
    static double median(double a, double b, double c) {
        if (a > b) std::swap(a, b);
        if (b > c) std::swap(b, c);
        if (a > b) std::swap(a, b);
        return b;
    }

    double prev2_ = 0, prev_ = 0;
    int count_ = 0;
};

// Batch 3-point median; endpoints replicate the edge sample.
std::vector<double> median3(const std::vector<double>& signal);

// Per-channel min/max over training data. `channels[c]` is the full sample
// sequence of channel c, already saturated and filtered.
NormStats fit_norm(const std::vector<std::vector<double>>& channels);

// v -> (v - min) / (max - min), clamped to [0,1].
// Degenerate channel (max == min) maps everything to 0.5.
double apply_norm_one(double v, double mn, double mx);

std::vector<double> apply_norm(const std::vector<double>& signal, double mn, double mx);

// Cut a per-site annotated signal into labeled windows.
// `channels` is [3][N] (normalized), `annotations` is [N] with values {0,1,2}.
// Windows containing any annotation-0 sample are dropped; a window is Freeze
// iff the fraction of annotation-2 samples strictly exceeds the threshold.
std::vector<Window> segment_and_label(const std::array<std::vector<double>, 3>& channels,
                                      const std::vector<int>& annotations,
                                      const WindowingConfig& cfg,
                                      int subject_id, SensorSite site);

}  // namespace fogmesh::dsp
