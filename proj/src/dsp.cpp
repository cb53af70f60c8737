#include "fogmesh/dsp.hpp"

#include <algorithm>
#include <cmath>

namespace fogmesh::dsp {

std::vector<double> saturate(const std::vector<double>& signal, double limit) {
    std::vector<double> out(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) out[i] = saturate_one(signal[i], limit);
    return out;
}

std::vector<double> lowpass(const std::vector<double>& signal, double alpha) {
    LowPass f(alpha);
    std::vector<double> out(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) out[i] = f.step(signal[i]);
    return out;
}

std::vector<double> median3(const std::vector<double>& signal) {
    Median3 f;
    std::vector<double> out;
    out.reserve(signal.size());
    for (double x : signal)
        if (auto y = f.step(x)) out.push_back(*y);
    if (auto y = f.flush()) out.push_back(*y);
    return out;
}

NormStats fit_norm(const std::vector<std::vector<double>>& channels) {
    NormStats stats;
    for (const auto& ch : channels) {
        if (ch.empty()) throw EmptyChannel("fit_norm: empty channel");
        auto [mn, mx] = std::minmax_element(ch.begin(), ch.end());
        stats.min.push_back(*mn);
        stats.max.push_back(*mx);
    }
    return stats;
}

double apply_norm_one(double v, double mn, double mx) {
    if (mx <= mn) return 0.5;
    double u = (v - mn) / (mx - mn);
    return std::clamp(u, 0.0, 1.0);
}

std::vector<double> apply_norm(const std::vector<double>& signal, double mn, double mx) {
    std::vector<double> out(signal.size());
    for (std::size_t i = 0; i < signal.size(); ++i) out[i] = apply_norm_one(signal[i], mn, mx);
    return out;
}

std::vector<Window> segment_and_label(const std::array<std::vector<double>, 3>& channels,
                                      const std::vector<int>& annotations,
                                      const WindowingConfig& cfg,
                                      int subject_id, SensorSite site) {
    const std::size_t n = annotations.size();
    for (const auto& ch : channels) {
        if (ch.size() != n) throw ShapeMismatch("segment_and_label: channel/annotation length mismatch");
    }
    const int len = cfg.window_len;
    const int hop = cfg.hop();
    if (static_cast<int>(n) < len) throw SignalTooShort("segment_and_label: signal shorter than window");

    std::vector<Window> windows;
    for (std::size_t start = 0; start + len <= n; start += hop) {
        int freeze_count = 0;
        bool irrelevant = false;
        for (int i = 0; i < len; ++i) {
            int a = annotations[start + i];
            if (a == 0) {
                irrelevant = true;
                break;
            }
            if (a == 2) ++freeze_count;
        }
        if (irrelevant) continue;

        Window w;
        w.data.resize(static_cast<std::size_t>(len) * 3);
        for (int i = 0; i < len; ++i)
            for (int c = 0; c < 3; ++c)
                w.data[static_cast<std::size_t>(i) * 3 + c] =
                    static_cast<float>(channels[c][start + i]);
        double freeze_fraction = static_cast<double>(freeze_count) / len;
        w.label = freeze_fraction > cfg.freeze_fraction_threshold ? Label::Freeze : Label::NoFreeze;
        w.subject_id = subject_id;
        w.site = site;
        w.start_index = start;
        windows.push_back(std::move(w));
    }
    return windows;
}

}  // namespace fogmesh::dsp
