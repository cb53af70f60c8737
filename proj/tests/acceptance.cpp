// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criterion 1 runs the full pipeline on the real dataset
// when FOGMESH_DATA points at it, and otherwise falls back to the separable
// synthetic fixture (clearly noted in the output).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "fogmesh/bundle.hpp"
#include "fogmesh/daphnet.hpp"
#include "fogmesh/dsp.hpp"
#include "fogmesh/eval.hpp"
#include "fogmesh/nodesim.hpp"
#include "fogmesh/quant.hpp"
#include "fogmesh/secnn.hpp"
#include "fogmesh/train.hpp"

using namespace fogmesh;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s - %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    if (!pass) ++g_failures;
}

std::vector<dsp::Window> preprocess_site(const daphnet::SubjectRecording& rec,
                                         dsp::SensorSite site) {
    dsp::WindowingConfig wc;
    double alpha = dsp::FilterConfig{}.alpha();
    std::array<std::vector<double>, 3> channels;
    std::vector<int> annotations;
    for (const auto& r : rec.records) {
        const auto& s = site == dsp::SensorSite::Ankle   ? r.ankle
                        : site == dsp::SensorSite::Thigh ? r.thigh
                                                         : r.trunk;
        for (int c = 0; c < 3; ++c)
            channels[c].push_back(dsp::saturate_one(s[c], wc.saturation_limit_mg));
        annotations.push_back(r.annotation);
    }
    for (auto& ch : channels) ch = dsp::lowpass(dsp::median3(ch), alpha);
    return dsp::segment_and_label(channels, annotations, wc, rec.subject_id, site);
}

struct PipelineState {
    std::array<std::vector<dsp::Window>, 3> pools;
    std::array<daphnet::DatasetSplit, 3> splits;
    std::array<train::CvResult, 3> cv;
    bool synthetic = false;
};

std::vector<daphnet::SubjectRecording> synthetic_corpus(std::uint64_t seed) {
    std::vector<daphnet::SubjectRecording> recs;
    for (int i = 0; i < 6; ++i) {
        double d = 120.0;
        auto rec = nodesim::gen_synthetic(d, {{0.20 * d, 0.35 * d}, {0.60 * d, 0.80 * d}},
                                          derive_seed(seed, "synthetic", i));
        rec.subject_id = i + 1;
        recs.push_back(std::move(rec));
    }
    return recs;
}

PipelineState run_pipeline(std::uint64_t seed) {
    PipelineState st;
    std::vector<daphnet::SubjectRecording> recordings;
    if (const char* env = std::getenv("FOGMESH_DATA"); env && *env) {
        try {
            recordings = daphnet::load_dataset(env);
        } catch (const MissingDataset&) {
        }
    }
    if (recordings.empty()) {
        st.synthetic = true;
        std::printf(
            "[note] FOGMESH_DATA not set or empty; criteria 1 and 4 run on the synthetic "
            "fixture instead of the recorded dataset\n");
        recordings = synthetic_corpus(seed);
    }

    for (const auto& rec : recordings)
        for (int s = 0; s < 3; ++s) {
            auto ws = preprocess_site(rec, static_cast<dsp::SensorSite>(s));
            st.pools[s].insert(st.pools[s].end(), ws.begin(), ws.end());
        }

    for (int s = 0; s < 3; ++s) {
        st.splits[s] = daphnet::make_split(st.pools[s].size(), 4, 0.20,
                                           derive_seed(seed, "split", s));
        secnn::ModelConfig mc;
        train::TrainConfig tc;
        tc.seed = derive_seed(seed, "train-site", s);
        if (st.synthetic) tc.epochs = 10;  // the separable fixture converges fast
        st.cv[s] = train::cross_validate(st.pools[s], st.splits[s], mc, tc);
    }
    return st;
}

std::pair<std::vector<double>, std::vector<int>> pooled_test(const PipelineState& st) {
    std::vector<double> probs;
    std::vector<int> labels;
    for (int s = 0; s < 3; ++s) {
        probs.insert(probs.end(), st.cv[s].test_probabilities.begin(),
                     st.cv[s].test_probabilities.end());
        labels.insert(labels.end(), st.cv[s].test_labels.begin(), st.cv[s].test_labels.end());
    }
    return {probs, labels};
}

std::string fmt(const char* pattern, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, pattern, a, b);
    return buf;
}

}  // namespace

int main() {
    // --- criterion 2: parameter budget (cheap, run first) ---
    {
        std::size_t n = secnn::count_params(secnn::ModelConfig{});
        report(2, n == 19819 && n <= 20000,
               "default model has " + std::to_string(n) + " parameters (budget 20000)");
    }

    // --- criterion 7: low-pass closed-form step response ---
    {
        double alpha = dsp::FilterConfig{}.alpha();
        dsp::LowPass f(alpha);
        double worst = std::abs(f.step(0.0));  // zero initial state
        for (int k = 1; k <= 1000; ++k)
            worst = std::max(worst, std::abs(f.step(1.0) - (1.0 - std::pow(1.0 - alpha, k))));
        report(7, worst < 1e-9, fmt("unit-step response vs closed form, worst |err| %.3e", worst));
    }

    // --- criterion 6: vote oracle over the full grid x delivery subsets ---
    {
        bool ok = true;
        long cases = 0;
        for (int mask = 0; mask < 8; ++mask)
            for (int a = 0; a <= 10; ++a)
                for (int b = 0; b <= 10; ++b)
                    for (int c = 0; c <= 10; ++c) {
                        double p[3] = {a / 10.0, b / 10.0, c / 10.0};
                        std::vector<double> received;
                        int above = 0;
                        for (int i = 0; i < 3; ++i)
                            if (mask & (1 << i)) {
                                received.push_back(p[i]);
                                if (p[i] > 0.4) ++above;
                            }
                        if (nodesim::central_vote(received, 0.4, 2) != (above >= 2)) ok = false;
                        ++cases;
                    }
        report(6, ok, std::to_string(cases) + " vote cases against the brute-force oracle");
    }

    // --- criterion 3: gradient check on the reduced configuration ---
    {
        secnn::ModelConfig cfg;
        cfg.conv_channels = {2, 2, 2};
        cfg.se_reduction = 2;
        cfg.dense_units = {4, 3};
        cfg.input_len = 8;
        cfg.input_channels = 2;
        cfg.kernel_size = 3;
        cfg.dropout_rate = 0.0;
        auto bal = train::class_balance_counts(1, 3);
        const double h = 1e-3;
        int checked = 0;
        double worst = 0.0;
        for (std::uint64_t trial = 0; trial < 5; ++trial) {
            cfg.seed = trial * 31 + 1;
            auto m = secnn::build_model<double>(cfg);
            Rng rng(trial + 900);
            std::vector<double> window(cfg.input_len * cfg.input_channels);
            for (auto& v : window) v = rng.next_uniform(0, 1);
            int y = static_cast<int>(trial % 2);
            secnn::Trace<double> tr;
            double p = secnn::forward(m, window, &tr);
            double w = y ? bal.weight_freeze : bal.weight_nofreeze;
            auto grads = secnn::zero_params<double>(cfg);
            secnn::backward(m, window, tr, w * (p - y), grads);

            auto diff = [&](std::size_t ti, std::size_t j, double step) {
                double orig = m.params[ti].v[j];
                m.params[ti].v[j] = orig + step;
                double lp = train::weighted_bce(secnn::forward(m, window), y, bal);
                m.params[ti].v[j] = orig - step;
                double lm = train::weighted_bce(secnn::forward(m, window), y, bal);
                m.params[ti].v[j] = orig;
                return (lp - lm) / (2 * step);
            };
            for (std::size_t ti = 0; ti < m.params.size(); ++ti)
                for (int rep = 0; rep < 3 && !m.params[ti].v.empty(); ++rep) {
                    std::size_t j = rng.next_below(m.params[ti].v.size());
                    double fd = diff(ti, j, h), fd2 = diff(ti, j, h / 2);
                    // skip coordinates whose stencil straddles a ReLU/pool kink
                    if (std::abs(fd - fd2) >
                        1e-3 * std::max({std::abs(fd), std::abs(fd2), 1e-6}))
                        continue;
                    double an = grads[ti].v[j];
                    worst = std::max(worst, std::abs(fd2 - an) /
                                                std::max({std::abs(fd2), std::abs(an), 1e-6}));
                    ++checked;
                }
        }
        report(3, checked >= 100 && worst < 1e-4,
               fmt("analytic vs central-difference gradients, %.0f points, worst rel err %.3e",
                   double(checked), worst));
    }

    // --- criteria 1 + 4: pipeline on recorded data (or synthetic fallback) ---
    const std::uint64_t kSeed = 9001;
    PipelineState st = run_pipeline(kSeed);
    {
        auto [probs, labels] = pooled_test(st);
        auto curve = eval::roc(probs, labels, eval::default_threshold_grid());
        double best = eval::best_threshold(curve);
        auto m = eval::metrics(eval::confusion(probs, labels, best));
        double sens = m.sensitivity.value_or(0.0), f1 = m.f1.value_or(0.0);
        std::string src = st.synthetic ? "synthetic fixture" : "recorded dataset";
        report(1, sens >= 0.80 && f1 >= 0.80,
               src + ": " + fmt("best-threshold sensitivity %.4f, F1 %.4f (floor 0.80)", sens, f1));
    }
    {
        // quantize every fold model, score the pooled test set on both paths
        std::vector<double> fprobs, qprobs;
        std::vector<int> labels;
        for (int s = 0; s < 3; ++s) {
            auto test_idx = [&] {
                std::vector<std::size_t> idx;
                for (std::size_t i = 0; i < st.splits[s].fold_assignments.size(); ++i)
                    if (st.splits[s].fold_assignments[i] == daphnet::DatasetSplit::kTest)
                        idx.push_back(i);
                return idx;
            }();
            std::vector<double> fsum(test_idx.size(), 0.0), qsum(test_idx.size(), 0.0);
            for (int f = 0; f < 4; ++f) {
                const auto& bundle = st.cv[s].folds[f].bundle;
                auto model = secnn::model_from_bundle(bundle);
                std::vector<std::vector<float>> calib;
                for (std::size_t i = 0; i < st.pools[s].size(); ++i) {
                    int a = st.splits[s].fold_assignments[i];
                    if (a == daphnet::DatasetSplit::kTest || a == f) continue;
                    calib.push_back(train::normalize_window(st.pools[s][i], bundle.norm));
                }
                auto qm = quant::quantize(bundle, quant::calibrate(model, calib));
                for (std::size_t i = 0; i < test_idx.size(); ++i) {
                    auto x = train::normalize_window(st.pools[s][test_idx[i]], bundle.norm);
                    fsum[i] += secnn::forward(model, x);
                    qsum[i] += quant::forward_q(qm, x);
                }
            }
            for (std::size_t i = 0; i < test_idx.size(); ++i) {
                fprobs.push_back(fsum[i] / 4.0);
                qprobs.push_back(qsum[i] / 4.0);
                labels.push_back(st.pools[s][test_idx[i]].label == dsp::Label::Freeze ? 1 : 0);
            }
        }
        auto grid = eval::default_threshold_grid();
        double gap = std::abs(eval::roc(fprobs, labels, grid).auc -
                              eval::roc(qprobs, labels, grid).auc);
        std::size_t agree = 0;
        for (std::size_t i = 0; i < fprobs.size(); ++i)
            if ((fprobs[i] > 0.4) == (qprobs[i] > 0.4)) ++agree;
        double rate = static_cast<double>(agree) / static_cast<double>(fprobs.size());
        report(4, gap <= 0.02 && rate >= 0.95,
               fmt("int8 vs float: AUC gap %.5f (cap 0.02), class agreement %.4f (floor 0.95)",
                   gap, rate));
    }

    // --- criterion 5: stream/batch equivalence on a held-out recording ---
    {
        auto rec = nodesim::gen_synthetic(60.0, {{10.0, 20.0}, {35.0, 50.0}},
                                          derive_seed(kSeed, "heldout", 0));
        const auto& bundle = st.cv[0].folds[0].bundle;
        auto batch = nodesim::batch_node_probabilities(rec, dsp::SensorSite::Ankle, bundle);
        nodesim::SensorNode node(dsp::SensorSite::Ankle, bundle);
        std::vector<double> streamed;
        for (const auto& r : rec.records)
            if (auto p = node.ingest(r.ankle, static_cast<double>(r.time_ms)))
                streamed.push_back(p->probability);
        if (auto p = node.finish(60000.0)) streamed.push_back(p->probability);
        double worst = streamed.size() == batch.size()
                           ? 0.0
                           : std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < std::min(streamed.size(), batch.size()); ++i)
            worst = std::max(worst, std::abs(streamed[i] - batch[i]));
        report(5, worst <= 1e-6,
               fmt("streamed vs batch probabilities, worst |diff| %.3e (cap 1e-6)", worst));
    }

    // --- criterion 8: byte-identical outputs for two identical-seed runs ---
    {
        auto run_once = [](std::uint64_t seed) {
            auto recs = synthetic_corpus(seed);
            std::vector<dsp::Window> pool = preprocess_site(recs[0], dsp::SensorSite::Ankle);
            auto more = preprocess_site(recs[1], dsp::SensorSite::Ankle);
            pool.insert(pool.end(), more.begin(), more.end());
            auto split = daphnet::make_split(pool.size(), 2, 0.2, derive_seed(seed, "split", 0));
            train::TrainConfig tc;
            tc.epochs = 3;
            tc.seed = derive_seed(seed, "train-site", 0);
            auto cv = train::cross_validate(pool, split, secnn::ModelConfig{}, tc);

            std::vector<eval::ReportRow> rows;
            for (std::size_t f = 0; f < cv.fold_metrics.size(); ++f) {
                eval::ReportRow row;
                row.name = "fold" + std::to_string(f);
                row.threshold_label = "0.4";
                row.threshold = 0.4;
                row.metrics = cv.fold_metrics[f];
                rows.push_back(row);
            }
            std::ostringstream metrics_csv;
            eval::write_metrics_csv(metrics_csv, rows);

            std::array<secnn::WeightsBundle, 3> bundles{cv.folds[0].bundle, cv.folds[0].bundle,
                                                        cv.folds[0].bundle};
            nodesim::SimConfig sim;
            sim.transport.loss_probability = 0.2;
            sim.transport.latency_ms = 15.0;
            sim.transport.jitter_ms = 5.0;
            sim.transport.seed = derive_seed(seed, "transport-root", 0);
            auto trace =
                nodesim::run_simulation(recs[2], bundles, {nullptr, nullptr, nullptr}, sim);
            std::ostringstream jsonl;
            nodesim::write_trace_jsonl(jsonl, trace);
            return std::pair<std::string, std::string>{metrics_csv.str(), jsonl.str()};
        };
        auto a = run_once(4242), b = run_once(4242);
        report(8, a.first == b.first && a.second == b.second,
               "identical-seed reruns produce byte-identical metrics and trace files");
    }

    // --- criterion 9: simulation throughput on one hour of data ---
    {
        auto rec = nodesim::gen_synthetic(
            3600.0, {{600.0, 700.0}, {1800.0, 2000.0}, {3000.0, 3100.0}}, 77);
        std::array<secnn::WeightsBundle, 3> bundles{st.cv[0].folds[0].bundle,
                                                    st.cv[1].folds[0].bundle,
                                                    st.cv[2].folds[0].bundle};
        nodesim::SimConfig sim;
        sim.transport.loss_probability = 0.1;
        sim.transport.latency_ms = 20.0;
        sim.transport.jitter_ms = 10.0;
        auto t0 = std::chrono::steady_clock::now();
        auto trace = nodesim::run_simulation(rec, bundles, {nullptr, nullptr, nullptr}, sim);
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report(9, secs <= 36.0 && trace.frames.size() > 3000,
               fmt("1 h of 64 Hz data simulated in %.2f s (cap 36 s, %.0fx real time)", secs,
                   secs > 0 ? 3600.0 / secs : 0.0));
    }

    if (g_failures == 0) {
        std::printf("all acceptance criteria passed\n");
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", g_failures);
    return 1;
}
