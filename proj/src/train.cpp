#include "fogmesh/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace fogmesh::train {

namespace {
constexpr double kEps = 1e-7;
}

ClassBalance class_balance_counts(std::size_t n_freeze, std::size_t n_nofreeze) {
    if (n_freeze == 0 || n_nofreeze == 0)
        throw SingleClass("class_balance: both classes must be present");
    ClassBalance b;
    b.n_freeze = n_freeze;
    b.n_nofreeze = n_nofreeze;
    double total = static_cast<double>(n_freeze + n_nofreeze);
    b.weight_freeze = total / (2.0 * static_cast<double>(n_freeze));
    b.weight_nofreeze = total / (2.0 * static_cast<double>(n_nofreeze));
    b.output_bias_init = std::log(static_cast<double>(n_freeze) / static_cast<double>(n_nofreeze));
    return b;
}

ClassBalance class_balance(const std::vector<dsp::Window>& windows) {
    std::size_t nf = 0, nn = 0;
    for (const auto& w : windows) (w.label == dsp::Label::Freeze ? nf : nn)++;
    return class_balance_counts(nf, nn);
}

double weighted_bce(double p, int y, const ClassBalance& balance) {
    p = std::clamp(p, kEps, 1.0 - kEps);
    double w = y != 0 ? balance.weight_freeze : balance.weight_nofreeze;
    return -w * (y != 0 ? std::log(p) : std::log(1.0 - p));
}

AdamState make_adam_state(const secnn::ModelConfig& cfg) {
    return {secnn::zero_params<float>(cfg), secnn::zero_params<float>(cfg)};
}

void adam_step(secnn::Model<float>& model, const std::vector<secnn::NamedTensor<float>>& grads,
               AdamState& state, int t, const TrainConfig& cfg) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        auto& w = model.params[i].v;
        const auto& g = grads[i].v;
        auto& m = state.m[i].v;
        auto& v = state.v[i].v;
        for (std::size_t j = 0; j < w.size(); ++j) {
            double gj = g[j];
            double mj = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            double vj = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            double mhat = mj / bc1;
            double vhat = vj / bc2;
            w[j] = static_cast<float>(w[j] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
        }
    }
}

dsp::NormStats fit_norm_windows(const std::vector<dsp::Window>& windows,
                                const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw EmptyChannel("fit_norm_windows: no windows");
    dsp::NormStats stats;
    stats.min.assign(3, std::numeric_limits<double>::infinity());
    stats.max.assign(3, -std::numeric_limits<double>::infinity());
    for (std::size_t idx : indices) {
        const auto& w = windows[idx];
        for (std::size_t i = 0; i < w.data.size(); ++i) {
            int c = static_cast<int>(i % 3);
            stats.min[c] = std::min(stats.min[c], static_cast<double>(w.data[i]));
            stats.max[c] = std::max(stats.max[c], static_cast<double>(w.data[i]));
        }
    }
    return stats;
}

std::vector<float> normalize_window(const dsp::Window& w, const dsp::NormStats& stats) {
    std::vector<float> out(w.data.size());
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        int c = static_cast<int>(i % 3);
        out[i] = static_cast<float>(dsp::apply_norm_one(w.data[i], stats.min[c], stats.max[c]));
    }
    return out;
}

namespace {

// gradients of mean weighted BCE over pre-normalized inputs
double batch_backward_inputs(const secnn::Model<float>& model,
                             const std::vector<const std::vector<float>*>& inputs,
                             const std::vector<int>& labels, const ClassBalance& balance,
                             Rng* drop_rng, std::vector<secnn::NamedTensor<float>>& grads) {
    for (auto& g : grads) std::fill(g.v.begin(), g.v.end(), 0.0f);
    const double inv_b = 1.0 / static_cast<double>(inputs.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        secnn::Trace<float> tr;
        double p = secnn::forward(model, *inputs[i], &tr, drop_rng);
        int y = labels[i];
        loss += weighted_bce(p, y, balance);
        double w = y != 0 ? balance.weight_freeze : balance.weight_nofreeze;
        double pc = std::clamp(p, kEps, 1.0 - kEps);
        // d/dlogit of -w[y ln p + (1-y) ln(1-p)] = w (p - y)
        float dlogit = static_cast<float>(w * (pc - y) * inv_b);
        secnn::backward(model, *inputs[i], tr, dlogit, grads);
    }
    return loss * inv_b;
}

}  // namespace

double batch_backward(const secnn::Model<float>& model,
                      const std::vector<const dsp::Window*>& batch,
                      const dsp::NormStats& stats, const ClassBalance& balance, Rng* drop_rng,
                      std::vector<secnn::NamedTensor<float>>& grads) {
    std::vector<std::vector<float>> norm;
    std::vector<const std::vector<float>*> inputs;
    std::vector<int> labels;
    norm.reserve(batch.size());
    for (const auto* w : batch) {
        norm.push_back(normalize_window(*w, stats));
        labels.push_back(w->label == dsp::Label::Freeze ? 1 : 0);
    }
    for (const auto& n : norm) inputs.push_back(&n);
    return batch_backward_inputs(model, inputs, labels, balance, drop_rng, grads);
}

FoldResult train_fold(const std::vector<dsp::Window>& windows,
                      const std::vector<std::size_t>& train_idx,
                      const std::vector<std::size_t>& val_idx, const secnn::ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, int fold_id) {
    ClassBalance balance;
    {
        std::vector<dsp::Window> tw;
        tw.reserve(train_idx.size());
        for (std::size_t i : train_idx) tw.push_back(windows[i]);
        balance = class_balance(tw);
    }
    dsp::NormStats stats = fit_norm_windows(windows, train_idx);

    secnn::ModelConfig cfg = model_cfg;
    cfg.seed = derive_seed(train_cfg.seed, "model-init", static_cast<std::uint64_t>(fold_id));
    auto model = secnn::build_model<float>(cfg, balance.output_bias_init);

    // pre-normalize once; training revisits every window many times
    std::vector<std::vector<float>> train_inputs, val_inputs;
    std::vector<int> train_labels, val_labels;
    for (std::size_t i : train_idx) {
        train_inputs.push_back(normalize_window(windows[i], stats));
        train_labels.push_back(windows[i].label == dsp::Label::Freeze ? 1 : 0);
    }
    for (std::size_t i : val_idx) {
        val_inputs.push_back(normalize_window(windows[i], stats));
        val_labels.push_back(windows[i].label == dsp::Label::Freeze ? 1 : 0);
    }

    FoldResult result;
    auto best = model.params;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;

    AdamState adam = make_adam_state(cfg);
    auto grads = secnn::zero_params<float>(cfg);
    Rng drop_rng(derive_seed(train_cfg.seed, "dropout", static_cast<std::uint64_t>(fold_id)));
    int step = 0;

    for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();

        std::vector<std::size_t> order(train_inputs.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(train_cfg.seed, "shuffle",
                                    static_cast<std::uint64_t>(fold_id) * 1000003 + epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
            std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
            std::vector<const std::vector<float>*> inputs;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                inputs.push_back(&train_inputs[order[i]]);
                labels.push_back(train_labels[order[i]]);
            }
            epoch_loss += batch_backward_inputs(model, inputs, labels, balance, &drop_rng, grads);
            adam_step(model, grads, adam, ++step, train_cfg);
            ++batches;
        }
        epoch_loss /= std::max<std::size_t>(1, batches);

        double val_loss = 0.0;
        std::vector<double> val_probs;
        for (std::size_t i = 0; i < val_inputs.size(); ++i) {
            double p = secnn::forward(model, val_inputs[i]);
            val_probs.push_back(p);
            val_loss += weighted_bce(p, val_labels[i], balance);
        }
        val_loss /= std::max<std::size_t>(1, val_inputs.size());
        double val_f1 = 0.0;
        if (!val_probs.empty()) {
            auto m = eval::metrics(eval::confusion(val_probs, val_labels, 0.4));
            val_f1 = m.f1.value_or(0.0);
        }

        auto t1 = std::chrono::steady_clock::now();
        result.history.train_loss.push_back(epoch_loss);
        result.history.val_loss.push_back(val_loss);
        result.history.val_f1.push_back(val_f1);
        result.history.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());

        if (val_loss < best_val) {
            best_val = val_loss;
            best = model.params;
            since_best = 0;
        } else if (++since_best >= train_cfg.patience) {
            break;
        }
    }

    model.params = std::move(best);
    result.bundle = secnn::bundle_from_model(model, stats, train_cfg.seed, fold_id);
    return result;
}

CvResult cross_validate(const std::vector<dsp::Window>& windows, const daphnet::DatasetSplit& split,
                        const secnn::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        double threshold) {
    if (split.fold_assignments.size() != windows.size())
        throw LengthMismatch("cross_validate: split size does not match window count");

    CvResult cv;
    for (int fold = 0; fold < split.fold_count; ++fold) {
        std::vector<std::size_t> train_idx, val_idx;
        for (std::size_t i = 0; i < windows.size(); ++i) {
            int a = split.fold_assignments[i];
            if (a == daphnet::DatasetSplit::kTest) continue;
            (a == fold ? val_idx : train_idx).push_back(i);
        }
        auto result = train_fold(windows, train_idx, val_idx, model_cfg, train_cfg, fold);

        auto model = secnn::model_from_bundle(result.bundle);
        std::vector<double> probs;
        std::vector<int> labels;
        for (std::size_t i : val_idx) {
            probs.push_back(secnn::forward(model, normalize_window(windows[i], result.bundle.norm)));
            labels.push_back(windows[i].label == dsp::Label::Freeze ? 1 : 0);
        }
        cv.fold_metrics.push_back(eval::metrics(eval::confusion(probs, labels, threshold)));
        cv.folds.push_back(std::move(result));
    }

    // mean over folds, per metric, where defined
    auto mean_of = [&](auto getter) -> std::optional<double> {
        double sum = 0.0;
        int n = 0;
        for (const auto& m : cv.fold_metrics)
            if (auto v = getter(m)) {
                sum += *v;
                ++n;
            }
        if (n == 0) return std::nullopt;
        return sum / n;
    };
    cv.aggregate.accuracy = mean_of([](const eval::Metrics& m) { return m.accuracy; });
    cv.aggregate.sensitivity = mean_of([](const eval::Metrics& m) { return m.sensitivity; });
    cv.aggregate.specificity = mean_of([](const eval::Metrics& m) { return m.specificity; });
    cv.aggregate.f1 = mean_of([](const eval::Metrics& m) { return m.f1; });

    // test set scored once with the fold-ensemble mean probability
    std::vector<secnn::Model<float>> fold_models;
    for (const auto& f : cv.folds) fold_models.push_back(secnn::model_from_bundle(f.bundle));
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (split.fold_assignments[i] != daphnet::DatasetSplit::kTest) continue;
        double sum = 0.0;
        for (std::size_t f = 0; f < fold_models.size(); ++f)
            sum += secnn::forward(fold_models[f],
                                  normalize_window(windows[i], cv.folds[f].bundle.norm));
        cv.test_probabilities.push_back(sum / static_cast<double>(fold_models.size()));
        cv.test_labels.push_back(windows[i].label == dsp::Label::Freeze ? 1 : 0);
    }
    return cv;
}

}  // namespace fogmesh::train
