#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fogmesh/bundle.hpp"
#include "fogmesh/daphnet.hpp"
#include "fogmesh/dsp.hpp"
#include "fogmesh/eval.hpp"
#include "fogmesh/secnn.hpp"

namespace fogmesh::train {

struct ClassBalance {
    std::size_t n_freeze = 0;
    std::size_t n_nofreeze = 0;
    double weight_freeze = 1.0;    // N / (2 * n_freeze)
    double weight_nofreeze = 1.0;  // N / (2 * n_nofreeze)
    double output_bias_init = 0.0;  // ln(n_freeze / n_nofreeze)
};

ClassBalance class_balance_counts(std::size_t n_freeze, std::size_t n_nofreeze);
ClassBalance class_balance(const std::vector<dsp::Window>& windows);

// loss = -w_y * [y ln p + (1-y) ln(1-p)], p clamped to [eps, 1-eps]
double weighted_bce(double p, int y, const ClassBalance& balance);

struct TrainConfig {
    int epochs = 100;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int patience = 10;  // early stop on validation loss
    std::uint64_t seed = 0;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> val_f1;
    std::vector<double> epoch_seconds;
};

struct AdamState {
    std::vector<secnn::NamedTensor<float>> m;
    std::vector<secnn::NamedTensor<float>> v;
};

AdamState make_adam_state(const secnn::ModelConfig& cfg);

// Bias-corrected Adam update, in place. t is 1-based.
void adam_step(secnn::Model<float>& model, const std::vector<secnn::NamedTensor<float>>& grads,
               AdamState& state, int t, const TrainConfig& cfg);

// Normalization stats over the window pool referenced by `indices`
// (training-fold windows only; window data is saturated+filtered milli-g).
dsp::NormStats fit_norm_windows(const std::vector<dsp::Window>& windows,
                                const std::vector<std::size_t>& indices);

// Window values -> model input via min-max stats.
std::vector<float> normalize_window(const dsp::Window& w, const dsp::NormStats& stats);

// Mean weighted-BCE gradients over one batch; returns the mean loss.
// drop_rng enables training-mode dropout.
double batch_backward(const secnn::Model<float>& model,
                      const std::vector<const dsp::Window*>& batch,
                      const dsp::NormStats& stats, const ClassBalance& balance, Rng* drop_rng,
                      std::vector<secnn::NamedTensor<float>>& grads);

struct FoldResult {
    secnn::WeightsBundle bundle;
    TrainHistory history;
};

// Train on `train_idx`, early-stop on `val_idx`; NormStats and ClassBalance
// come from the training windows only. Returns the best-validation weights.
FoldResult train_fold(const std::vector<dsp::Window>& windows,
                      const std::vector<std::size_t>& train_idx,
                      const std::vector<std::size_t>& val_idx, const secnn::ModelConfig& model_cfg,
                      const TrainConfig& train_cfg, int fold_id);

struct CvResult {
    std::vector<FoldResult> folds;
    std::vector<eval::Metrics> fold_metrics;  // on each held-out fold, threshold 0.4
    eval::Metrics aggregate;                  // mean over folds
    // test set, scored once with the fold-ensemble mean probability
    std::vector<double> test_probabilities;
    std::vector<int> test_labels;
};

CvResult cross_validate(const std::vector<dsp::Window>& windows, const daphnet::DatasetSplit& split,
                        const secnn::ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        double threshold = 0.4);

}  // namespace fogmesh::train
