#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fogmesh/common.hpp"

namespace fogmesh::eval {

struct ConfusionCounts {
    std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

    std::size_t total() const { return tp + tn + fp + fn; }
};

// A metric with a zero denominator is absent, not zero; it renders as "--".
struct Metrics {
    std::optional<double> accuracy;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> f1;
};

struct RocPoint {
    double threshold;
    double tpr;  // sensitivity
    double fpr;  // 1 - specificity
};

struct RocCurve {
    std::vector<RocPoint> points;  // thresholds strictly decreasing
    double auc = 0.0;
};

// Predicted positive iff p > threshold (strict, same rule as voting).
ConfusionCounts confusion(const std::vector<double>& probabilities,
                          const std::vector<int>& labels, double threshold);

Metrics metrics(const ConfusionCounts& c);

// Throws UndefinedMetric if the named metric has a zero denominator.
double require(const std::optional<double>& m, const std::string& name);

// One point per grid threshold; AUC by trapezoid over (fpr, tpr).
RocCurve roc(const std::vector<double>& probabilities, const std::vector<int>& labels,
             const std::vector<double>& threshold_grid);

std::vector<double> default_threshold_grid(int points = 201);

// Youden's J maximizer; ties resolved toward the lower threshold.
double best_threshold(const RocCurve& curve);

std::string format_metric(const std::optional<double>& m);

// One line of the comparison table. Reference rows carry published numbers
// for context and are marked "reported, not reproduced" in the output.
struct ReportRow {
    std::string name;
    std::string threshold_label;  // "0.4", "best", or "" for reference rows
    std::optional<double> threshold;
    Metrics metrics;
    std::optional<double> auc;
    std::optional<std::size_t> param_count;
    bool reference = false;
};

// Published results quoted for comparison (not produced by this codebase).
std::vector<ReportRow> reference_rows();

// All writers are deterministic: identical inputs give identical bytes.
void write_metrics_csv(std::ostream& out, const std::vector<ReportRow>& rows);
void write_roc_csv(std::ostream& out, const RocCurve& curve);
void write_report_md(std::ostream& out, const std::vector<ReportRow>& rows,
                     const std::vector<std::string>& notes);

}  // namespace fogmesh::eval
