#include "fogmesh/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace fogmesh::eval {

ConfusionCounts confusion(const std::vector<double>& probabilities,
                          const std::vector<int>& labels, double threshold) {
    if (probabilities.size() != labels.size())
        throw LengthMismatch("confusion: probabilities/labels length mismatch");
    ConfusionCounts c;
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
        bool pred = probabilities[i] > threshold;
        bool truth = labels[i] != 0;
        if (pred && truth) ++c.tp;
        else if (pred && !truth) ++c.fp;
        else if (!pred && truth) ++c.fn;
        else ++c.tn;
    }
    return c;
}

Metrics metrics(const ConfusionCounts& c) {
    Metrics m;
    if (c.total() > 0)
        m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    if (c.tp + c.fn > 0)
        m.sensitivity = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    if (c.tn + c.fp > 0)
        m.specificity = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
    if (2 * c.tp + c.fn + c.fp > 0)
        m.f1 = static_cast<double>(2 * c.tp) / static_cast<double>(2 * c.tp + c.fn + c.fp);
    return m;
}

double require(const std::optional<double>& m, const std::string& name) {
    if (!m) throw UndefinedMetric(name);
    return *m;
}

std::vector<double> default_threshold_grid(int points) {
    std::vector<double> grid(points);
    for (int i = 0; i < points; ++i) grid[i] = static_cast<double>(i) / (points - 1);
    return grid;
}

RocCurve roc(const std::vector<double>& probabilities, const std::vector<int>& labels,
             const std::vector<double>& threshold_grid) {
    std::size_t pos = 0, neg = 0;
    for (int y : labels) (y != 0 ? pos : neg)++;
    if (pos == 0 || neg == 0) throw SingleClass("roc: both classes required");

    std::vector<double> grid = threshold_grid;
    std::sort(grid.begin(), grid.end(), std::greater<>());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    RocCurve curve;
    for (double t : grid) {
        ConfusionCounts c = confusion(probabilities, labels, t);
        curve.points.push_back({t, static_cast<double>(c.tp) / pos,
                                static_cast<double>(c.fp) / neg});
    }

    // trapezoid over (fpr, tpr), sorted by fpr; the grid end points pin
    // (0,0) and (1,1) when thresholds 1 and 0 are included
    std::vector<std::pair<double, double>> pts;
    pts.reserve(curve.points.size() + 2);
    pts.push_back({0.0, 0.0});
    for (const auto& p : curve.points) pts.push_back({p.fpr, p.tpr});
    pts.push_back({1.0, 1.0});
    std::sort(pts.begin(), pts.end());
    double auc = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        auc += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) / 2.0;
    curve.auc = auc;
    return curve;
}

double best_threshold(const RocCurve& curve) {
    if (curve.points.empty()) throw Error("best_threshold: empty curve");
    double best_j = -2.0;
    double best_t = 0.0;
    for (const auto& p : curve.points) {
        double j = p.tpr - p.fpr;  // sensitivity + specificity - 1
        if (j > best_j || (j == best_j && p.threshold < best_t)) {
            best_j = j;
            best_t = p.threshold;
        }
    }
    return best_t;
}

std::string format_metric(const std::optional<double>& m) {
    if (!m) return "--";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", *m * 100.0);
    return buf;
}

namespace {

std::string csv_value(const std::optional<double>& m) {
    if (!m) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *m);
    return buf;
}

}  // namespace

std::vector<ReportRow> reference_rows() {
    // Published wireless FoG-detection results quoted for context; these
    // numbers are reported by their authors, not reproduced here.
    std::vector<ReportRow> rows;
    ReportRow desktop;
    desktop.name = "reference: desktop float model (reported)";
    desktop.metrics.accuracy = 0.8300;
    desktop.metrics.sensitivity = 0.8540;
    desktop.metrics.f1 = 0.8550;
    desktop.param_count = 19995;
    desktop.reference = true;
    rows.push_back(desktop);

    ReportRow embedded;
    embedded.name = "reference: embedded quantized model (reported)";
    embedded.metrics.accuracy = 0.8148;
    embedded.metrics.sensitivity = 0.8880;
    embedded.metrics.specificity = 0.8071;
    embedded.metrics.f1 = 0.8534;
    embedded.param_count = 19995;
    embedded.reference = true;
    rows.push_back(embedded);

    ReportRow se_prior;
    se_prior.name = "reference: prior squeeze-excitation network (reported)";
    se_prior.metrics.accuracy = 0.9566;
    se_prior.reference = true;
    rows.push_back(se_prior);
    return rows;
}

void write_metrics_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
    out << "row,threshold_label,threshold,accuracy,sensitivity,specificity,f1,auc,params,"
           "reference\n";
    for (const auto& r : rows) {
        out << r.name << ',' << r.threshold_label << ',' << csv_value(r.threshold) << ','
            << csv_value(r.metrics.accuracy) << ',' << csv_value(r.metrics.sensitivity) << ','
            << csv_value(r.metrics.specificity) << ',' << csv_value(r.metrics.f1) << ','
            << csv_value(r.auc) << ',';
        if (r.param_count) out << *r.param_count;
        out << ',' << (r.reference ? 1 : 0) << '\n';
    }
}

void write_roc_csv(std::ostream& out, const RocCurve& curve) {
    out << "threshold,tpr,fpr\n";
    char buf[96];
    for (const auto& p : curve.points) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n", p.threshold, p.tpr, p.fpr);
        out << buf;
    }
}

void write_report_md(std::ostream& out, const std::vector<ReportRow>& rows,
                     const std::vector<std::string>& notes) {
    out << "# Model performance comparison\n\n";
    out << "| model | threshold | accuracy | sensitivity | specificity | F1 | AUC | params |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        std::string thr = r.threshold_label.empty() ? "--" : r.threshold_label;
        std::string auc = r.auc ? csv_value(r.auc) : "--";
        out << "| " << r.name << " | " << thr << " | " << format_metric(r.metrics.accuracy)
            << " | " << format_metric(r.metrics.sensitivity) << " | "
            << format_metric(r.metrics.specificity) << " | " << format_metric(r.metrics.f1)
            << " | " << auc << " | ";
        if (r.param_count) out << *r.param_count;
        else out << "--";
        out << " |\n";
    }
    out << "\nRows marked \"reported\" quote published numbers for context; they were not "
           "reproduced by this run.\n";
    if (!notes.empty()) {
        out << "\n## Notes\n\n";
        for (const auto& n : notes) out << "- " << n << '\n';
    }
}

}  // namespace fogmesh::eval
