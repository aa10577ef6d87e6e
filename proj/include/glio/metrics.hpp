#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glio/error.hpp"
#include "glio/volume.hpp"

namespace glio {

// ---------------------------------------------------------------------------
// AUC (Mann-Whitney). Exact pair counting up to n = 1e4, rank formula above;
// the two agree exactly (ties counted 0.5 in both).
// ---------------------------------------------------------------------------

namespace detail {

inline void check_scores_labels(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw data_error("auc: scores and labels differ in length");
    if (scores.empty()) throw data_error("auc: empty input");
    for (int l : labels)
        if (l != 0 && l != 1) throw data_error("auc: labels must be binary");
}

} // namespace detail

inline double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
    detail::check_scores_labels(scores, labels);
    std::size_t pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) throw data_error("undefined AUC: labels contain a single class");
    double wins = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline double auc_ranked(const std::vector<double>& scores, const std::vector<int>& labels) {
    detail::check_scores_labels(scores, labels);
    std::size_t pos = 0, neg = 0;
    for (int l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) throw data_error("undefined AUC: labels contain a single class");

    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Average ranks over tie groups (1-based ranks).
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - 0.5 * static_cast<double>(pos) * (static_cast<double>(pos) + 1.0);
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    return scores.size() <= 10000 ? auc_pairwise(scores, labels) : auc_ranked(scores, labels);
}

// ---------------------------------------------------------------------------
// Threshold metrics
// ---------------------------------------------------------------------------

struct Confusion {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    long n() const { return tp + fp + tn + fn; }
};

// Prediction is positive iff score >= threshold (boundary inclusive).
inline Confusion confusion_at(const std::vector<double>& scores, const std::vector<int>& labels,
                              double threshold) {
    if (scores.size() != labels.size())
        throw data_error("confusion_at: scores and labels differ in length");
    Confusion c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw data_error("confusion_at: labels must be binary");
        const bool pred = scores[i] >= threshold;
        if (pred && labels[i]) c.tp++;
        else if (pred && !labels[i]) c.fp++;
        else if (!pred && !labels[i]) c.tn++;
        else c.fn++;
    }
    return c;
}

struct TaskMetrics {
    std::string task;
    std::optional<double> auc;   // absent when labels are single-class
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    double sensitivity = std::numeric_limits<double>::quiet_NaN();
    double specificity = std::numeric_limits<double>::quiet_NaN();
    double threshold = 0.5;
    Confusion confusion;
    long n = 0;
    std::vector<std::string> warnings;
};

struct MetricsReport {
    std::array<TaskMetrics, kNumTasks> tasks;

    const TaskMetrics& task(int t) const { return tasks[t]; }
};

struct TaskSamples {
    std::vector<double> scores;
    std::vector<int> labels;
};

namespace detail {

inline void verify_confusion_identities(const TaskMetrics& m) {
    const auto& c = m.confusion;
    if (c.n() != m.n) throw runtime_error("metrics invariant broken: confusion total != n");
    const long positives = c.tp + c.fn;
    const long negatives = c.tn + c.fp;
    auto close = [](double a, double b) {
        return (std::isnan(a) && std::isnan(b)) || std::fabs(a - b) <= 1e-12;
    };
    const double acc = m.n ? static_cast<double>(c.tp + c.tn) / m.n
                           : std::numeric_limits<double>::quiet_NaN();
    const double sens = positives ? static_cast<double>(c.tp) / positives
                                  : std::numeric_limits<double>::quiet_NaN();
    const double spec = negatives ? static_cast<double>(c.tn) / negatives
                                  : std::numeric_limits<double>::quiet_NaN();
    if (!close(acc, m.accuracy) || !close(sens, m.sensitivity) || !close(spec, m.specificity))
        throw runtime_error("metrics invariant broken: derived rates inconsistent");
}

} // namespace detail

inline TaskMetrics task_metrics(const std::string& task, const TaskSamples& samples,
                                double threshold) {
    TaskMetrics m;
    m.task = task;
    m.threshold = threshold;
    m.n = static_cast<long>(samples.scores.size());
    if (m.n == 0) {
        m.warnings.push_back(task + ": no labeled samples");
        return m;
    }
    m.confusion = confusion_at(samples.scores, samples.labels, threshold);
    const long positives = m.confusion.tp + m.confusion.fn;
    const long negatives = m.confusion.tn + m.confusion.fp;
    m.accuracy = static_cast<double>(m.confusion.tp + m.confusion.tn) / m.n;
    m.sensitivity = positives ? static_cast<double>(m.confusion.tp) / positives
                              : std::numeric_limits<double>::quiet_NaN();
    m.specificity = negatives ? static_cast<double>(m.confusion.tn) / negatives
                              : std::numeric_limits<double>::quiet_NaN();
    if (positives > 0 && negatives > 0) {
        m.auc = auc(samples.scores, samples.labels);
    } else {
        m.warnings.push_back(task + ": single-class labels, AUC omitted");
    }
    detail::verify_confusion_identities(m);
    return m;
}

// Per-task report; samples with missing labels must already be excluded
// (TaskSamples holds only the labeled ones).
inline MetricsReport compute_report(const std::array<TaskSamples, kNumTasks>& per_task,
                                    const std::array<double, kNumTasks>& thresholds = {0.5, 0.5,
                                                                                       0.5}) {
    MetricsReport r;
    for (int t = 0; t < kNumTasks; ++t)
        r.tasks[t] = task_metrics(task_name(t), per_task[t], thresholds[t]);
    return r;
}

struct SweepRow {
    double threshold;
    double sensitivity;
    double specificity;
    double accuracy;
};

inline std::vector<SweepRow> threshold_sweep(const std::vector<double>& scores,
                                             const std::vector<int>& labels,
                                             const std::vector<double>& grid) {
    if (grid.empty()) throw data_error("threshold_sweep: empty grid");
    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (double thr : grid) {
        const Confusion c = confusion_at(scores, labels, thr);
        const long positives = c.tp + c.fn;
        const long negatives = c.tn + c.fp;
        SweepRow row{};
        row.threshold = thr;
        row.sensitivity = positives ? static_cast<double>(c.tp) / positives
                                    : std::numeric_limits<double>::quiet_NaN();
        row.specificity = negatives ? static_cast<double>(c.tn) / negatives
                                    : std::numeric_limits<double>::quiet_NaN();
        row.accuracy = c.n() ? static_cast<double>(c.tp + c.tn) / c.n()
                             : std::numeric_limits<double>::quiet_NaN();
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["format_version"] = 1;
    auto num_or_null = [](double v) {
        return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v);
    };
    for (const auto& m : r.tasks) {
        nlohmann::json t;
        t["auc"] = m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr);
        t["accuracy"] = num_or_null(m.accuracy);
        t["sensitivity"] = num_or_null(m.sensitivity);
        t["specificity"] = num_or_null(m.specificity);
        t["threshold"] = m.threshold;
        t["tp"] = m.confusion.tp;
        t["fp"] = m.confusion.fp;
        t["tn"] = m.confusion.tn;
        t["fn"] = m.confusion.fn;
        t["n"] = m.n;
        if (!m.warnings.empty()) t["warnings"] = m.warnings;
        j["tasks"][m.task] = std::move(t);
    }
    return j;
}

// Text table with one-decimal percentages.
inline std::string report_to_table(const MetricsReport& r) {
    auto pct = [](double v) {
        if (std::isnan(v)) return std::string("   - ");
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%5.1f", 100.0 * v);
        return std::string(buf);
    };
    auto auc_cell = [&](const std::optional<double>& v) {
        return v ? pct(*v) : std::string("   - ");
    };
    static const std::array<std::string, kNumTasks> row_names = {"GBM vs. LGG", "IDH status",
                                                                 "1p19q co-deletion"};
    std::ostringstream os;
    os << "Task               AUC    Acc.   Sens.  Spec.  n\n";
    for (int t = 0; t < kNumTasks; ++t) {
        const auto& m = r.tasks[t];
        os << row_names[t];
        for (std::size_t pad = row_names[t].size(); pad < 19; ++pad) os << ' ';
        os << auc_cell(m.auc) << "  " << pct(m.accuracy) << "  " << pct(m.sensitivity) << "  "
           << pct(m.specificity) << "  " << m.n << "\n";
    }
    return os.str();
}

} // namespace glio
