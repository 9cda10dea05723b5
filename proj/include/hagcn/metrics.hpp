#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <string>
#include <vector>

#include "errors.hpp"

namespace hagcn {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct ClassificationReport {
    std::vector<std::string> classes;
    std::vector<ClassMetrics> per_class;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::size_t total = 0;
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
};

inline double f1_score(double precision, double recall) {
    return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

inline ClassificationReport compute_metrics(const std::vector<std::vector<std::size_t>>& confusion,
                                            std::vector<std::string> classes = {}) {
    const std::size_t k = confusion.size();
    for (const auto& row : confusion)
        if (row.size() != k) throw ValidationError("confusion matrix must be square");
    if (classes.empty())
        for (std::size_t i = 0; i < k; ++i) classes.push_back(std::to_string(i));
    if (classes.size() != k) throw ValidationError("class names do not match confusion matrix size");

    ClassificationReport r;
    r.classes = std::move(classes);
    r.confusion = confusion;
    std::vector<std::size_t> col(k, 0);
    std::size_t diag = 0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            r.total += confusion[i][j];
            col[j] += confusion[i][j];
        }
        diag += confusion[i][i];
    }
    if (r.total == 0) throw ValidationError("confusion matrix is all zero");

    r.per_class.resize(k);
    for (std::size_t c = 0; c < k; ++c) {
        auto& m = r.per_class[c];
        const std::size_t tp = confusion[c][c];
        for (std::size_t j = 0; j < k; ++j) m.support += confusion[c][j];
        m.precision = col[c] == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(col[c]);
        m.recall = m.support == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(m.support);
        m.f1 = f1_score(m.precision, m.recall);
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
    }
    r.macro_precision /= static_cast<double>(k);
    r.macro_recall /= static_cast<double>(k);
    r.macro_f1 /= static_cast<double>(k);
    r.accuracy = static_cast<double>(diag) / static_cast<double>(r.total);
    return r;
}

namespace detail {
inline std::string fixed6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}
}  // namespace detail

// class,precision,recall,f1,support then macro_avg and accuracy rows.
inline std::string report_to_csv(const ClassificationReport& r) {
    using detail::fixed6;
    std::string out = "class,precision,recall,f1,support\n";
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
        const auto& m = r.per_class[c];
        out += r.classes[c] + ',' + fixed6(m.precision) + ',' + fixed6(m.recall) + ',' + fixed6(m.f1) + ',' +
               std::to_string(m.support) + '\n';
    }
    out += "macro_avg," + fixed6(r.macro_precision) + ',' + fixed6(r.macro_recall) + ',' + fixed6(r.macro_f1) + ',' +
           std::to_string(r.total) + '\n';
    out += "accuracy,,," + fixed6(r.accuracy) + ',' + std::to_string(r.total) + '\n';
    return out;
}

inline std::string report_table(const ClassificationReport& r) {
    std::size_t width = 9;
    for (const auto& c : r.classes) width = std::max(width, c.size());
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-*s %9s %9s %9s %8s\n", static_cast<int>(width), "class", "precision", "recall",
                  "f1", "support");
    out += line;
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
        const auto& m = r.per_class[c];
        std::snprintf(line, sizeof line, "%-*s %9.3f %9.3f %9.3f %8zu\n", static_cast<int>(width), r.classes[c].c_str(),
                      m.precision, m.recall, m.f1, m.support);
        out += line;
    }
    std::snprintf(line, sizeof line, "%-*s %9.3f %9.3f %9.3f %8zu\n", static_cast<int>(width), "macro avg",
                  r.macro_precision, r.macro_recall, r.macro_f1, r.total);
    out += line;
    std::snprintf(line, sizeof line, "%-*s %29.3f %8zu\n", static_cast<int>(width), "accuracy", r.accuracy, r.total);
    out += line;
    return out;
}

}  // namespace hagcn
