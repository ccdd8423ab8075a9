#include "pedcross/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pedcross/data.hpp"  // fmt6

namespace pedcross {

namespace {

void validate_inputs(std::span<const double> probs, std::span<const int> labels) {
    if (probs.size() != labels.size()) {
        throw DataError("probability/label count mismatch: " + std::to_string(probs.size()) +
                        " vs " + std::to_string(labels.size()));
    }
    if (probs.empty()) throw DataError("no samples to score");
    for (double p : probs) {
        if (!(p >= 0.0 && p <= 1.0)) throw DataError("probability outside [0, 1]");
    }
    for (int y : labels) {
        if (y != 0 && y != 1) throw DataError("labels must be 0 or 1");
    }
}

}  // namespace

double auc_roc(std::span<const double> probs, std::span<const int> labels) {
    validate_inputs(probs, labels);
    const long n = static_cast<long>(probs.size());
    long n_pos = 0;
    for (int y : labels) n_pos += y;
    const long n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw DataError("auc_roc is undefined for a single-class label set");
    }

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return probs[static_cast<std::size_t>(a)] < probs[static_cast<std::size_t>(b)];
    });

    // Average ranks over ties, then the Mann-Whitney statistic.
    double rank_sum_pos = 0.0;
    long i = 0;
    while (i < n) {
        long j = i;
        while (j + 1 < n && probs[static_cast<std::size_t>(order[j + 1])] ==
                                probs[static_cast<std::size_t>(order[i])]) {
            ++j;
        }
        const double avg_rank = 0.5 * (i + j) + 1.0;  // 1-based
        for (long k = i; k <= j; ++k) {
            if (labels[static_cast<std::size_t>(order[k])] == 1) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    return (rank_sum_pos - 0.5 * n_pos * (n_pos + 1)) / (static_cast<double>(n_pos) * n_neg);
}

MetricsReport classification_metrics(std::span<const double> probs, std::span<const int> labels,
                                     double threshold) {
    validate_inputs(probs, labels);
    MetricsReport r;
    r.threshold = threshold;
    r.n = static_cast<long>(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const bool pred = probs[k] >= threshold;
        const bool truth = labels[k] == 1;
        if (pred && truth) ++r.tp;
        else if (pred && !truth) ++r.fp;
        else if (!pred && truth) ++r.fn;
        else ++r.tn;
    }
    r.accuracy = static_cast<double>(r.tp + r.tn) / r.n;
    r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / (r.tp + r.fp) : 0.0;
    r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / (r.tp + r.fn) : 0.0;
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                        : 0.0;
    const bool single_class = (r.tp + r.fn == 0) || (r.tn + r.fp == 0);
    if (!single_class) r.auc = auc_roc(probs, labels);
    return r;
}

std::string metrics_table(const MetricsReport& r) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "  samples %ld  (tp %ld  fp %ld  tn %ld  fn %ld)\n", r.n, r.tp,
                  r.fp, r.tn, r.fn);
    os << buf;
    std::snprintf(buf, sizeof(buf),
                  "  accuracy %.4f  precision %.4f  recall %.4f  f1 %.4f  auc %s  @%.2f\n",
                  r.accuracy, r.precision, r.recall, r.f1,
                  r.auc ? fmt6(*r.auc).c_str() : "n/a", r.threshold);
    os << buf;
    return os.str();
}

std::string metrics_record(const MetricsReport& r) {
    std::string line = "{\"n\":" + std::to_string(r.n) + ",\"tp\":" + std::to_string(r.tp) +
                       ",\"fp\":" + std::to_string(r.fp) + ",\"tn\":" + std::to_string(r.tn) +
                       ",\"fn\":" + std::to_string(r.fn) + ",\"accuracy\":" + fmt6(r.accuracy) +
                       ",\"precision\":" + fmt6(r.precision) + ",\"recall\":" + fmt6(r.recall) +
                       ",\"f1\":" + fmt6(r.f1) + ",\"auc\":" + (r.auc ? fmt6(*r.auc) : "null") +
                       ",\"threshold\":" + fmt6(r.threshold) + "}";
    return line;
}

void write_metrics_report(const std::string& path, const MetricsReport& r) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << metrics_record(r) << "\n";
}

std::string horizon_table(std::vector<HorizonRow> rows) {
    std::sort(rows.begin(), rows.end(),
              [](const HorizonRow& a, const HorizonRow& b) { return a.tte_lo < b.tte_lo; });
    std::ostringstream os;
    os << "  band        n    accuracy   f1       auc\n";
    for (const HorizonRow& row : rows) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "  [%2d,%2d]  %6ld    %.4f     %.4f   %s\n", row.tte_lo,
                      row.tte_hi, row.report.n, row.report.accuracy, row.report.f1,
                      row.report.auc ? fmt6(*row.report.auc).c_str() : "n/a");
        os << buf;
    }
    return os.str();
}

void write_horizon_report(const std::string& path, std::vector<HorizonRow> rows) {
    std::sort(rows.begin(), rows.end(),
              [](const HorizonRow& a, const HorizonRow& b) { return a.tte_lo < b.tte_lo; });
    std::ofstream out(path);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (const HorizonRow& row : rows) {
        out << "{\"tte_lo\":" << row.tte_lo << ",\"tte_hi\":" << row.tte_hi
            << ",\"report\":" << metrics_record(row.report) << "}\n";
    }
}

}  // namespace pedcross
