#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pedcross/error.hpp"

namespace pedcross {

struct MetricsReport {
    long n = 0, tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy = 0, precision = 0, recall = 0, f1 = 0;
    std::optional<double> auc;  // absent for single-class label sets
    double threshold = 0.5;
};

// Thresholded confusion counts plus accuracy/precision/recall/F1 for the
// crossing (positive) class. AUC is filled in when both classes occur.
MetricsReport classification_metrics(std::span<const double> probs, std::span<const int> labels,
                                     double threshold = 0.5);

// Rank-based (Mann-Whitney) ROC area with ties counted 1/2. A
// single-class label set is an error, never a silent NaN.
double auc_roc(std::span<const double> probs, std::span<const int> labels);

std::string metrics_table(const MetricsReport& r);
std::string metrics_record(const MetricsReport& r);  // one JSON line
void write_metrics_report(const std::string& path, const MetricsReport& r);

struct HorizonRow {
    int tte_lo = 0, tte_hi = 0;
    MetricsReport report;
};

// Rows ordered by band start.
std::string horizon_table(std::vector<HorizonRow> rows);
void write_horizon_report(const std::string& path, std::vector<HorizonRow> rows);

}  // namespace pedcross
