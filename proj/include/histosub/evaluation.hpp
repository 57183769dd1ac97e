#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace histosub {

/// truth: BASAL = 1 (positive class), CLASSICAL = 0.
struct PredictionRecord {
    std::string sample_id;
    int truth = 0;
    double prob = 0.5;
};

struct MetricsReport {
    double auc = 0.0;
    double accuracy = 0.0;
    double balanced_accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    std::size_t n = 0;
};

/// folds[i] holds indices into the label vector.
struct FoldSpec {
    std::vector<std::vector<std::size_t>> folds;
};

FoldSpec stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed);

/// Pairwise AUC with ties counted as 1/2, computed in O(n log n).
double roc_auc(std::span<const PredictionRecord> records);

/// Predicted BASAL iff prob >= threshold. AUC is NaN when only one class is present.
MetricsReport confusion_metrics(std::span<const PredictionRecord> records, double threshold = 0.5);

struct ConfidenceFilter {
    std::vector<PredictionRecord> subset;
    double fraction_retained;
};

/// Keeps records with prob <= lo or prob >= hi.
ConfidenceFilter filter_high_confidence(std::span<const PredictionRecord> records, double lo = 0.10, double hi = 0.90);

inline double decision_margin(double prob) { return prob > 0.5 ? prob - 0.5 : 0.5 - prob; }

struct MarginSummary {
    std::vector<double> margins;
    std::optional<double> median_correct;
    std::optional<double> median_incorrect;
};

MarginSummary decision_margins(std::span<const PredictionRecord> records, double threshold = 0.5);

double median(std::vector<double> values);

struct MannWhitneyResult {
    double u_a;  // pairs (a, b) with a > b, ties counted 1/2
    double u_b;
    double u;    // min(u_a, u_b)
    double z;
    double p;
    bool small_sample;  // min(n) < 8: the normal approximation is rough
};

/// Two-sided Mann-Whitney U with average ranks, tie-corrected variance and continuity correction.
MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b);

struct MeanSd {
    double mean;
    double sd;
};

struct AggregateReport {
    MeanSd auc, accuracy, balanced_accuracy, sensitivity, specificity;
};

AggregateReport aggregate_folds(std::span<const MetricsReport> reports);

}  // namespace histosub
