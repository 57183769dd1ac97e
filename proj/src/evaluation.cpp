#include "histosub/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "histosub/error.hpp"

namespace histosub {

FoldSpec stratified_kfold(std::span<const int> labels, int k, std::uint64_t seed) {
    if (k < 2) throw InputError("k-fold needs k >= 2");
    std::vector<int> classes(labels.begin(), labels.end());
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    std::mt19937_64 rng(seed);
    FoldSpec spec;
    spec.folds.resize(static_cast<std::size_t>(k));
    std::size_t next = 0;
    for (int cls : classes) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == cls) members.push_back(i);
        }
        if (members.size() < static_cast<std::size_t>(k)) {
            throw DegenerateError("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                                  " members, fewer than k = " + std::to_string(k));
        }
        // Fisher-Yates on raw engine output.
        for (std::size_t i = members.size() - 1; i > 0; --i) {
            const std::size_t j = static_cast<std::size_t>(rng() % (i + 1));
            std::swap(members[i], members[j]);
        }
        // Dealing continues where the previous class stopped.
        for (auto idx : members) {
            spec.folds[next].push_back(idx);
            next = (next + 1) % static_cast<std::size_t>(k);
        }
    }
    for (auto& f : spec.folds) std::sort(f.begin(), f.end());
    return spec;
}

double roc_auc(std::span<const PredictionRecord> records) {
    std::vector<std::pair<double, int>> sorted;
    sorted.reserve(records.size());
    std::size_t n_pos = 0;
    for (const auto& r : records) {
        sorted.emplace_back(r.prob, r.truth);
        n_pos += r.truth == 1;
    }
    const std::size_t n_neg = records.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DegenerateError("AUC undefined: only one class present");
    std::sort(sorted.begin(), sorted.end(), [](auto& a, auto& b) { return a.first < b.first; });

    // Twice the pair count, an exact integer.
    double twice_pairs = 0.0;
    double neg_below = 0.0;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        double pos = 0.0;
        double neg = 0.0;
        while (j < sorted.size() && sorted[j].first == sorted[i].first) {
            (sorted[j].second == 1 ? pos : neg) += 1.0;
            ++j;
        }
        twice_pairs += pos * (2.0 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    return (twice_pairs / 2.0) / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport confusion_metrics(std::span<const PredictionRecord> records, double threshold) {
    if (records.empty()) throw InputError("confusion metrics need at least one record");
    double tp = 0, tn = 0, fp = 0, fn = 0;
    for (const auto& r : records) {
        const bool pred_pos = r.prob >= threshold;
        if (r.truth == 1) {
            (pred_pos ? tp : fn) += 1;
        } else {
            (pred_pos ? fp : tn) += 1;
        }
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    MetricsReport m;
    m.n = records.size();
    m.accuracy = (tp + tn) / static_cast<double>(records.size());
    m.sensitivity = tp + fn > 0 ? tp / (tp + fn) : nan;
    m.specificity = tn + fp > 0 ? tn / (tn + fp) : nan;
    m.balanced_accuracy = (m.sensitivity + m.specificity) / 2.0;
    m.auc = (tp + fn > 0 && tn + fp > 0) ? roc_auc(records) : nan;
    return m;
}

ConfidenceFilter filter_high_confidence(std::span<const PredictionRecord> records, double lo, double hi) {
    if (lo > hi) throw InputError("confidence band: lo exceeds hi");
    ConfidenceFilter out;
    for (const auto& r : records) {
        if (r.prob <= lo || r.prob >= hi) out.subset.push_back(r);
    }
    out.fraction_retained =
        records.empty() ? 0.0 : static_cast<double>(out.subset.size()) / static_cast<double>(records.size());
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) throw DegenerateError("median of an empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

MarginSummary decision_margins(std::span<const PredictionRecord> records, double threshold) {
    MarginSummary out;
    std::vector<double> correct;
    std::vector<double> incorrect;
    for (const auto& r : records) {
        const double m = decision_margin(r.prob);
        out.margins.push_back(m);
        const int pred = r.prob >= threshold ? 1 : 0;
        (pred == r.truth ? correct : incorrect).push_back(m);
    }
    if (!correct.empty()) out.median_correct = median(correct);
    if (!incorrect.empty()) out.median_incorrect = median(incorrect);
    return out;
}

MannWhitneyResult mann_whitney_u(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InputError("Mann-Whitney U needs two non-empty groups");
    std::vector<std::pair<double, int>> pooled;
    for (double v : a) pooled.emplace_back(v, 0);
    for (double v : b) pooled.emplace_back(v, 1);
    std::sort(pooled.begin(), pooled.end(), [](auto& x, auto& y) { return x.first < y.first; });

    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    const double n = na + nb;
    double rank_sum_a = 0.0;
    double tie_term = 0.0;
    for (std::size_t i = 0; i < pooled.size();) {
        std::size_t j = i;
        while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
        const double t = static_cast<double>(j - i);
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (pooled[k].second == 0) rank_sum_a += avg_rank;
        }
        tie_term += t * t * t - t;
        i = j;
    }
    MannWhitneyResult r{};
    r.u_a = rank_sum_a - na * (na + 1.0) / 2.0;
    r.u_b = na * nb - r.u_a;
    r.u = std::min(r.u_a, r.u_b);
    r.small_sample = std::min(a.size(), b.size()) < 8;

    const double mu = na * nb / 2.0;
    const double var = n > 1.0 ? na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0))) : 0.0;
    if (!(var > 0.0)) {
        r.z = 0.0;
        r.p = 1.0;
        return r;
    }
    const double num = std::max(0.0, std::abs(r.u_a - mu) - 0.5);
    r.z = num / std::sqrt(var);
    r.p = std::min(1.0, std::erfc(r.z / std::sqrt(2.0)));
    return r;
}

namespace {

MeanSd mean_sd(const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / (n - 1.0))};
}

}  // namespace

AggregateReport aggregate_folds(std::span<const MetricsReport> reports) {
    if (reports.size() < 2) throw DegenerateError("fold aggregation needs at least 2 reports");
    auto collect = [&](auto field) {
        std::vector<double> v;
        for (const auto& r : reports) v.push_back(r.*field);
        return mean_sd(v);
    };
    return {collect(&MetricsReport::auc), collect(&MetricsReport::accuracy), collect(&MetricsReport::balanced_accuracy),
            collect(&MetricsReport::sensitivity), collect(&MetricsReport::specificity)};
}

}  // namespace histosub
