#include <doctest.h>

#include <random>
#include <set>

#include "histosub/error.hpp"
#include "histosub/evaluation.hpp"
#include "oracles.hpp"

using namespace histosub;

namespace {

std::vector<PredictionRecord> records(const std::vector<double>& probs, const std::vector<int>& truth) {
    std::vector<PredictionRecord> out;
    for (std::size_t i = 0; i < probs.size(); ++i) out.push_back({"r" + std::to_string(i), truth[i], probs[i]});
    return out;
}

void check_folds(const FoldSpec& f, const std::vector<int>& labels, int k) {
    REQUIRE(f.folds.size() == static_cast<std::size_t>(k));
    std::set<std::size_t> seen;
    std::size_t total = 0;
    for (const auto& fold : f.folds) {
        for (auto i : fold) seen.insert(i);
        total += fold.size();
    }
    CHECK(total == labels.size());
    CHECK(seen.size() == labels.size());
    for (int cls : {0, 1}) {
        const double n_cls = static_cast<double>(std::count(labels.begin(), labels.end(), cls));
        for (const auto& fold : f.folds) {
            const double c = static_cast<double>(std::count_if(fold.begin(), fold.end(), [&](std::size_t i) { return labels[i] == cls; }));
            CHECK(std::abs(c - n_cls / k) <= 1.0);
        }
    }
}

}  // namespace

TEST_CASE("stratified k-fold") {
    SUBCASE("exact divisibility") {
        std::vector<int> labels{1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
        const auto f = stratified_kfold(labels, 5, 1);
        for (const auto& fold : f.folds) {
            REQUIRE(fold.size() == 2);
            CHECK(labels[fold[0]] + labels[fold[1]] == 1);
        }
    }
    SUBCASE("99 basal + 77 classical") {
        std::vector<int> labels(99, 1);
        labels.resize(176, 0);
        const auto f = stratified_kfold(labels, 5, 2);
        for (const auto& fold : f.folds) CHECK((fold.size() == 35 || fold.size() == 36));
        check_folds(f, labels, 5);
        CHECK(stratified_kfold(labels, 5, 2).folds == f.folds);
        CHECK(stratified_kfold(labels, 5, 3).folds != f.folds);
    }
    SUBCASE("invariants over seeds") {
        std::mt19937_64 rng(3);
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            const int n = 20 + static_cast<int>(rng() % 60);
            std::vector<int> labels;
            for (int i = 0; i < n; ++i) labels.push_back(i % 3 == 0 ? 1 : 0);
            const int k = 2 + static_cast<int>(seed % 4);
            check_folds(stratified_kfold(labels, k, seed), labels, k);
        }
    }
    SUBCASE("class smaller than k") {
        CHECK_THROWS_AS(stratified_kfold(std::vector<int>{1, 0, 0, 0, 0, 0}, 5, 1), DegenerateError);
        CHECK_THROWS_AS(stratified_kfold(std::vector<int>{1, 0}, 1, 1), InputError);
    }
}

TEST_CASE("roc_auc") {
    CHECK(roc_auc(records({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0})) == 1.0);
    CHECK(roc_auc(records({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0})) == 0.5);
    CHECK_THROWS_AS(roc_auc(records({0.1, 0.2}, {1, 1})), DegenerateError);

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> p;
        std::vector<int> t;
        for (int i = 0; i < 50; ++i) {
            p.push_back(trial % 2 ? std::round(u(rng) * 5) / 5 : u(rng));
            t.push_back(i % 3 == 0 ? 1 : 0);
        }
        const auto recs = records(p, t);
        const double auc = roc_auc(recs);
        CHECK(std::abs(auc - oracle::pair_auc(p, t)) <= 1e-12);

        std::vector<int> flipped;
        std::vector<double> inverted;
        for (std::size_t i = 0; i < p.size(); ++i) {
            flipped.push_back(1 - t[i]);
            inverted.push_back(1.0 - p[i]);
        }
        CHECK(std::abs(roc_auc(records(p, flipped)) - (1.0 - auc)) <= 1e-12);
        CHECK(std::abs(roc_auc(records(inverted, flipped)) - auc) <= 1e-12);
    }
}

TEST_CASE("confusion metrics") {
    SUBCASE("all correct") {
        const auto m = confusion_metrics(records({0.9, 0.7, 0.2, 0.4}, {1, 1, 0, 0}));
        CHECK(m.accuracy == 1.0);
        CHECK(m.sensitivity == 1.0);
        CHECK(m.specificity == 1.0);
        CHECK(m.balanced_accuracy == 1.0);
        CHECK(m.auc == 1.0);
        CHECK(m.n == 4);
    }
    SUBCASE("everything predicted basal") {
        const auto m = confusion_metrics(records({0.9, 0.7, 0.6, 0.5}, {1, 1, 0, 0}));
        CHECK(m.sensitivity == 1.0);
        CHECK(m.specificity == 0.0);
        CHECK(m.balanced_accuracy == 0.5);
    }
    SUBCASE("threshold ties predict basal") {
        const auto m = confusion_metrics(records({0.5, 0.1}, {1, 0}));
        CHECK(m.accuracy == 1.0);
    }
    SUBCASE("189 records with 14/99 and 15/90 errors") {
        std::vector<double> p;
        std::vector<int> t;
        for (int i = 0; i < 99; ++i) {
            t.push_back(1);
            p.push_back(i < 14 ? 0.2 : 0.8);
        }
        for (int i = 0; i < 90; ++i) {
            t.push_back(0);
            p.push_back(i < 15 ? 0.8 : 0.2);
        }
        const auto m = confusion_metrics(records(p, t));
        CHECK(std::abs(m.accuracy - 0.847) <= 5e-4);
        CHECK(std::abs((1.0 - m.sensitivity) - 0.141) <= 5e-4);
        CHECK(std::abs((1.0 - m.specificity) - 0.167) <= 5e-4);
    }
    SUBCASE("balanced accuracy identity on random reports") {
        std::mt19937_64 rng(7);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> p;
            std::vector<int> t;
            for (int i = 0; i < 30; ++i) {
                p.push_back(u(rng));
                t.push_back(i < 10 ? 1 : 0);
            }
            const auto m = confusion_metrics(records(p, t), u(rng));
            CHECK(std::abs(m.balanced_accuracy - (m.sensitivity + m.specificity) / 2.0) <= 1e-12);
        }
    }
}

TEST_CASE("high-confidence filter") {
    const auto recs = records({0.05, 0.5, 0.95, 0.10, 0.90, 0.11}, {1, 0, 1, 0, 0, 1});
    const auto before = recs;
    const auto f = filter_high_confidence(recs);
    CHECK(f.subset.size() == 4);
    CHECK(f.fraction_retained == doctest::Approx(4.0 / 6.0));
    CHECK(recs.size() == before.size());
    for (std::size_t i = 0; i < recs.size(); ++i) CHECK(recs[i].prob == before[i].prob);
    CHECK_THROWS_AS(filter_high_confidence(recs, 0.9, 0.1), InputError);

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p;
    std::vector<int> t;
    for (int i = 0; i < 1000; ++i) {
        p.push_back(u(rng));
        t.push_back(i % 2);
    }
    const auto big = filter_high_confidence(records(p, t));
    const auto kept = std::count_if(p.begin(), p.end(), [](double x) { return x <= 0.1 || x >= 0.9; });
    CHECK(big.subset.size() == static_cast<std::size_t>(kept));
    CHECK(std::abs(big.fraction_retained - 0.2) <= 4 * std::sqrt(0.2 * 0.8 / 1000));
}

TEST_CASE("decision margins") {
    CHECK(decision_margin(0.962) == doctest::Approx(0.462).epsilon(1e-12));
    CHECK(decision_margin(0.5) == 0.0);
    CHECK(decision_margin(0.0) == 0.5);

    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> p;
    std::vector<int> t;
    for (int i = 0; i < 41; ++i) {
        p.push_back(u(rng));
        t.push_back(i % 2);
    }
    const auto s = decision_margins(records(p, t));
    std::vector<double> correct;
    std::vector<double> wrong;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = std::abs(p[i] - 0.5);
        CHECK(s.margins[i] == m);
        ((p[i] >= 0.5 ? 1 : 0) == t[i] ? correct : wrong).push_back(m);
    }
    auto sort_median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const auto n = v.size();
        return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
    };
    REQUIRE(s.median_correct);
    REQUIRE(s.median_incorrect);
    CHECK(*s.median_correct == sort_median(correct));
    CHECK(*s.median_incorrect == sort_median(wrong));
    CHECK(!decision_margins(records({0.9}, {1})).median_incorrect);
}

TEST_CASE("Mann-Whitney U") {
    SUBCASE("complete tie") {
        const auto r = mann_whitney_u(std::vector<double>{1}, std::vector<double>{1});
        CHECK(r.u == 0.5);
        CHECK(r.p == 1.0);
        CHECK(r.small_sample);
    }
    SUBCASE("complete separation") {
        const auto r = mann_whitney_u(std::vector<double>{1, 2, 3}, std::vector<double>{4, 5, 6});
        CHECK(r.u == 0.0);
        CHECK(r.u_b == 9.0);
    }
    SUBCASE("pair-count oracle and symmetry") {
        std::mt19937_64 rng(13);
        std::normal_distribution<double> n(0.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            std::vector<double> a;
            std::vector<double> b;
            for (int i = 0; i < 20; ++i) {
                a.push_back(std::round(n(rng) * 3) / 3);
                b.push_back(std::round((n(rng) + 0.5) * 3) / 3);
            }
            const auto r = mann_whitney_u(a, b);
            CHECK(r.u_a == oracle::pair_u(a, b));
            CHECK(r.u_b == oracle::pair_u(b, a));
            CHECK(r.u == std::min(r.u_a, r.u_b));
            CHECK(!r.small_sample);
            CHECK(r.p > 0.0);
            CHECK(r.p <= 1.0);
            const auto s = mann_whitney_u(b, a);
            CHECK(s.p == r.p);
        }
    }
    SUBCASE("known normal approximation") {
        // n = 10 + 10, no ties, U = 20: z = (|20 - 50| - 0.5) / sqrt(10*10*21/12).
        std::vector<double> a{1, 2, 3, 4, 5, 6, 7, 8, 13, 14};
        std::vector<double> b{9, 10, 11, 12, 15, 16, 17, 18, 19, 20};
        const auto r = mann_whitney_u(a, b);
        CHECK(r.u == oracle::pair_u(a, b));
        const double z = (std::abs(r.u - 50.0) - 0.5) / std::sqrt(100.0 * 21.0 / 12.0);
        CHECK(std::abs(std::abs(r.z) - z) <= 1e-12);
        CHECK(r.p == doctest::Approx(std::erfc(z / std::sqrt(2.0))).epsilon(1e-6));
    }
    SUBCASE("empty group") {
        CHECK_THROWS_AS(mann_whitney_u(std::vector<double>{}, std::vector<double>{1}), InputError);
    }
}

TEST_CASE("fold aggregation") {
    MetricsReport a;
    a.auc = 0.8;
    MetricsReport b;
    b.auc = 0.9;
    const auto agg = aggregate_folds(std::vector<MetricsReport>{a, b});
    CHECK(agg.auc.mean == doctest::Approx(0.85));
    CHECK(agg.auc.sd == doctest::Approx(0.0707106781).epsilon(1e-9));
    const auto same = aggregate_folds(std::vector<MetricsReport>{a, a, a});
    CHECK(same.auc.sd <= 1e-15);
    CHECK_THROWS_AS(aggregate_folds(std::vector<MetricsReport>{a}), DegenerateError);

    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<MetricsReport> reports(5);
    std::vector<double> spec;
    for (auto& r : reports) {
        r.specificity = u(rng);
        spec.push_back(r.specificity);
    }
    const auto g = aggregate_folds(reports);
    CHECK(std::abs(g.specificity.mean - std::accumulate(spec.begin(), spec.end(), 0.0) / 5.0) <= 1e-12);
    CHECK(std::abs(g.specificity.sd - oracle::sample_sd(spec)) <= 1e-12);
}
