#include "histosub/survival.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "histosub/error.hpp"
#include "histosub/tsv.hpp"

namespace histosub {

const char* to_string(CensoringMode m) { return m == CensoringMode::Standard ? "standard" : "paper_replica"; }

CensoringMode parse_censoring_mode(std::string_view s) {
    if (s == "standard") return CensoringMode::Standard;
    if (s == "paper_replica") return CensoringMode::PaperReplica;
    throw InputError("unknown censoring mode '" + std::string(s) + "'");
}

namespace {

constexpr double kZ95 = 1.959963984540054;

std::vector<SurvivalRecord> filtered(std::span<const SurvivalRecord> records, CensoringMode mode) {
    std::vector<SurvivalRecord> out;
    for (const auto& r : records) {
        if (!std::isfinite(r.time) || r.time <= 0.0) {
            throw InputError("survival time must be positive for sample '" + r.sample_id + "'");
        }
        if (r.event != 0 && r.event != 1) throw InputError("event flag must be 0/1 for sample '" + r.sample_id + "'");
        if (mode == CensoringMode::PaperReplica && r.event == 0) continue;
        out.push_back(r);
    }
    return out;
}

// time -> (deaths, removals) with deaths processed before censorings at the same time.
std::map<double, std::pair<std::size_t, std::size_t>> tabulate(const std::vector<SurvivalRecord>& records) {
    std::map<double, std::pair<std::size_t, std::size_t>> table;
    for (const auto& r : records) {
        auto& [deaths, removed] = table[r.time];
        deaths += static_cast<std::size_t>(r.event);
        removed += 1;
    }
    return table;
}

}  // namespace

KMCurve km_estimate(std::span<const SurvivalRecord> records, CensoringMode mode, CiMethod ci) {
    const auto kept = filtered(records, mode);
    if (kept.empty()) throw DegenerateError("no records left for Kaplan-Meier estimation");
    const auto table = tabulate(kept);

    KMCurve c;
    std::size_t at_risk = kept.size();
    double s = 1.0;
    double gw_sum = 0.0;
    for (const auto& [time, counts] : table) {
        const auto [deaths, removed] = counts;
        if (deaths > 0) {
            const double n = static_cast<double>(at_risk);
            const double d = static_cast<double>(deaths);
            s *= 1.0 - d / n;
            gw_sum += at_risk > deaths ? d / (n * (n - d)) : 0.0;
            double lo = s;
            double hi = s;
            if (s <= 0.0) {
                lo = hi = 0.0;
            } else if (ci == CiMethod::LogLog) {
                const double log_s = std::log(s);
                if (log_s < 0.0) {
                    const double se = std::sqrt(gw_sum) / std::abs(log_s);
                    lo = std::pow(s, std::exp(kZ95 * se));
                    hi = std::pow(s, std::exp(-kZ95 * se));
                }
            } else {
                const double half = kZ95 * s * std::sqrt(gw_sum);
                lo = std::max(0.0, s - half);
                hi = std::min(1.0, s + half);
            }
            c.time.push_back(time);
            c.n_at_risk.push_back(at_risk);
            c.n_events.push_back(deaths);
            c.survival.push_back(s);
            c.greenwood_var.push_back(s * s * gw_sum);
            c.ci_low.push_back(lo);
            c.ci_high.push_back(hi);
        }
        at_risk -= removed;
    }
    return c;
}

MedianSurvival median_survival(const KMCurve& curve) {
    auto first_below = [&](const std::vector<double>& values) -> std::optional<double> {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (values[i] <= 0.5) return curve.time[i];
        }
        return std::nullopt;
    };
    return {first_below(curve.survival), first_below(curve.ci_low), first_below(curve.ci_high)};
}

LogRankResult logrank_test(std::span<const SurvivalRecord> group_a, std::span<const SurvivalRecord> group_b,
                           CensoringMode mode) {
    const auto a = filtered(group_a, mode);
    const auto b = filtered(group_b, mode);
    if (a.empty() || b.empty()) throw DegenerateError("log-rank test needs two non-empty groups");
    const auto ta = tabulate(a);
    const auto tb = tabulate(b);
    std::map<double, int> times;
    for (const auto& [t, _] : ta) times[t];
    for (const auto& [t, _] : tb) times[t];

    double n_a = static_cast<double>(a.size());
    double n_b = static_cast<double>(b.size());
    double o_minus_e = 0.0;
    double var = 0.0;
    for (const auto& [t, _] : times) {
        const auto ia = ta.find(t);
        const auto ib = tb.find(t);
        const double d_a = ia == ta.end() ? 0.0 : static_cast<double>(ia->second.first);
        const double d_b = ib == tb.end() ? 0.0 : static_cast<double>(ib->second.first);
        const double d = d_a + d_b;
        const double n = n_a + n_b;
        if (d > 0.0) {
            o_minus_e += d_a - d * n_a / n;
            if (n > 1.0) var += d * (n_a / n) * (n_b / n) * (n - d) / (n - 1.0);
        }
        n_a -= ia == ta.end() ? 0.0 : static_cast<double>(ia->second.second);
        n_b -= ib == tb.end() ? 0.0 : static_cast<double>(ib->second.second);
    }
    if (!(var > 0.0)) throw DegenerateError("log-rank variance is zero (no informative events)");
    const double chi2 = o_minus_e * o_minus_e / var;
    return {chi2, chi2_1df_pvalue(chi2), o_minus_e, var};
}

double erfc_approx(double x) {
    const double z = std::abs(x);
    const double t = 1.0 / (1.0 + 0.5 * z);
    const double ans =
        t * std::exp(-z * z - 1.26551223 +
                     t * (1.00002368 +
                          t * (0.37409196 +
                               t * (0.09678418 +
                                    t * (-0.18628806 +
                                         t * (0.27886807 +
                                              t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))));
    return x >= 0.0 ? ans : 2.0 - ans;
}

double chi2_1df_pvalue(double x) {
    if (!std::isfinite(x) || x < 0.0) throw InputError("chi-square statistic must be finite and non-negative");
    return std::min(1.0, erfc_approx(std::sqrt(x / 2.0)));
}

std::vector<ClinicalRow> read_clinical_csv(const std::filesystem::path& path) {
    const auto lines = tsv::read_lines(path);
    if (lines.empty() || lines[0] != "sample_id,os_months,event,cohort,disease_status") {
        throw InputError("unexpected clinical header in " + path.string());
    }
    std::vector<ClinicalRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = tsv::split(lines[i], ',');
        const std::string ctx = path.string() + ":" + std::to_string(i + 1);
        if (f.size() != 5) throw InputError(ctx + ": expected 5 fields");
        ClinicalRow r;
        r.sample_id = std::string(f[0]);
        r.os_months = tsv::parse_double(f[1], ctx);
        r.event = static_cast<int>(tsv::parse_int(f[2], ctx));
        r.cohort = std::string(f[3]);
        r.disease_status = std::string(f[4]);
        if (r.disease_status != "metastatic" && r.disease_status != "resected") {
            throw InputError(ctx + ": disease_status must be metastatic or resected");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

void write_clinical_csv(const std::vector<ClinicalRow>& rows, const std::filesystem::path& path) {
    std::string out = "sample_id,os_months,event,cohort,disease_status\n";
    for (const auto& r : rows) {
        out += r.sample_id + "," + tsv::format_double(r.os_months) + "," + std::to_string(r.event) + "," + r.cohort +
               "," + r.disease_status + "\n";
    }
    tsv::write_file(path, out);
}

void write_km_tsv(const KMCurve& curve, const std::filesystem::path& path) {
    std::string out = "time\tn_at_risk\tS\tci_low\tci_high\n";
    for (std::size_t i = 0; i < curve.time.size(); ++i) {
        out += tsv::format_double(curve.time[i]) + "\t" + std::to_string(curve.n_at_risk[i]) + "\t" +
               tsv::format_double(curve.survival[i]) + "\t" + tsv::format_double(curve.ci_low[i]) + "\t" +
               tsv::format_double(curve.ci_high[i]) + "\n";
    }
    tsv::write_file(path, out);
}

}  // namespace histosub
