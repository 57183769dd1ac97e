#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace histosub {

struct SurvivalRecord {
    std::string sample_id;
    double time = 0.0;  // months
    int event = 0;      // 1 death, 0 censored
    std::string group;
};

/// STANDARD keeps right-censored subjects; PAPER_REPLICA drops every censored record first.
enum class CensoringMode { Standard, PaperReplica };

/// Log-log (Kalbfleisch-Prentice) bounds by default; plain Greenwood bounds are clipped to [0, 1].
enum class CiMethod { LogLog, Plain };

const char* to_string(CensoringMode m);
CensoringMode parse_censoring_mode(std::string_view s);

/// One row per distinct death time.
struct KMCurve {
    std::vector<double> time;
    std::vector<std::size_t> n_at_risk;
    std::vector<std::size_t> n_events;
    std::vector<double> survival;
    std::vector<double> greenwood_var;
    std::vector<double> ci_low;
    std::vector<double> ci_high;
};

KMCurve km_estimate(std::span<const SurvivalRecord> records, CensoringMode mode = CensoringMode::Standard,
                    CiMethod ci = CiMethod::LogLog);

/// Each field is empty when the corresponding curve never reaches 0.5 ("not reached").
struct MedianSurvival {
    std::optional<double> median;
    std::optional<double> ci_low;
    std::optional<double> ci_high;
};

MedianSurvival median_survival(const KMCurve& curve);

struct LogRankResult {
    double chi2;
    double p;
    double observed_minus_expected;  // for group A
    double variance;
};

LogRankResult logrank_test(std::span<const SurvivalRecord> group_a, std::span<const SurvivalRecord> group_b,
                           CensoringMode mode = CensoringMode::Standard);

/// erfc via the Chebyshev-fitted rational approximation (|error| < 1.2e-7).
double erfc_approx(double x);

/// Upper tail of the 1-df chi-square: erfc(sqrt(x/2)).
double chi2_1df_pvalue(double x);

struct ClinicalRow {
    std::string sample_id;
    double os_months;
    int event;
    std::string cohort;
    std::string disease_status;  // metastatic | resected
};

/// CSV with header sample_id,os_months,event,cohort,disease_status.
std::vector<ClinicalRow> read_clinical_csv(const std::filesystem::path& path);
void write_clinical_csv(const std::vector<ClinicalRow>& rows, const std::filesystem::path& path);

void write_km_tsv(const KMCurve& curve, const std::filesystem::path& path);

}  // namespace histosub
