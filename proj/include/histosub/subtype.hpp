#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histosub/expression.hpp"

namespace histosub {

/// ssGSEA running-sum settings. Ties in expression are broken by ascending gene symbol.
struct SsgseaParams {
    double alpha = 0.25;
};

enum class Subtype { Basal, Classical, Intermediate, Ambiguous };

const char* to_string(Subtype s);
Subtype parse_subtype(std::string_view s);

struct SubtypeRecord {
    std::string sample_id;
    double es_classical = 0.0;
    double es_basal = 0.0;
    double score = 0.0;
    double zscore = 0.0;
    Subtype label = Subtype::Intermediate;
    std::optional<double> gata6_tpm;
    std::optional<double> ddr_score;
};

struct TertileCutoffs {
    double lower = 20.0;
    double upper = 60.0;
};

struct SubtypeScore {
    double es_classical;
    double es_basal;
    double score;
};

struct ZLabel {
    double zscore;
    Subtype label;
};

/**
 * Single-sample enrichment score of `set` within one expression vector.
 *
 * Genes are ranked by descending expression; the gene at position i (1-based)
 * carries rank value N - i + 1. The in-set walk accumulates rank^alpha weights,
 * the out-of-set walk accumulates uniform steps, and the score is the sum of
 * their difference over every position. Set members absent from `genes` are
 * ignored unless none are present.
 */
double ssgsea_es(std::span<const double> values, std::span<const std::string> genes, const GeneSet& set,
                 const SsgseaParams& params = {});

SubtypeScore subtype_score(std::span<const double> values, std::span<const std::string> genes,
                           const GeneSet& classical, const GeneSet& basal, const SsgseaParams& params = {});

/// CLASSICAL above +threshold, BASAL below -threshold, INTERMEDIATE on the closed interval.
Subtype label_for_zscore(double z, double threshold = 1.0);

/// Cohort z-score (ddof = 1) and threshold labels. |z| == 1 stays INTERMEDIATE.
std::vector<ZLabel> assign_labels(std::span<const double> scores, double threshold = 1.0);

/// Same, but z-scored within each group key.
std::vector<ZLabel> assign_labels_grouped(std::span<const double> scores, std::span<const std::string> groups,
                                          double threshold = 1.0);

/// Empirical 1/3 and 2/3 quantiles with linear interpolation between order statistics.
TertileCutoffs gata6_tertiles(std::span<const double> gata6_tpm);

/// Resolves INTERMEDIATE records by GATA6; everything else is passed through.
std::vector<SubtypeRecord> refine_with_gata6(std::vector<SubtypeRecord> records, const TertileCutoffs& cutoffs);

/// Sum over `ddr` genes of the per-gene cohort z-score of log2(TPM+1) (or of raw TPM).
std::vector<double> ddr_score(const ExpressionMatrix& tpm, const GeneSet& ddr, bool log_transform = true);

/// GMT: `name<TAB>description<TAB>gene...`, one set per line.
std::vector<GeneSet> read_gmt(const std::filesystem::path& path);
void write_gmt(const std::vector<GeneSet>& sets, const std::filesystem::path& path);

std::vector<SubtypeRecord> read_labels_tsv(const std::filesystem::path& path);
void write_labels_tsv(const std::vector<SubtypeRecord>& records, const std::filesystem::path& path);

}  // namespace histosub
