#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace histosub {

enum class ExpressionMode { Counts, Tpm, Log2Tpm1, ZScore };

const char* to_string(ExpressionMode mode);

/**
 * Dense genes x samples expression matrix.
 *
 * Gene and sample ids are unique. COUNTS and TPM entries are non-negative;
 * every entry is finite. The constructor enforces these invariants.
 */
class ExpressionMatrix {
public:
    ExpressionMatrix(std::vector<std::string> gene_ids, std::vector<std::string> sample_ids,
                     Eigen::MatrixXd values, ExpressionMode mode);

    const std::vector<std::string>& gene_ids() const { return genes_; }
    const std::vector<std::string>& sample_ids() const { return samples_; }
    const Eigen::MatrixXd& values() const { return values_; }
    ExpressionMode mode() const { return mode_; }

    Eigen::Index n_genes() const { return values_.rows(); }
    Eigen::Index n_samples() const { return values_.cols(); }

    std::optional<Eigen::Index> gene_index(const std::string& gene) const;
    std::optional<Eigen::Index> sample_index(const std::string& sample) const;

    /// Rows for `genes`, in the given order. Throws InputError listing absent genes.
    ExpressionMatrix select_genes(const std::vector<std::string>& genes) const;

private:
    std::vector<std::string> genes_;
    std::vector<std::string> samples_;
    Eigen::MatrixXd values_;
    ExpressionMode mode_;
    std::unordered_map<std::string, Eigen::Index> gene_lookup_;
    std::unordered_map<std::string, Eigen::Index> sample_lookup_;
};

/// Named gene list, deduplicated with first-occurrence order kept.
struct GeneSet {
    std::string name;
    std::vector<std::string> genes;

    GeneSet(std::string name, const std::vector<std::string>& genes);
};

/// Source id (e.g. versioned ENSEMBL) to gene symbol; many-to-one allowed.
struct GeneIdMap {
    std::unordered_map<std::string, std::string> entries;
};

enum class CollisionPolicy { Sum, Max, Error };

ExpressionMatrix counts_to_tpm(const ExpressionMatrix& counts, const std::map<std::string, double>& lengths_kb);

ExpressionMatrix log2p1(const ExpressionMatrix& tpm);

/// Per-gene z-score across samples, ddof = 1. Constant rows become zeros.
ExpressionMatrix zscore_genes(const ExpressionMatrix& m);

ExpressionMatrix map_gene_ids(const ExpressionMatrix& m, const GeneIdMap& map, CollisionPolicy collision,
                              bool drop_unmapped = false);

// TSV I/O. The matrix header is `gene<TAB>sample...`.
ExpressionMatrix read_expression_tsv(const std::filesystem::path& path, ExpressionMode mode);
void write_expression_tsv(const ExpressionMatrix& m, const std::filesystem::path& path);
GeneIdMap read_gene_id_map(const std::filesystem::path& path);
std::map<std::string, double> read_gene_lengths(const std::filesystem::path& path);

}  // namespace histosub
