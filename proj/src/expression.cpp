#include "histosub/expression.hpp"

#include <cmath>
#include <unordered_set>

#include "histosub/error.hpp"
#include "histosub/tsv.hpp"

namespace histosub {

const char* to_string(ExpressionMode mode) {
    switch (mode) {
        case ExpressionMode::Counts: return "COUNTS";
        case ExpressionMode::Tpm: return "TPM";
        case ExpressionMode::Log2Tpm1: return "LOG2_TPM1";
        case ExpressionMode::ZScore: return "ZSCORE";
    }
    return "?";
}

namespace {

std::unordered_map<std::string, Eigen::Index> build_lookup(const std::vector<std::string>& ids, const char* what) {
    std::unordered_map<std::string, Eigen::Index> lookup;
    lookup.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!lookup.emplace(ids[i], static_cast<Eigen::Index>(i)).second) {
            throw InputError(std::string("duplicate ") + what + " id: " + ids[i]);
        }
    }
    return lookup;
}

}  // namespace

ExpressionMatrix::ExpressionMatrix(std::vector<std::string> gene_ids, std::vector<std::string> sample_ids,
                                   Eigen::MatrixXd values, ExpressionMode mode)
    : genes_(std::move(gene_ids)), samples_(std::move(sample_ids)), values_(std::move(values)), mode_(mode) {
    if (values_.rows() != static_cast<Eigen::Index>(genes_.size()) ||
        values_.cols() != static_cast<Eigen::Index>(samples_.size())) {
        throw InputError("expression matrix shape does not match gene/sample ids");
    }
    gene_lookup_ = build_lookup(genes_, "gene");
    sample_lookup_ = build_lookup(samples_, "sample");
    if (!values_.allFinite()) throw InputError("expression matrix contains non-finite values");
    if ((mode_ == ExpressionMode::Counts || mode_ == ExpressionMode::Tpm) && values_.size() > 0 &&
        values_.minCoeff() < 0.0) {
        throw InputError(std::string("negative value in ") + to_string(mode_) + " matrix");
    }
}

std::optional<Eigen::Index> ExpressionMatrix::gene_index(const std::string& gene) const {
    auto it = gene_lookup_.find(gene);
    if (it == gene_lookup_.end()) return std::nullopt;
    return it->second;
}

std::optional<Eigen::Index> ExpressionMatrix::sample_index(const std::string& sample) const {
    auto it = sample_lookup_.find(sample);
    if (it == sample_lookup_.end()) return std::nullopt;
    return it->second;
}

ExpressionMatrix ExpressionMatrix::select_genes(const std::vector<std::string>& genes) const {
    std::vector<std::string> missing;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(genes.size()), n_samples());
    for (std::size_t i = 0; i < genes.size(); ++i) {
        auto idx = gene_index(genes[i]);
        if (!idx) {
            missing.push_back(genes[i]);
            continue;
        }
        out.row(static_cast<Eigen::Index>(i)) = values_.row(*idx);
    }
    if (!missing.empty()) throw InputError("genes missing from expression matrix: " + join(missing));
    return ExpressionMatrix(genes, samples_, std::move(out), mode_);
}

GeneSet::GeneSet(std::string set_name, const std::vector<std::string>& members) : name(std::move(set_name)) {
    std::unordered_set<std::string> seen;
    for (const auto& g : members) {
        if (g.empty()) continue;
        if (seen.insert(g).second) genes.push_back(g);
    }
    if (genes.empty()) throw InputError("gene set '" + name + "' is empty");
}

ExpressionMatrix counts_to_tpm(const ExpressionMatrix& counts, const std::map<std::string, double>& lengths_kb) {
    if (counts.mode() != ExpressionMode::Counts) throw InputError("counts_to_tpm expects a COUNTS matrix");
    const auto& genes = counts.gene_ids();
    Eigen::VectorXd len(counts.n_genes());
    std::vector<std::string> bad;
    for (std::size_t g = 0; g < genes.size(); ++g) {
        auto it = lengths_kb.find(genes[g]);
        if (it == lengths_kb.end() || !(it->second > 0.0) || !std::isfinite(it->second)) {
            bad.push_back(genes[g]);
            continue;
        }
        len(static_cast<Eigen::Index>(g)) = it->second;
    }
    if (!bad.empty()) throw InputError("missing or non-positive gene length for: " + join(bad));

    Eigen::MatrixXd rate = counts.values().array().colwise() / len.array();
    for (Eigen::Index s = 0; s < rate.cols(); ++s) {
        const double total = rate.col(s).sum();
        if (!(total > 0.0)) {
            throw DegenerateError("sample '" + counts.sample_ids()[static_cast<std::size_t>(s)] +
                                  "' has zero total counts");
        }
        rate.col(s) *= 1e6 / total;
    }
    return ExpressionMatrix(genes, counts.sample_ids(), std::move(rate), ExpressionMode::Tpm);
}

ExpressionMatrix log2p1(const ExpressionMatrix& tpm) {
    if (tpm.mode() != ExpressionMode::Tpm) throw InputError("log2p1 expects a TPM matrix");
    Eigen::MatrixXd out = tpm.values().unaryExpr([](double x) { return std::log2(x + 1.0); });
    return ExpressionMatrix(tpm.gene_ids(), tpm.sample_ids(), std::move(out), ExpressionMode::Log2Tpm1);
}

ExpressionMatrix zscore_genes(const ExpressionMatrix& m) {
    const Eigen::Index n = m.n_samples();
    if (n < 2) throw DegenerateError("z-scoring needs at least 2 samples");
    Eigen::MatrixXd out(m.n_genes(), n);
    for (Eigen::Index g = 0; g < m.n_genes(); ++g) {
        const auto row = m.values().row(g);
        const double mean = row.mean();
        const double ss = (row.array() - mean).square().sum();
        const double sd = std::sqrt(ss / static_cast<double>(n - 1));
        if (sd > 0.0) {
            out.row(g) = (row.array() - mean) / sd;
        } else {
            out.row(g).setZero();
        }
    }
    return ExpressionMatrix(m.gene_ids(), m.sample_ids(), std::move(out), ExpressionMode::ZScore);
}

ExpressionMatrix map_gene_ids(const ExpressionMatrix& m, const GeneIdMap& map, CollisionPolicy collision,
                              bool drop_unmapped) {
    std::vector<std::string> unmapped;
    std::vector<std::string> symbols;
    std::unordered_map<std::string, Eigen::Index> row_of;
    std::vector<Eigen::RowVectorXd> rows;

    for (Eigen::Index g = 0; g < m.n_genes(); ++g) {
        const auto& src = m.gene_ids()[static_cast<std::size_t>(g)];
        auto it = map.entries.find(src);
        if (it == map.entries.end()) {
            unmapped.push_back(src);
            continue;
        }
        const std::string& sym = it->second;
        auto [slot, inserted] = row_of.emplace(sym, static_cast<Eigen::Index>(rows.size()));
        if (inserted) {
            symbols.push_back(sym);
            rows.emplace_back(m.values().row(g));
            continue;
        }
        auto& acc = rows[static_cast<std::size_t>(slot->second)];
        switch (collision) {
            case CollisionPolicy::Sum: acc += m.values().row(g); break;
            case CollisionPolicy::Max: acc = acc.cwiseMax(m.values().row(g)); break;
            case CollisionPolicy::Error:
                throw InputError("multiple source ids map to symbol '" + sym + "'");
        }
    }
    if (!unmapped.empty() && !drop_unmapped) throw InputError("unmapped gene ids: " + join(unmapped));

    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.n_samples());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = rows[i];
    return ExpressionMatrix(std::move(symbols), m.sample_ids(), std::move(out), m.mode());
}

ExpressionMatrix read_expression_tsv(const std::filesystem::path& path, ExpressionMode mode) {
    const auto lines = tsv::read_lines(path);
    if (lines.empty()) throw InputError("empty expression file " + path.string());
    const auto header = tsv::split(lines[0]);
    if (header.empty() || header[0] != "gene") {
        throw InputError("expression header must start with 'gene': " + path.string());
    }
    std::vector<std::string> samples(header.begin() + 1, header.end());
    std::vector<std::string> genes;
    std::vector<double> flat;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (lines[li].empty()) continue;
        const auto fields = tsv::split(lines[li]);
        if (fields.size() != samples.size() + 1) {
            throw InputError(path.string() + ":" + std::to_string(li + 1) + ": expected " +
                             std::to_string(samples.size() + 1) + " fields");
        }
        genes.emplace_back(fields[0]);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            flat.push_back(tsv::parse_double(fields[j], path.string() + ":" + std::to_string(li + 1)));
        }
    }
    const auto ng = static_cast<Eigen::Index>(genes.size());
    const auto ns = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd values = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        flat.data(), ng, ns);
    return ExpressionMatrix(std::move(genes), std::move(samples), std::move(values), mode);
}

void write_expression_tsv(const ExpressionMatrix& m, const std::filesystem::path& path) {
    std::string out = "gene";
    for (const auto& s : m.sample_ids()) out += "\t" + s;
    out += "\n";
    for (Eigen::Index g = 0; g < m.n_genes(); ++g) {
        out += m.gene_ids()[static_cast<std::size_t>(g)];
        for (Eigen::Index s = 0; s < m.n_samples(); ++s) {
            out += "\t";
            out += tsv::format_double(m.values()(g, s));
        }
        out += "\n";
    }
    tsv::write_file(path, out);
}

GeneIdMap read_gene_id_map(const std::filesystem::path& path) {
    GeneIdMap map;
    for (const auto& line : tsv::read_lines(path)) {
        if (line.empty()) continue;
        const auto f = tsv::split(line);
        if (f.size() != 2) throw InputError("gene id map rows need 2 columns: " + path.string());
        map.entries[std::string(f[0])] = std::string(f[1]);
    }
    return map;
}

std::map<std::string, double> read_gene_lengths(const std::filesystem::path& path) {
    std::map<std::string, double> lengths;
    for (const auto& line : tsv::read_lines(path)) {
        if (line.empty()) continue;
        const auto f = tsv::split(line);
        if (f.size() != 2) throw InputError("gene length rows need 2 columns: " + path.string());
        if (f[0] == "gene") continue;
        lengths[std::string(f[0])] = tsv::parse_double(f[1], path.string());
    }
    return lengths;
}

}  // namespace histosub
