#include "histosub/subtype.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_set>

#include "histosub/error.hpp"
#include "histosub/tsv.hpp"

namespace histosub {

const char* to_string(Subtype s) {
    switch (s) {
        case Subtype::Basal: return "BASAL";
        case Subtype::Classical: return "CLASSICAL";
        case Subtype::Intermediate: return "INTERMEDIATE";
        case Subtype::Ambiguous: return "AMBIGUOUS";
    }
    return "?";
}

Subtype parse_subtype(std::string_view s) {
    if (s == "BASAL") return Subtype::Basal;
    if (s == "CLASSICAL") return Subtype::Classical;
    if (s == "INTERMEDIATE") return Subtype::Intermediate;
    if (s == "AMBIGUOUS") return Subtype::Ambiguous;
    throw InputError("unknown subtype label: " + std::string(s));
}

double ssgsea_es(std::span<const double> values, std::span<const std::string> genes, const GeneSet& set,
                 const SsgseaParams& params) {
    if (values.size() != genes.size()) throw InputError("ssgsea: values and gene ids differ in length");
    if (params.alpha < 0.0) throw InputError("ssgsea: alpha must be non-negative");
    const std::size_t n = values.size();

    std::unordered_set<std::string> members(set.genes.begin(), set.genes.end());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return genes[a] < genes[b];
    });

    std::vector<char> in_set(n, 0);
    std::size_t n_in = 0;
    double total_weight = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (members.count(genes[order[i]])) {
            in_set[i] = 1;
            ++n_in;
            total_weight += std::pow(static_cast<double>(n - i), params.alpha);
        }
    }
    if (n_in == 0) throw InputError("gene set '" + set.name + "' has no genes in the expression vector: " + join(set.genes));
    if (n_in == n) throw DegenerateError("gene set '" + set.name + "' covers every gene; out-of-set walk undefined");

    const double out_step = 1.0 / static_cast<double>(n - n_in);
    double p_in = 0.0;
    double p_out = 0.0;
    double es = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (in_set[i]) {
            p_in += std::pow(static_cast<double>(n - i), params.alpha) / total_weight;
        } else {
            p_out += out_step;
        }
        es += p_in - p_out;
    }
    return es;
}

SubtypeScore subtype_score(std::span<const double> values, std::span<const std::string> genes,
                           const GeneSet& classical, const GeneSet& basal, const SsgseaParams& params) {
    const double c = ssgsea_es(values, genes, classical, params);
    const double b = ssgsea_es(values, genes, basal, params);
    return {c, b, c - b};
}

Subtype label_for_zscore(double z, double threshold) {
    if (z > threshold) return Subtype::Classical;
    if (z < -threshold) return Subtype::Basal;
    return Subtype::Intermediate;
}

std::vector<ZLabel> assign_labels(std::span<const double> scores, double threshold) {
    const std::size_t n = scores.size();
    if (n < 2) throw DegenerateError("label assignment needs at least 2 samples");
    for (double s : scores) {
        if (!std::isfinite(s)) throw InputError("non-finite subtype score");
    }
    const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double s : scores) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (!(sd > 0.0)) throw DegenerateError("subtype scores have zero variance across the cohort");

    std::vector<ZLabel> out;
    out.reserve(n);
    for (double s : scores) {
        const double z = (s - mean) / sd;
        out.push_back({z, label_for_zscore(z, threshold)});
    }
    return out;
}

std::vector<ZLabel> assign_labels_grouped(std::span<const double> scores, std::span<const std::string> groups,
                                          double threshold) {
    if (scores.size() != groups.size()) throw InputError("scores and group keys differ in length");
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
    std::vector<ZLabel> out(scores.size());
    for (const auto& [key, idx] : members) {
        std::vector<double> sub;
        for (auto i : idx) sub.push_back(scores[i]);
        const auto labelled = assign_labels(sub, threshold);
        for (std::size_t k = 0; k < idx.size(); ++k) out[idx[k]] = labelled[k];
    }
    return out;
}

TertileCutoffs gata6_tertiles(std::span<const double> gata6_tpm) {
    if (gata6_tpm.size() < 3) throw DegenerateError("GATA6 tertiles need at least 3 samples");
    std::vector<double> x(gata6_tpm.begin(), gata6_tpm.end());
    std::sort(x.begin(), x.end());
    auto quantile = [&](double q) {
        const double h = static_cast<double>(x.size() - 1) * q;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const std::size_t hi = std::min(lo + 1, x.size() - 1);
        return x[lo] + (h - static_cast<double>(lo)) * (x[hi] - x[lo]);
    };
    return {quantile(1.0 / 3.0), quantile(2.0 / 3.0)};
}

std::vector<SubtypeRecord> refine_with_gata6(std::vector<SubtypeRecord> records, const TertileCutoffs& cutoffs) {
    if (cutoffs.lower > cutoffs.upper) throw InputError("GATA6 cutoffs: lower exceeds upper");
    for (auto& r : records) {
        if (r.label != Subtype::Intermediate) continue;
        if (!r.gata6_tpm) throw InputError("sample '" + r.sample_id + "' is intermediate but has no GATA6 value");
        const double g = *r.gata6_tpm;
        if (g <= cutoffs.lower) {
            r.label = Subtype::Basal;
        } else if (g >= cutoffs.upper) {
            r.label = Subtype::Classical;
        } else {
            r.label = Subtype::Ambiguous;
        }
    }
    return records;
}

std::vector<double> ddr_score(const ExpressionMatrix& tpm, const GeneSet& ddr, bool log_transform) {
    const auto sub = tpm.select_genes(ddr.genes);
    const auto z = zscore_genes(log_transform ? log2p1(sub) : sub);
    const Eigen::VectorXd sums = z.values().colwise().sum().transpose();
    return {sums.data(), sums.data() + sums.size()};
}

std::vector<GeneSet> read_gmt(const std::filesystem::path& path) {
    std::vector<GeneSet> sets;
    for (const auto& line : tsv::read_lines(path)) {
        if (line.empty()) continue;
        const auto f = tsv::split(line);
        if (f.size() < 3) throw InputError("GMT line needs name, description and genes: " + path.string());
        std::vector<std::string> genes(f.begin() + 2, f.end());
        sets.emplace_back(std::string(f[0]), genes);
    }
    if (sets.empty()) throw InputError("no gene sets in " + path.string());
    return sets;
}

void write_gmt(const std::vector<GeneSet>& sets, const std::filesystem::path& path) {
    std::string out;
    for (const auto& s : sets) {
        out += s.name + "\t" + s.name;
        for (const auto& g : s.genes) out += "\t" + g;
        out += "\n";
    }
    tsv::write_file(path, out);
}

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? tsv::format_double(*v) : "NA"; }

std::optional<double> parse_opt(std::string_view f, const std::string& ctx) {
    if (f == "NA" || f.empty()) return std::nullopt;
    return tsv::parse_double(f, ctx);
}

constexpr const char* kLabelsHeader = "sample_id\tes_classical\tes_basal\tscore\tzscore\tlabel\tgata6_tpm\tddr_score";

}  // namespace

void write_labels_tsv(const std::vector<SubtypeRecord>& records, const std::filesystem::path& path) {
    std::string out = std::string(kLabelsHeader) + "\n";
    for (const auto& r : records) {
        out += r.sample_id + "\t" + tsv::format_double(r.es_classical) + "\t" + tsv::format_double(r.es_basal) + "\t" +
               tsv::format_double(r.score) + "\t" + tsv::format_double(r.zscore) + "\t" + to_string(r.label) + "\t" +
               opt_field(r.gata6_tpm) + "\t" + opt_field(r.ddr_score) + "\n";
    }
    tsv::write_file(path, out);
}

std::vector<SubtypeRecord> read_labels_tsv(const std::filesystem::path& path) {
    const auto lines = tsv::read_lines(path);
    if (lines.empty() || lines[0] != kLabelsHeader) throw InputError("unexpected labels header in " + path.string());
    std::vector<SubtypeRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = tsv::split(lines[i]);
        const std::string ctx = path.string() + ":" + std::to_string(i + 1);
        if (f.size() != 8) throw InputError(ctx + ": expected 8 fields");
        SubtypeRecord r;
        r.sample_id = std::string(f[0]);
        r.es_classical = tsv::parse_double(f[1], ctx);
        r.es_basal = tsv::parse_double(f[2], ctx);
        r.score = tsv::parse_double(f[3], ctx);
        r.zscore = tsv::parse_double(f[4], ctx);
        r.label = parse_subtype(f[5]);
        r.gata6_tpm = parse_opt(f[6], ctx);
        r.ddr_score = parse_opt(f[7], ctx);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace histosub
