#include "histosub/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "histosub/error.hpp"
#include "histosub/rng.hpp"
#include "histosub/subtype.hpp"
#include "histosub/tsv.hpp"

namespace histosub {

namespace {

std::string sample_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "S%04d", i + 1);
    return buf;
}

void shuffle(std::vector<int>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size() - 1; i > 0; --i) {
        std::swap(v[i], v[static_cast<std::size_t>(rng() % (i + 1))]);
    }
}

Eigen::VectorXd unit_direction(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd u(dim);
    for (int i = 0; i < dim; ++i) u(i) = n(rng);
    return u.normalized();
}

void validate(const SynthSpec& s) {
    if (s.n_slides < 1 || s.patches_min < 1 || s.patches_max < s.patches_min || s.cells_min < 0 ||
        s.cells_max < s.cells_min || s.patch_dim < 1 || s.cell_dim < 1) {
        throw InputError("synth: counts must be >= 1 and ranges ordered");
    }
    if (s.delta < 0.0) throw InputError("synth: delta must be non-negative");
    if (s.expression_cohort != 0 && s.expression_cohort < s.n_slides) {
        throw InputError("synth: expression cohort smaller than the slide cohort");
    }
    if (!(s.classical_fraction > 0.0 && s.classical_fraction < 1.0)) throw InputError("synth: classical_fraction in (0,1)");
    if (!(s.hazard_ratio > 0.0)) throw InputError("synth: hazard ratio must be positive");
    if (s.censor_fraction < 0.0 || s.censor_fraction >= 1.0) throw InputError("synth: censor_fraction in [0,1)");
}

}  // namespace

std::vector<SurvivalRecord> synth_survival(int n_basal, int n_classical, double hazard_ratio, double censor_fraction,
                                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double base_rate = std::log(2.0) / 24.0;  // classical median 24 months
    std::vector<SurvivalRecord> out;
    auto emit = [&](int n, double rate, const char* group, int offset) {
        std::exponential_distribution<double> t_dist(rate);
        for (int i = 0; i < n; ++i) {
            double t = t_dist(rng);
            int event = 1;
            if (unif(rng) < censor_fraction) {
                t *= unif(rng);
                event = 0;
            }
            t = std::max(0.01, std::round(t * 100.0) / 100.0);
            out.push_back({sample_name(offset + i), t, event, group});
        }
    };
    emit(n_basal, base_rate * hazard_ratio, "BASAL", 0);
    emit(n_classical, base_rate, "CLASSICAL", n_basal);
    return out;
}

void synth(const SynthSpec& spec, const SynthGeneSets& sets, std::uint64_t seed, const std::filesystem::path& out_dir) {
    validate(spec);
    const int n_expr = spec.expression_cohort == 0 ? spec.n_slides : spec.expression_cohort;
    std::mt19937_64 rng(derive_seed(seed, "synth"));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // Latent classes: exactly round(fraction * n) classical, shuffled. 1 = basal.
    const int n_classical = static_cast<int>(std::lround(spec.classical_fraction * n_expr));
    std::vector<int> basal(static_cast<std::size_t>(n_expr), 1);
    std::fill(basal.begin(), basal.begin() + n_classical, 0);
    shuffle(basal, rng);
    std::vector<std::string> samples;
    for (int i = 0; i < n_expr; ++i) samples.push_back(sample_name(i));

    // Expression: signature genes, GATA6, DDR genes, then filler genes absorbing the remaining TPM mass.
    std::vector<std::string> genes;
    std::set<std::string> seen;
    auto add = [&](const std::string& g) {
        if (seen.insert(g).second) genes.push_back(g);
    };
    for (const auto& g : sets.classical.genes) add(g);
    for (const auto& g : sets.basal.genes) add(g);
    add("GATA6");
    for (const auto& g : sets.ddr.genes) add(g);
    const std::size_t n_informative = genes.size();
    constexpr int kFiller = 1000;
    for (int i = 0; i < kFiller; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "FILLER%03d", i + 1);
        add(buf);
    }
    const std::set<std::string> classical_set(sets.classical.genes.begin(), sets.classical.genes.end());
    const std::set<std::string> basal_set(sets.basal.genes.begin(), sets.basal.genes.end());
    const std::set<std::string> ddr_set(sets.ddr.genes.begin(), sets.ddr.genes.end());

    const auto ng = static_cast<Eigen::Index>(genes.size());
    Eigen::VectorXd gene_base(ng);
    Eigen::VectorXd lengths_kb(ng);
    for (Eigen::Index g = 0; g < ng; ++g) {
        gene_base(g) = 5.0 + (static_cast<std::size_t>(g) < n_informative ? 1.0 : 2.0) * normal(rng);
        lengths_kb(g) = std::round((0.5 + 4.5 * unif(rng)) * 1000.0) / 1000.0;
    }
    Eigen::MatrixXd counts(ng, n_expr);
    for (int s = 0; s < n_expr; ++s) {
        const bool is_basal = basal[static_cast<std::size_t>(s)] == 1;
        const double strength = 0.5 + 0.5 * unif(rng);
        Eigen::VectorXd tpm(ng);
        double informative_mass = 0.0;
        for (std::size_t gi = 0; gi < n_informative; ++gi) {
            const auto g = static_cast<Eigen::Index>(gi);
            const auto& name = genes[gi];
            double log2v = gene_base(g) + 0.5 * normal(rng);
            if (name == "GATA6") {
                log2v = is_basal ? std::log2(6.0) + 0.4 * normal(rng) : std::log2(150.0) + 0.3 * normal(rng);
            } else if (classical_set.count(name) && !is_basal) {
                log2v += spec.classical_effect * strength;
            } else if (basal_set.count(name) && is_basal) {
                log2v += spec.basal_effect * strength;
            } else if (ddr_set.count(name) && is_basal) {
                log2v += 0.5;
            }
            tpm(g) = std::exp2(log2v);
            informative_mass += tpm(g);
        }
        double filler_weight = 0.0;
        for (Eigen::Index g = static_cast<Eigen::Index>(n_informative); g < ng; ++g) {
            tpm(g) = std::exp2(gene_base(g) + 0.5 * normal(rng));
            filler_weight += tpm(g);
        }
        const double remaining = 1e6 - informative_mass;
        if (remaining <= 0.0) throw InputError("synth: signature effects exceed the TPM budget");
        for (Eigen::Index g = static_cast<Eigen::Index>(n_informative); g < ng; ++g) tpm(g) *= remaining / filler_weight;
        // 20 reads per TPM-kilobase, rounded to whole reads.
        counts.col(s) = (tpm.array() * lengths_kb.array() * 20.0).round().matrix();
    }
    const ExpressionMatrix count_matrix(genes, samples, counts, ExpressionMode::Counts);
    std::map<std::string, double> length_map;
    std::string lengths_out = "gene\tlength_kb\n";
    for (Eigen::Index g = 0; g < ng; ++g) {
        length_map[genes[static_cast<std::size_t>(g)]] = lengths_kb(g);
        lengths_out += genes[static_cast<std::size_t>(g)] + "\t" + tsv::format_double(lengths_kb(g)) + "\n";
    }
    write_expression_tsv(count_matrix, out_dir / "counts.tsv");
    tsv::write_file(out_dir / "gene_lengths.tsv", lengths_out);
    write_expression_tsv(counts_to_tpm(count_matrix, length_map), out_dir / "expression.tsv");
    write_gmt({sets.classical}, out_dir / "moffitt_classical.gmt");
    write_gmt({sets.basal}, out_dir / "moffitt_basal.gmt");
    write_gmt({sets.ddr}, out_dir / "ddr6.gmt");

    // Slides. Basal embeddings are shifted by delta along a fixed unit direction, classical ones are not;
    // both get N(0, I) noise.
    std::mt19937_64 slide_rng(derive_seed(seed, "synth", 1));
    const Eigen::VectorXd patch_dir = unit_direction(spec.patch_dim, slide_rng);
    const Eigen::VectorXd cell_dir = unit_direction(spec.cell_dim, slide_rng);
    std::vector<ManifestEntry> manifest;
    std::vector<std::string> status(static_cast<std::size_t>(n_expr));
    for (int s = 0; s < n_expr; ++s) {
        status[static_cast<std::size_t>(s)] = unif(slide_rng) < spec.metastatic_fraction ? "metastatic" : "resected";
    }
    for (int s = 0; s < spec.n_slides; ++s) {
        const int y = basal[static_cast<std::size_t>(s)];
        const double shift = y == 1 ? spec.delta : 0.0;
        SlideBag bag;
        bag.slide_id = samples[static_cast<std::size_t>(s)];
        const int k = spec.patches_min + static_cast<int>(slide_rng() % static_cast<std::uint64_t>(
                                                              spec.patches_max - spec.patches_min + 1));
        const int side = static_cast<int>(std::ceil(std::sqrt(2.0 * k)));
        std::vector<int> cellsq(static_cast<std::size_t>(side * side));
        for (std::size_t i = 0; i < cellsq.size(); ++i) cellsq[i] = static_cast<int>(i);
        shuffle(cellsq, slide_rng);
        for (int p = 0; p < k; ++p) {
            PatchInstance pt;
            pt.gx = cellsq[static_cast<std::size_t>(p)] % side;
            pt.gy = cellsq[static_cast<std::size_t>(p)] / side;
            pt.embedding = shift * patch_dir;
            for (int j = 0; j < spec.patch_dim; ++j) pt.embedding(j) += normal(slide_rng);
            const int m = spec.cells_min + static_cast<int>(slide_rng() % static_cast<std::uint64_t>(
                                                                spec.cells_max - spec.cells_min + 1));
            for (int c = 0; c < m; ++c) {
                CellInstance cell;
                // Quarter-pixel grid.
                cell.x = pt.gx * kPatchSpanPx + std::floor(unif(slide_rng) * 2047.0) / 4.0;
                cell.y = pt.gy * kPatchSpanPx + std::floor(unif(slide_rng) * 2047.0) / 4.0;
                cell.cell_class = static_cast<int>(slide_rng() % 5);
                cell.embedding = shift * cell_dir;
                for (int j = 0; j < spec.cell_dim; ++j) cell.embedding(j) += normal(slide_rng);
                bag.cells.push_back(std::move(cell));
            }
            bag.patches.push_back(std::move(pt));
        }
        const std::filesystem::path rel = std::filesystem::path("slides") / bag.slide_id;
        write_slide_bundle(bag, out_dir / rel, spec.format);
        manifest.push_back({bag.slide_id, rel, y, "synth", status[static_cast<std::size_t>(s)]});
    }
    write_manifest(manifest, out_dir / "manifest.tsv");

    // Survival for every expression sample, hazard planted by latent class.
    int n_b = 0;
    for (int v : basal) n_b += v;
    const auto surv = synth_survival(n_b, n_expr - n_b, spec.hazard_ratio, spec.censor_fraction,
                                     derive_seed(seed, "synth", 2));
    std::vector<ClinicalRow> clinical;
    int next_b = 0;
    int next_c = n_b;
    for (int s = 0; s < n_expr; ++s) {
        const auto& r = surv[static_cast<std::size_t>(basal[static_cast<std::size_t>(s)] ? next_b++ : next_c++)];
        clinical.push_back({samples[static_cast<std::size_t>(s)], r.time, r.event, "synth", status[static_cast<std::size_t>(s)]});
    }
    write_clinical_csv(clinical, out_dir / "clinical.csv");
}

}  // namespace histosub
