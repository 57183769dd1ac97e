#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "histosub/expression.hpp"
#include "histosub/slide_io.hpp"
#include "histosub/survival.hpp"

namespace histosub {

struct SynthSpec {
    int n_slides = 60;
    int patches_min = 6;
    int patches_max = 12;
    int cells_min = 0;
    int cells_max = 6;
    /// Shift of basal patch and cell embedding means away from classical, in units of the per-coordinate sd.
    double delta = 3.0;
    /// Expression samples; the first n_slides of them also get slides. 0 means n_slides.
    int expression_cohort = 0;
    double classical_fraction = 0.65;
    /// log2 up-shift of a sample's own signature genes, scaled by a per-sample strength in [0.5, 1].
    double classical_effect = 3.0;
    double basal_effect = 3.0;
    double hazard_ratio = 3.0;
    double censor_fraction = 0.2;
    double metastatic_fraction = 0.4;
    int patch_dim = 768;
    int cell_dim = 32;
    BundleFormat format = BundleFormat::Tsv;
};

struct SynthGeneSets {
    GeneSet classical;
    GeneSet basal;
    GeneSet ddr;
};

/// Exponential survival times, basal hazard = classical hazard x hazard_ratio, ~censor_fraction censored.
/// Group keys are "BASAL" / "CLASSICAL".
std::vector<SurvivalRecord> synth_survival(int n_basal, int n_classical, double hazard_ratio, double censor_fraction,
                                           std::uint64_t seed);

/**
 * Writes a complete synthetic cohort under `out_dir`:
 * expression.tsv (TPM), counts.tsv, gene_lengths.tsv, the three GMT files,
 * slides/<id>/ bundles, manifest.tsv and clinical.csv. Output is a pure
 * function of (spec, sets, seed).
 */
void synth(const SynthSpec& spec, const SynthGeneSets& sets, std::uint64_t seed, const std::filesystem::path& out_dir);

}  // namespace histosub
