#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "histosub/model.hpp"
#include "histosub/survival.hpp"
#include "histosub/synth.hpp"

namespace histosub {

enum class Gata6CutoffMode { Fixed, Empirical };

/**
 * Effective settings of one command run. Loaded from a flat JSON object,
 * overridden by CLI flags, and echoed into every output directory as
 * run_config.json.
 */
struct RunConfig {
    std::uint64_t seed = 0;
    int k_folds = 5;
    int threads = 1;

    // Model
    ModelMode mode = ModelMode::DualScale;
    int patch_dim = 768;
    int d_cell = 32;
    int att_dim = 128;
    LambdaMode lambda_mode = LambdaMode::Learnable;
    bool pos_enc = false;

    // Training
    double lr = 5e-5;
    double weight_decay = 1e-5;
    int max_epochs = 100;
    int patience = 10;

    // Labeling
    double ssgsea_alpha = 0.25;
    double z_threshold = 1.0;
    Gata6CutoffMode gata6_mode = Gata6CutoffMode::Fixed;
    double gata6_lower = 20.0;
    double gata6_upper = 60.0;
    bool ddr_log = true;
    bool zscore_by_cohort = false;
    std::string expression_mode = "tpm";  // tpm | counts
    std::string gene_collision = "sum";   // sum | max | error
    bool drop_unmapped = false;

    // Evaluation
    double class_threshold = 0.5;
    double confidence_lo = 0.10;
    double confidence_hi = 0.90;

    // Survival
    std::string censoring = "both";  // standard | paper_replica | both

    // Paths (empty = not provided)
    std::string expression, gene_lengths, gene_map, classical_gmt, basal_gmt, ddr_gmt;
    std::string manifest, labels, checkpoint, clinical, predictions, slide;
    std::string out_dir = ".";

    void validate() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Applies keys of a flat JSON object onto `c`; unknown keys are rejected.
void apply_json(RunConfig& c, const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);

ModelDims model_dims(const RunConfig& c);

struct LabelSummary {
    std::size_t n_basal = 0;
    std::size_t n_classical = 0;
    std::size_t n_intermediate = 0;
    std::size_t n_ambiguous = 0;
    double classical_fraction = 0.0;  // classical / (classical + basal)
};

void cmd_synth(const SynthSpec& spec, const SynthGeneSets& sets, const RunConfig& config);
LabelSummary cmd_label(const RunConfig& config);

struct TrainSummary {
    nlohmann::json metrics;
    int best_fold;
};

TrainSummary cmd_train(const RunConfig& config);
nlohmann::json cmd_evaluate(const RunConfig& config);
nlohmann::json cmd_survival(const RunConfig& config);
void cmd_attention(const RunConfig& config);

}  // namespace histosub
