#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "histosub/error.hpp"
#include "histosub/pipeline.hpp"
#include "histosub/subtype.hpp"

namespace fs = std::filesystem;
using namespace histosub;

namespace {

struct Overrides {
    std::string config_path;
    std::string data_dir;
    nlohmann::json values = nlohmann::json::object();
};

/// Registers `--flag` whose value, when given, overrides config key `key`.
template <typename T>
void bind(CLI::App* app, Overrides& o, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<T>(flag, [&o, key](const T& v) { o.values[key] = v; }, help);
}

void bind_common(CLI::App* app, Overrides& o) {
    app->add_option("--config", o.config_path, "flat JSON config file; flags override its values");
    bind<std::uint64_t>(app, o, "--seed", "seed", "64-bit seed");
    bind<std::string>(app, o, "--out-dir", "out_dir", "output directory");
    bind<std::string>(app, o, "--mode", "mode", "pansubnet | attmil");
}

void bind_model(CLI::App* app, Overrides& o) {
    bind<int>(app, o, "--patch-dim", "patch_dim", "patch embedding width");
    bind<int>(app, o, "--d-cell", "d_cell", "cell embedding width");
    bind<int>(app, o, "--att-dim", "att_dim", "MIL attention hidden width");
    bind<std::string>(app, o, "--lambda-mode", "lambda_mode", "learnable | fixed_unit");
    bind<bool>(app, o, "--pos-enc", "pos_enc", "add grid position encoding to MIL scoring");
}

RunConfig resolve(const Overrides& o) {
    RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
    apply_json(c, o.values);
    return c;
}

fs::path data_dir(const Overrides& o) {
    if (!o.data_dir.empty()) return o.data_dir;
    if (const char* env = std::getenv("HISTOSUB_DATA_DIR")) return env;
    return HISTOSUB_DATA_DIR;
}

void default_gene_sets(RunConfig& c, const fs::path& dir) {
    if (c.classical_gmt.empty()) c.classical_gmt = (dir / "moffitt_classical.gmt").string();
    if (c.basal_gmt.empty()) c.basal_gmt = (dir / "moffitt_basal.gmt").string();
    if (c.ddr_gmt.empty()) c.ddr_gmt = (dir / "ddr6.gmt").string();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Histology and transcriptome subtype pipeline"};
    app.require_subcommand(1);
    Overrides o;
    SynthSpec spec;
    std::string format = "tsv";

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic cohort");
    bind_common(synth_cmd, o);
    synth_cmd->add_option("--data-dir", o.data_dir, "directory holding the shipped GMT files");
    synth_cmd->add_option("--n-slides", spec.n_slides);
    synth_cmd->add_option("--patches-min", spec.patches_min);
    synth_cmd->add_option("--patches-max", spec.patches_max);
    synth_cmd->add_option("--cells-min", spec.cells_min, "cells per patch, lower bound");
    synth_cmd->add_option("--cells-max", spec.cells_max, "cells per patch, upper bound");
    synth_cmd->add_option("--delta", spec.delta, "class-mean separation in sd units");
    synth_cmd->add_option("--expression-cohort", spec.expression_cohort, "expression samples (0 = n_slides)");
    synth_cmd->add_option("--classical-fraction", spec.classical_fraction);
    synth_cmd->add_option("--classical-effect", spec.classical_effect);
    synth_cmd->add_option("--basal-effect", spec.basal_effect);
    synth_cmd->add_option("--hazard-ratio", spec.hazard_ratio);
    synth_cmd->add_option("--censor-fraction", spec.censor_fraction);
    synth_cmd->add_option("--metastatic-fraction", spec.metastatic_fraction);
    synth_cmd->add_option("--format", format, "tsv | packed")->check(CLI::IsMember({"tsv", "packed"}));
    bind<int>(synth_cmd, o, "--patch-dim", "patch_dim", "patch embedding width");
    bind<int>(synth_cmd, o, "--d-cell", "d_cell", "cell embedding width");

    auto* label_cmd = app.add_subcommand("label", "assign transcriptomic subtypes");
    bind_common(label_cmd, o);
    label_cmd->add_option("--data-dir", o.data_dir, "directory holding the shipped GMT files");
    bind<std::string>(label_cmd, o, "--expression", "expression", "genes x samples TSV");
    bind<std::string>(label_cmd, o, "--expression-mode", "expression_mode", "tpm | counts");
    bind<std::string>(label_cmd, o, "--gene-lengths", "gene_lengths", "gene length TSV in kb (counts mode)");
    bind<std::string>(label_cmd, o, "--gene-map", "gene_map", "source id -> symbol TSV");
    bind<std::string>(label_cmd, o, "--gene-collision", "gene_collision", "sum | max | error");
    bind<bool>(label_cmd, o, "--drop-unmapped", "drop_unmapped", "drop ids missing from the gene map");
    bind<std::string>(label_cmd, o, "--classical-gmt", "classical_gmt", "classical gene set");
    bind<std::string>(label_cmd, o, "--basal-gmt", "basal_gmt", "basal gene set");
    bind<std::string>(label_cmd, o, "--ddr-gmt", "ddr_gmt", "DDR gene set");
    bind<double>(label_cmd, o, "--alpha", "ssgsea_alpha", "ssGSEA rank weight exponent");
    bind<double>(label_cmd, o, "--z-threshold", "z_threshold", "label z-score threshold");
    bind<std::string>(label_cmd, o, "--gata6-mode", "gata6_mode", "fixed | empirical");
    bind<double>(label_cmd, o, "--gata6-lower", "gata6_lower", "GATA6 TPM lower cutoff");
    bind<double>(label_cmd, o, "--gata6-upper", "gata6_upper", "GATA6 TPM upper cutoff");
    bind<bool>(label_cmd, o, "--ddr-log", "ddr_log", "log2(TPM+1) before DDR z-scoring");
    bind<bool>(label_cmd, o, "--zscore-by-cohort", "zscore_by_cohort", "z-score within manifest cohorts");
    bind<std::string>(label_cmd, o, "--manifest", "manifest", "slide manifest (cohort keys)");

    auto* train_cmd = app.add_subcommand("train", "k-fold cross-validated training");
    bind_common(train_cmd, o);
    bind_model(train_cmd, o);
    bind<std::string>(train_cmd, o, "--manifest", "manifest", "slide manifest");
    bind<std::string>(train_cmd, o, "--labels", "labels", "labels.tsv from `label`");
    bind<int>(train_cmd, o, "--k-folds", "k_folds", "number of folds");
    bind<int>(train_cmd, o, "--threads", "threads", "fold worker threads");
    bind<double>(train_cmd, o, "--lr", "lr", "AdamW learning rate");
    bind<double>(train_cmd, o, "--weight-decay", "weight_decay", "AdamW weight decay");
    bind<int>(train_cmd, o, "--max-epochs", "max_epochs", "epoch cap");
    bind<int>(train_cmd, o, "--patience", "patience", "early-stopping patience");
    bind<double>(train_cmd, o, "--class-threshold", "class_threshold", "BASAL if prob >= threshold");

    auto* eval_cmd = app.add_subcommand("evaluate", "zero-shot evaluation of a checkpoint");
    bind_common(eval_cmd, o);
    bind<std::string>(eval_cmd, o, "--checkpoint", "checkpoint", "model checkpoint");
    bind<std::string>(eval_cmd, o, "--manifest", "manifest", "slide manifest");
    bind<std::string>(eval_cmd, o, "--labels", "labels", "labels.tsv from `label`");
    bind<double>(eval_cmd, o, "--class-threshold", "class_threshold", "BASAL if prob >= threshold");
    bind<double>(eval_cmd, o, "--confidence-lo", "confidence_lo", "high-confidence lower bound");
    bind<double>(eval_cmd, o, "--confidence-hi", "confidence_hi", "high-confidence upper bound");

    auto* surv_cmd = app.add_subcommand("survival", "Kaplan-Meier and log-rank by subtype");
    bind_common(surv_cmd, o);
    bind<std::string>(surv_cmd, o, "--clinical", "clinical", "clinical.csv");
    bind<std::string>(surv_cmd, o, "--labels", "labels", "labels.tsv from `label`");
    bind<std::string>(surv_cmd, o, "--predictions", "predictions", "predictions.tsv from `evaluate` or `train`");
    bind<std::string>(surv_cmd, o, "--censoring", "censoring", "standard | paper_replica | both");
    bind<double>(surv_cmd, o, "--class-threshold", "class_threshold", "BASAL if prob >= threshold");

    auto* att_cmd = app.add_subcommand("attention", "export MIL attention for one slide");
    bind_common(att_cmd, o);
    bind<std::string>(att_cmd, o, "--checkpoint", "checkpoint", "model checkpoint");
    bind<std::string>(att_cmd, o, "--slide", "slide", "slide bundle directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig c = resolve(o);
        if (synth_cmd->parsed()) {
            spec.patch_dim = c.patch_dim;
            spec.cell_dim = c.d_cell;
            spec.format = format == "packed" ? BundleFormat::Packed : BundleFormat::Tsv;
            const fs::path dir = data_dir(o);
            const SynthGeneSets sets{read_gmt(dir / "moffitt_classical.gmt").front(),
                                     read_gmt(dir / "moffitt_basal.gmt").front(), read_gmt(dir / "ddr6.gmt").front()};
            cmd_synth(spec, sets, c);
            std::cout << "synth: wrote cohort to " << c.out_dir << "\n";
        } else if (label_cmd->parsed()) {
            default_gene_sets(c, data_dir(o));
            const auto s = cmd_label(c);
            std::cout << "label: BASAL " << s.n_basal << ", CLASSICAL " << s.n_classical << ", INTERMEDIATE "
                      << s.n_intermediate << ", AMBIGUOUS " << s.n_ambiguous << "\n";
        } else if (train_cmd->parsed()) {
            const auto s = cmd_train(c);
            const auto& auc = s.metrics["aggregate"]["auc"];
            std::cout << "train: AUC " << auc["mean"].get<double>() << " +/- " << auc["sd"].get<double>()
                      << ", best fold " << s.best_fold << "\n";
        } else if (eval_cmd->parsed()) {
            const auto j = cmd_evaluate(c);
            std::cout << "evaluate: AUC " << j["report"]["auc"] << ", accuracy " << j["report"]["accuracy"] << "\n";
        } else if (surv_cmd->parsed()) {
            const auto j = cmd_survival(c);
            for (const auto& a : j["analyses"]) {
                std::cout << "survival: " << a["source"].get<std::string>() << "/" << a["subset"].get<std::string>()
                          << "/" << a["mode"].get<std::string>() << " chi2 " << a["chi2"] << " p " << a["p"] << "\n";
            }
        } else if (att_cmd->parsed()) {
            cmd_attention(c);
            std::cout << "attention: wrote " << (fs::path(c.out_dir) / "attention.tsv").string() << "\n";
        }
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    } catch (const DegenerateError& e) {
        std::cerr << "degenerate statistics: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
