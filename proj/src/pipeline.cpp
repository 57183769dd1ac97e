#include "histosub/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <thread>

#include "histosub/error.hpp"
#include "histosub/evaluation.hpp"
#include "histosub/expression.hpp"
#include "histosub/rng.hpp"
#include "histosub/slide_io.hpp"
#include "histosub/subtype.hpp"
#include "histosub/train.hpp"
#include "histosub/tsv.hpp"

namespace histosub {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
    if (k_folds < 2) throw InputError("k_folds must be >= 2");
    if (threads < 1) throw InputError("threads must be >= 1");
    if (patch_dim < 1 || d_cell < 1 || att_dim < 1) throw InputError("model dimensions must be positive");
    if (!(lr > 0.0) || weight_decay < 0.0) throw InputError("lr must be positive and weight_decay non-negative");
    if (max_epochs < 1 || patience < 0) throw InputError("max_epochs >= 1 and patience >= 0 required");
    if (ssgsea_alpha < 0.0) throw InputError("ssgsea_alpha must be non-negative");
    if (!(z_threshold > 0.0)) throw InputError("z_threshold must be positive");
    if (gata6_lower > gata6_upper || gata6_lower < 0.0) throw InputError("GATA6 cutoffs must satisfy 0 <= lower <= upper");
    if (!(class_threshold > 0.0 && class_threshold < 1.0)) throw InputError("class_threshold must lie in (0,1)");
    if (confidence_lo < 0.0 || confidence_hi > 1.0 || confidence_lo > confidence_hi) {
        throw InputError("confidence band must satisfy 0 <= lo <= hi <= 1");
    }
    if (censoring != "standard" && censoring != "paper_replica" && censoring != "both") {
        throw InputError("censoring must be standard, paper_replica or both");
    }
    if (expression_mode != "tpm" && expression_mode != "counts") throw InputError("expression_mode must be tpm or counts");
    if (gene_collision != "sum" && gene_collision != "max" && gene_collision != "error") {
        throw InputError("gene_collision must be sum, max or error");
    }
}

json to_json(const RunConfig& c) {
    return json{
        {"seed", c.seed},
        {"k_folds", c.k_folds},
        {"threads", c.threads},
        {"mode", to_string(c.mode)},
        {"patch_dim", c.patch_dim},
        {"d_cell", c.d_cell},
        {"att_dim", c.att_dim},
        {"lambda_mode", c.lambda_mode == LambdaMode::Learnable ? "learnable" : "fixed_unit"},
        {"pos_enc", c.pos_enc},
        {"lr", c.lr},
        {"weight_decay", c.weight_decay},
        {"max_epochs", c.max_epochs},
        {"patience", c.patience},
        {"ssgsea_alpha", c.ssgsea_alpha},
        {"z_threshold", c.z_threshold},
        {"gata6_mode", c.gata6_mode == Gata6CutoffMode::Fixed ? "fixed" : "empirical"},
        {"gata6_lower", c.gata6_lower},
        {"gata6_upper", c.gata6_upper},
        {"ddr_log", c.ddr_log},
        {"zscore_by_cohort", c.zscore_by_cohort},
        {"expression_mode", c.expression_mode},
        {"gene_collision", c.gene_collision},
        {"drop_unmapped", c.drop_unmapped},
        {"class_threshold", c.class_threshold},
        {"confidence_lo", c.confidence_lo},
        {"confidence_hi", c.confidence_hi},
        {"censoring", c.censoring},
        {"expression", c.expression},
        {"gene_lengths", c.gene_lengths},
        {"gene_map", c.gene_map},
        {"classical_gmt", c.classical_gmt},
        {"basal_gmt", c.basal_gmt},
        {"ddr_gmt", c.ddr_gmt},
        {"manifest", c.manifest},
        {"labels", c.labels},
        {"checkpoint", c.checkpoint},
        {"clinical", c.clinical},
        {"predictions", c.predictions},
        {"slide", c.slide},
        {"out_dir", c.out_dir},
    };
}

void apply_json(RunConfig& c, const json& j) {
    if (!j.is_object()) throw InputError("config must be a flat JSON object");
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "k_folds") c.k_folds = v.get<int>();
            else if (key == "threads") c.threads = v.get<int>();
            else if (key == "mode") c.mode = parse_model_mode(v.get<std::string>());
            else if (key == "patch_dim") c.patch_dim = v.get<int>();
            else if (key == "d_cell") c.d_cell = v.get<int>();
            else if (key == "att_dim") c.att_dim = v.get<int>();
            else if (key == "lambda_mode") {
                const auto s = v.get<std::string>();
                if (s != "learnable" && s != "fixed_unit") throw InputError("lambda_mode must be learnable or fixed_unit");
                c.lambda_mode = s == "learnable" ? LambdaMode::Learnable : LambdaMode::FixedUnit;
            }
            else if (key == "pos_enc") c.pos_enc = v.get<bool>();
            else if (key == "lr") c.lr = v.get<double>();
            else if (key == "weight_decay") c.weight_decay = v.get<double>();
            else if (key == "max_epochs") c.max_epochs = v.get<int>();
            else if (key == "patience") c.patience = v.get<int>();
            else if (key == "ssgsea_alpha") c.ssgsea_alpha = v.get<double>();
            else if (key == "z_threshold") c.z_threshold = v.get<double>();
            else if (key == "gata6_mode") {
                const auto s = v.get<std::string>();
                if (s != "fixed" && s != "empirical") throw InputError("gata6_mode must be fixed or empirical");
                c.gata6_mode = s == "fixed" ? Gata6CutoffMode::Fixed : Gata6CutoffMode::Empirical;
            }
            else if (key == "gata6_lower") c.gata6_lower = v.get<double>();
            else if (key == "gata6_upper") c.gata6_upper = v.get<double>();
            else if (key == "ddr_log") c.ddr_log = v.get<bool>();
            else if (key == "zscore_by_cohort") c.zscore_by_cohort = v.get<bool>();
            else if (key == "expression_mode") c.expression_mode = v.get<std::string>();
            else if (key == "gene_collision") c.gene_collision = v.get<std::string>();
            else if (key == "drop_unmapped") c.drop_unmapped = v.get<bool>();
            else if (key == "class_threshold") c.class_threshold = v.get<double>();
            else if (key == "confidence_lo") c.confidence_lo = v.get<double>();
            else if (key == "confidence_hi") c.confidence_hi = v.get<double>();
            else if (key == "censoring") c.censoring = v.get<std::string>();
            else if (key == "expression") c.expression = v.get<std::string>();
            else if (key == "gene_lengths") c.gene_lengths = v.get<std::string>();
            else if (key == "gene_map") c.gene_map = v.get<std::string>();
            else if (key == "classical_gmt") c.classical_gmt = v.get<std::string>();
            else if (key == "basal_gmt") c.basal_gmt = v.get<std::string>();
            else if (key == "ddr_gmt") c.ddr_gmt = v.get<std::string>();
            else if (key == "manifest") c.manifest = v.get<std::string>();
            else if (key == "labels") c.labels = v.get<std::string>();
            else if (key == "checkpoint") c.checkpoint = v.get<std::string>();
            else if (key == "clinical") c.clinical = v.get<std::string>();
            else if (key == "predictions") c.predictions = v.get<std::string>();
            else if (key == "slide") c.slide = v.get<std::string>();
            else if (key == "out_dir") c.out_dir = v.get<std::string>();
            else throw InputError("unknown config key '" + key + "'");
        } catch (const json::exception& e) {
            throw InputError("config key '" + key + "': " + e.what());
        }
    }
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw InputError("config " + path.string() + ": " + e.what());
    }
    RunConfig c;
    apply_json(c, j);
    return c;
}

ModelDims model_dims(const RunConfig& c) {
    ModelDims d;
    d.patch_dim = c.patch_dim;
    d.cell_dim = c.d_cell;
    d.att_dim = c.att_dim;
    d.mode = c.mode;
    d.lambda_mode = c.lambda_mode;
    d.pos_enc = c.pos_enc;
    return d;
}

namespace {

void require_path(const std::string& p, const char* what) {
    if (p.empty()) throw InputError(std::string("missing required input: ") + what);
}

void write_json(const json& j, const fs::path& path) { tsv::write_file(path, j.dump(2) + "\n"); }

void echo_config(const RunConfig& c) { write_json(to_json(c), fs::path(c.out_dir) / "run_config.json"); }

json mean_sd_json(const MeanSd& m) { return {{"mean", m.mean}, {"sd", m.sd}}; }

json report_json(const MetricsReport& r) {
    return {{"auc", r.auc},
            {"accuracy", r.accuracy},
            {"balanced_accuracy", r.balanced_accuracy},
            {"sensitivity", r.sensitivity},
            {"specificity", r.specificity},
            {"n", r.n}};
}

json thresholds_json(const RunConfig& c) {
    return {{"classification", c.class_threshold},
            {"confidence_lo", c.confidence_lo},
            {"confidence_hi", c.confidence_hi},
            {"z", c.z_threshold}};
}

/// Truth per manifest slide: labels.tsv BASAL/CLASSICAL when given, else the manifest column.
std::vector<std::optional<int>> resolve_truth(const std::vector<ManifestEntry>& manifest, const std::string& labels_path) {
    std::vector<std::optional<int>> out;
    if (labels_path.empty()) {
        for (const auto& e : manifest) out.push_back(e.label);
        return out;
    }
    std::map<std::string, Subtype> by_id;
    for (const auto& r : read_labels_tsv(labels_path)) by_id[r.sample_id] = r.label;
    for (const auto& e : manifest) {
        auto it = by_id.find(e.slide_id);
        if (it == by_id.end() || (it->second != Subtype::Basal && it->second != Subtype::Classical)) {
            out.push_back(std::nullopt);
        } else {
            out.push_back(it->second == Subtype::Basal ? 1 : 0);
        }
    }
    return out;
}

std::string truth_name(int y) { return y == 1 ? "BASAL" : "CLASSICAL"; }

GeneSet first_set(const std::string& path) { return read_gmt(path).front(); }

}  // namespace

void cmd_synth(const SynthSpec& spec, const SynthGeneSets& sets, const RunConfig& config) {
    config.validate();
    synth(spec, sets, config.seed, config.out_dir);
    json j = to_json(config);
    j["synth"] = {{"n_slides", spec.n_slides},
                  {"patches_min", spec.patches_min},
                  {"patches_max", spec.patches_max},
                  {"cells_min", spec.cells_min},
                  {"cells_max", spec.cells_max},
                  {"delta", spec.delta},
                  {"expression_cohort", spec.expression_cohort},
                  {"classical_fraction", spec.classical_fraction},
                  {"classical_effect", spec.classical_effect},
                  {"basal_effect", spec.basal_effect},
                  {"hazard_ratio", spec.hazard_ratio},
                  {"censor_fraction", spec.censor_fraction},
                  {"metastatic_fraction", spec.metastatic_fraction},
                  {"patch_dim", spec.patch_dim},
                  {"cell_dim", spec.cell_dim},
                  {"format", spec.format == BundleFormat::Tsv ? "tsv" : "packed"}};
    write_json(j, fs::path(config.out_dir) / "run_config.json");
}

LabelSummary cmd_label(const RunConfig& config) {
    config.validate();
    require_path(config.expression, "expression matrix");
    require_path(config.classical_gmt, "classical gene set");
    require_path(config.basal_gmt, "basal gene set");

    ExpressionMatrix m = [&] {
        if (config.expression_mode == "counts") {
            require_path(config.gene_lengths, "gene lengths (counts mode)");
            return read_expression_tsv(config.expression, ExpressionMode::Counts);
        }
        return read_expression_tsv(config.expression, ExpressionMode::Tpm);
    }();
    if (!config.gene_map.empty()) {
        const auto policy = config.gene_collision == "sum"   ? CollisionPolicy::Sum
                            : config.gene_collision == "max" ? CollisionPolicy::Max
                                                             : CollisionPolicy::Error;
        m = map_gene_ids(m, read_gene_id_map(config.gene_map), policy, config.drop_unmapped);
    }
    if (m.mode() == ExpressionMode::Counts) m = counts_to_tpm(m, read_gene_lengths(config.gene_lengths));

    const GeneSet classical = first_set(config.classical_gmt);
    const GeneSet basal = first_set(config.basal_gmt);
    const SsgseaParams params{config.ssgsea_alpha};
    const auto n = static_cast<std::size_t>(m.n_samples());

    std::vector<SubtypeRecord> records(n);
    std::vector<double> scores(n);
    for (std::size_t s = 0; s < n; ++s) {
        const Eigen::VectorXd col = m.values().col(static_cast<Eigen::Index>(s));
        const auto sc = subtype_score(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())),
                                      m.gene_ids(), classical, basal, params);
        records[s].sample_id = m.sample_ids()[s];
        records[s].es_classical = sc.es_classical;
        records[s].es_basal = sc.es_basal;
        records[s].score = sc.score;
        scores[s] = sc.score;
    }

    std::vector<ZLabel> z;
    if (config.zscore_by_cohort) {
        require_path(config.manifest, "manifest (cohort keys for per-cohort z-scoring)");
        std::map<std::string, std::string> cohort;
        for (const auto& e : read_manifest(config.manifest)) cohort[e.slide_id] = e.cohort;
        std::vector<std::string> groups;
        for (const auto& id : m.sample_ids()) {
            auto it = cohort.find(id);
            if (it == cohort.end()) throw InputError("sample '" + id + "' has no cohort in the manifest");
            groups.push_back(it->second);
        }
        z = assign_labels_grouped(scores, groups, config.z_threshold);
    } else {
        z = assign_labels(scores, config.z_threshold);
    }
    for (std::size_t s = 0; s < n; ++s) {
        records[s].zscore = z[s].zscore;
        records[s].label = z[s].label;
    }

    std::vector<double> gata6_values;
    if (auto g = m.gene_index("GATA6")) {
        for (std::size_t s = 0; s < n; ++s) {
            records[s].gata6_tpm = m.values()(*g, static_cast<Eigen::Index>(s));
            gata6_values.push_back(*records[s].gata6_tpm);
        }
    }
    TertileCutoffs cutoffs{config.gata6_lower, config.gata6_upper};
    if (config.gata6_mode == Gata6CutoffMode::Empirical) {
        if (gata6_values.empty()) throw InputError("empirical GATA6 tertiles requested but GATA6 is not in the matrix");
        cutoffs = gata6_tertiles(gata6_values);
    }
    records = refine_with_gata6(std::move(records), cutoffs);

    if (!config.ddr_gmt.empty()) {
        const auto ddr = ddr_score(m, first_set(config.ddr_gmt), config.ddr_log);
        for (std::size_t s = 0; s < n; ++s) records[s].ddr_score = ddr[s];
    }

    LabelSummary summary;
    for (const auto& r : records) {
        switch (r.label) {
            case Subtype::Basal: ++summary.n_basal; break;
            case Subtype::Classical: ++summary.n_classical; break;
            case Subtype::Intermediate: ++summary.n_intermediate; break;
            case Subtype::Ambiguous: ++summary.n_ambiguous; break;
        }
    }
    const std::size_t hc = summary.n_basal + summary.n_classical;
    summary.classical_fraction = hc ? static_cast<double>(summary.n_classical) / static_cast<double>(hc) : 0.0;

    const fs::path out(config.out_dir);
    write_labels_tsv(records, out / "labels.tsv");
    write_json({{"counts",
                 {{"BASAL", summary.n_basal},
                  {"CLASSICAL", summary.n_classical},
                  {"INTERMEDIATE", summary.n_intermediate},
                  {"AMBIGUOUS", summary.n_ambiguous}}},
                {"n_samples", n},
                {"classical_fraction", summary.classical_fraction},
                {"gata6_cutoffs", {{"lower", cutoffs.lower}, {"upper", cutoffs.upper}}},
                {"config", to_json(config)}},
               out / "label_summary.json");
    echo_config(config);
    return summary;
}

TrainSummary cmd_train(const RunConfig& config) {
    config.validate();
    require_path(config.manifest, "manifest");
    const auto manifest = read_manifest(config.manifest);
    const auto truth = resolve_truth(manifest, config.labels);

    // Only BASAL/CLASSICAL slides are ever opened.
    std::vector<ManifestEntry> eligible;
    std::vector<int> y;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (!truth[i]) continue;
        eligible.push_back(manifest[i]);
        eligible.back().label = truth[i];
        y.push_back(*truth[i]);
    }
    const auto slides = load_slides(eligible);
    const auto folds = stratified_kfold(y, config.k_folds, derive_seed(config.seed, "split"));
    const auto k = folds.folds.size();

    TrainConfig base;
    base.dims = model_dims(config);
    base.optimizer.lr = config.lr;
    base.optimizer.weight_decay = config.weight_decay;
    base.max_epochs = config.max_epochs;
    base.patience = config.patience;

    std::vector<std::optional<TrainResult>> results(k);
    std::vector<std::exception_ptr> errors(k);
    std::vector<std::uint64_t> fold_seeds(k);
    std::vector<std::vector<std::size_t>> train_idx(k);
    for (std::size_t f = 0; f < k; ++f) {
        fold_seeds[f] = derive_seed(config.seed, "fold", f);
        for (std::size_t g = 0; g < k; ++g) {
            if (g != f) train_idx[f].insert(train_idx[f].end(), folds.folds[g].begin(), folds.folds[g].end());
        }
        std::sort(train_idx[f].begin(), train_idx[f].end());
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t f = next++; f < k; f = next++) {
            try {
                TrainConfig tc = base;
                tc.seed = fold_seeds[f];
                results[f] = train(slides, train_idx[f], folds.folds[f], tc);
            } catch (...) {
                errors[f] = std::current_exception();
            }
        }
    };
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(config.threads), k);
    if (n_workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    const fs::path out(config.out_dir);
    json folds_json = json::array();
    std::vector<MetricsReport> reports;
    std::string audit = "sample_id\tlabel\tfold\n";
    std::string oof = "sample_id\ttruth\tprob\tfold\n";
    std::vector<std::pair<std::size_t, std::string>> audit_rows;
    int best_fold = 0;
    for (std::size_t f = 0; f < k; ++f) {
        const auto& r = *results[f];
        const auto preds = predict(slides, folds.folds[f], r.best);
        const auto report = confusion_metrics(preds, config.class_threshold);
        reports.push_back(report);
        save_checkpoint(r.best, fold_seeds[f], out / ("fold_" + std::to_string(f) + ".ckpt"));
        json history = json::array();
        for (const auto& h : r.history) {
            history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_auc", h.val_auc}});
        }
        folds_json.push_back({{"fold", f},
                              {"seed", fold_seeds[f]},
                              {"n_train", train_idx[f].size()},
                              {"n_val", folds.folds[f].size()},
                              {"best_epoch", r.best_epoch},
                              {"best_val_auc", r.best_auc},
                              {"report", report_json(report)},
                              {"history", history}});
        if (r.best_auc > results[static_cast<std::size_t>(best_fold)]->best_auc) best_fold = static_cast<int>(f);
        for (std::size_t j = 0; j < preds.size(); ++j) {
            const auto idx = folds.folds[f][j];
            audit_rows.emplace_back(idx, slides[idx].slide_id + "\t" + truth_name(y[idx]) + "\t" + std::to_string(f) + "\n");
            oof += preds[j].sample_id + "\t" + std::to_string(preds[j].truth) + "\t" + tsv::format_double(preds[j].prob) +
                   "\t" + std::to_string(f) + "\n";
        }
    }
    std::sort(audit_rows.begin(), audit_rows.end());
    for (const auto& [_, row] : audit_rows) audit += row;
    const auto& best = *results[static_cast<std::size_t>(best_fold)];
    save_checkpoint(best.best, fold_seeds[static_cast<std::size_t>(best_fold)], out / "best.ckpt");

    const auto agg = aggregate_folds(reports);
    json metrics = {{"mode", to_string(config.mode)},
                    {"seed", config.seed},
                    {"k_folds", config.k_folds},
                    {"thresholds", thresholds_json(config)},
                    {"n_slides", slides.size()},
                    {"folds", folds_json},
                    {"aggregate",
                     {{"auc", mean_sd_json(agg.auc)},
                      {"accuracy", mean_sd_json(agg.accuracy)},
                      {"balanced_accuracy", mean_sd_json(agg.balanced_accuracy)},
                      {"sensitivity", mean_sd_json(agg.sensitivity)},
                      {"specificity", mean_sd_json(agg.specificity)}}},
                    {"best_fold", best_fold},
                    {"config", to_json(config)}};
    write_json(metrics, out / "metrics.json");
    tsv::write_file(out / "train_audit.tsv", audit);
    tsv::write_file(out / "predictions.tsv", oof);
    echo_config(config);
    return {metrics, best_fold};
}

json cmd_evaluate(const RunConfig& config) {
    config.validate();
    require_path(config.checkpoint, "checkpoint");
    require_path(config.manifest, "manifest");
    const auto hash_before = file_hash(config.checkpoint);
    const auto ckpt = load_checkpoint(config.checkpoint);
    const auto manifest = read_manifest(config.manifest);
    const auto truth = resolve_truth(manifest, config.labels);
    const auto slides = load_slides(manifest);

    std::string predictions = "sample_id\tprob\tpred\n";
    std::vector<PredictionRecord> records;
    for (std::size_t i = 0; i < slides.size(); ++i) {
        const double p = forward(slides[i], ckpt.params).prob;
        predictions += slides[i].slide_id + "\t" + tsv::format_double(p) + "\t" +
                       truth_name(p >= config.class_threshold ? 1 : 0) + "\n";
        if (truth[i]) records.push_back({slides[i].slide_id, *truth[i], p});
    }
    if (records.empty()) throw DegenerateError("no labeled slides to evaluate");

    const auto report = confusion_metrics(records, config.class_threshold);
    const auto high = filter_high_confidence(records, config.confidence_lo, config.confidence_hi);
    const auto margins = decision_margins(records, config.class_threshold);

    std::string concordance = "sample_id\ttruth\tprob\tpred\tcorrect\tmargin\tconfidence_band\n";
    std::vector<double> correct_m;
    std::vector<double> wrong_m;
    std::size_t errors = 0;
    std::size_t confident_errors = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const int pred = r.prob >= config.class_threshold ? 1 : 0;
        const bool ok = pred == r.truth;
        const bool confident = r.prob <= config.confidence_lo || r.prob >= config.confidence_hi;
        (ok ? correct_m : wrong_m).push_back(margins.margins[i]);
        if (!ok) {
            ++errors;
            confident_errors += confident;
        }
        concordance += r.sample_id + "\t" + truth_name(r.truth) + "\t" + tsv::format_double(r.prob) + "\t" +
                       truth_name(pred) + "\t" + (ok ? "1" : "0") + "\t" + tsv::format_double(margins.margins[i]) +
                       "\t" + (confident ? "high" : "low") + "\n";
    }

    json result = {{"mode", to_string(ckpt.params.dims().mode)},
                   {"seed", config.seed},
                   {"checkpoint_seed", ckpt.seed},
                   {"thresholds", thresholds_json(config)},
                   {"report", report_json(report)},
                   {"n_errors", errors},
                   {"n_high_confidence_errors", confident_errors},
                   {"high_confidence", {{"fraction_retained", high.fraction_retained}, {"n", high.subset.size()}}},
                   {"margin_median_correct", margins.median_correct ? json(*margins.median_correct) : json(nullptr)},
                   {"margin_median_incorrect", margins.median_incorrect ? json(*margins.median_incorrect) : json(nullptr)}};
    if (!high.subset.empty()) result["high_confidence"]["report"] = report_json(confusion_metrics(high.subset, config.class_threshold));
    if (!correct_m.empty() && !wrong_m.empty()) {
        const auto mw = mann_whitney_u(correct_m, wrong_m);
        result["margin_mann_whitney"] = {{"u", mw.u}, {"z", mw.z}, {"p", mw.p}, {"small_sample", mw.small_sample}};
    }
    const auto hash_after = file_hash(config.checkpoint);
    if (hash_after != hash_before) throw IoError("checkpoint changed during evaluation: " + config.checkpoint);
    result["checkpoint_hash"] = hash_before;
    result["config"] = to_json(config);

    const fs::path out(config.out_dir);
    write_json(result, out / "metrics.json");
    tsv::write_file(out / "concordance.tsv", concordance);
    tsv::write_file(out / "predictions.tsv", predictions);
    echo_config(config);
    return result;
}

namespace {

std::map<std::string, double> read_prediction_probs(const fs::path& path) {
    const auto lines = tsv::read_lines(path);
    if (lines.empty()) throw InputError("empty predictions file " + path.string());
    const auto header = tsv::split(lines[0]);
    std::optional<std::size_t> id_col;
    std::optional<std::size_t> prob_col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == "sample_id") id_col = i;
        if (header[i] == "prob") prob_col = i;
    }
    if (!id_col || !prob_col) throw InputError("predictions file needs sample_id and prob columns: " + path.string());
    std::map<std::string, double> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto f = tsv::split(lines[i]);
        if (f.size() != header.size()) throw InputError(path.string() + ":" + std::to_string(i + 1) + ": wrong field count");
        out[std::string(f[*id_col])] = tsv::parse_double(f[*prob_col], path.string());
    }
    return out;
}

json median_json(const MedianSurvival& m) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json("not_reached"); };
    return {{"median", opt(m.median)}, {"ci_low", opt(m.ci_low)}, {"ci_high", opt(m.ci_high)}};
}

}  // namespace

json cmd_survival(const RunConfig& config) {
    config.validate();
    require_path(config.clinical, "clinical table");
    if (config.labels.empty() && config.predictions.empty()) throw InputError("survival needs labels and/or predictions");
    const auto clinical = read_clinical_csv(config.clinical);

    std::map<std::string, Subtype> rna;
    if (!config.labels.empty()) {
        for (const auto& r : read_labels_tsv(config.labels)) rna[r.sample_id] = r.label;
    }
    std::map<std::string, double> probs;
    if (!config.predictions.empty()) probs = read_prediction_probs(config.predictions);

    std::vector<CensoringMode> modes;
    if (config.censoring != "paper_replica") modes.push_back(CensoringMode::Standard);
    if (config.censoring != "standard") modes.push_back(CensoringMode::PaperReplica);

    struct Source {
        std::string name;
        std::function<std::optional<int>(const std::string&)> group;  // 1 basal, 0 classical
    };
    std::vector<Source> sources;
    auto high_conf = [&](const std::string& id) -> std::optional<int> {
        auto it = rna.find(id);
        if (it == rna.end()) return std::nullopt;
        if (it->second == Subtype::Basal) return 1;
        if (it->second == Subtype::Classical) return 0;
        return std::nullopt;
    };
    if (!rna.empty()) sources.push_back({"rnaseq", high_conf});
    if (!probs.empty()) {
        sources.push_back({"model", [&](const std::string& id) -> std::optional<int> {
                               // Same patients as the RNA-seq stratification when labels are supplied.
                               if (!rna.empty() && !high_conf(id)) return std::nullopt;
                               auto it = probs.find(id);
                               if (it == probs.end()) return std::nullopt;
                               return it->second >= config.class_threshold ? 1 : 0;
                           }});
    }

    const fs::path out(config.out_dir);
    json analyses = json::array();
    for (const auto& src : sources) {
        for (const std::string subset : {"metastatic", "all"}) {
            std::vector<SurvivalRecord> basal;
            std::vector<SurvivalRecord> classical;
            for (const auto& c : clinical) {
                if (subset == "metastatic" && c.disease_status != "metastatic") continue;
                const auto g = src.group(c.sample_id);
                if (!g) continue;
                SurvivalRecord r{c.sample_id, c.os_months, c.event, truth_name(*g)};
                (*g == 1 ? basal : classical).push_back(r);
            }
            if (basal.empty() || classical.empty()) {
                throw DegenerateError("survival stratification " + src.name + "/" + subset + " has an empty group");
            }
            for (auto mode : modes) {
                const std::string tag = src.name + "_" + subset + "_" + to_string(mode);
                const auto km_b = km_estimate(basal, mode);
                const auto km_c = km_estimate(classical, mode);
                write_km_tsv(km_b, out / ("km_" + tag + "_basal.tsv"));
                write_km_tsv(km_c, out / ("km_" + tag + "_classical.tsv"));
                const auto lr = logrank_test(basal, classical, mode);
                analyses.push_back({{"source", src.name},
                                    {"subset", subset},
                                    {"mode", to_string(mode)},
                                    {"n_basal", basal.size()},
                                    {"n_classical", classical.size()},
                                    {"chi2", lr.chi2},
                                    {"p", lr.p},
                                    {"medians",
                                     {{"basal", median_json(median_survival(km_b))},
                                      {"classical", median_json(median_survival(km_c))}}}});
            }
        }
    }
    json result = {{"analyses", analyses}, {"config", to_json(config)}};
    write_json(result, out / "logrank.json");
    echo_config(config);
    return result;
}

void cmd_attention(const RunConfig& config) {
    config.validate();
    require_path(config.checkpoint, "checkpoint");
    require_path(config.slide, "slide bundle directory");
    const auto ckpt = load_checkpoint(config.checkpoint);
    const fs::path dir(config.slide);
    const auto bag = read_slide_bundle(dir, dir.filename().string());
    std::string out = "gx\tgy\tweight\tmask_value\n";
    for (const auto& row : export_attention(bag, ckpt.params)) {
        out += std::to_string(row.gx) + "\t" + std::to_string(row.gy) + "\t" + tsv::format_double(row.weight) + "\t" +
               std::to_string(row.mask_value) + "\n";
    }
    tsv::write_file(fs::path(config.out_dir) / "attention.tsv", out);
    echo_config(config);
}

}  // namespace histosub
