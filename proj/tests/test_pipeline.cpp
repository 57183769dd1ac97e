#include <doctest.h>

#include <cstdlib>
#include <random>

#include <json.hpp>

#include "histosub/error.hpp"
#include "histosub/pipeline.hpp"
#include "histosub/slide_io.hpp"
#include "histosub/subtype.hpp"
#include "histosub/tsv.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace histosub;

namespace {

SynthGeneSets shipped_sets() {
    const fs::path dir = HISTOSUB_DATA_DIR;
    return {read_gmt(dir / "moffitt_classical.gmt").front(), read_gmt(dir / "moffitt_basal.gmt").front(),
            read_gmt(dir / "ddr6.gmt").front()};
}

RunConfig small_config(const fs::path& out) {
    RunConfig c;
    c.out_dir = out.string();
    c.patch_dim = 8;
    c.d_cell = 4;
    c.att_dim = 4;
    c.k_folds = 3;
    c.max_epochs = 3;
    c.patience = 1;
    c.lr = 1e-2;
    c.seed = 5;
    return c;
}

SynthSpec small_spec(int n = 24, double delta = 3.0) {
    SynthSpec s;
    s.n_slides = n;
    s.patches_min = 2;
    s.patches_max = 4;
    s.cells_max = 3;
    s.delta = delta;
    s.patch_dim = 8;
    s.cell_dim = 4;
    return s;
}

fs::path synth_cohort(const std::string& name, SynthSpec spec = small_spec()) {
    const auto dir = fixture::temp_dir(name);
    auto c = small_config(dir);
    cmd_synth(spec, shipped_sets(), c);
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + HISTOSUB_CLI + "\" " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Eigen::VectorXd as_float(Eigen::VectorXd v) {
    for (auto& x : v) x = static_cast<float>(x);
    return v;
}

SlideBag toy_slide(std::mt19937_64& rng) {
    SlideBag bag;
    bag.slide_id = "S";
    std::uniform_real_distribution<double> u(0.0, 511.0);
    for (int p = 0; p < 3; ++p) {
        PatchInstance pt;
        pt.gx = p;
        pt.gy = 2 * p;
        pt.embedding = as_float(fixture::gaussian(6, rng));
        bag.patches.push_back(pt);
        for (int c = 0; c < 2; ++c) {
            CellInstance cell;
            cell.x = p * 512.0 + std::floor(u(rng) * 4.0) / 4.0;
            cell.y = 2 * p * 512.0 + std::floor(u(rng) * 4.0) / 4.0;
            cell.cell_class = c;
            cell.embedding = as_float(fixture::gaussian(3, rng));
            bag.cells.push_back(cell);
        }
    }
    return bag;
}

}  // namespace

TEST_CASE("slide bundles") {
    std::mt19937_64 rng(31);
    const auto bag = toy_slide(rng);
    const auto dir = fixture::temp_dir("bundle");
    write_slide_bundle(bag, dir / "tsv", BundleFormat::Tsv);
    write_slide_bundle(bag, dir / "packed", BundleFormat::Packed);
    const auto a = read_slide_bundle(dir / "tsv", "S");
    const auto b = read_slide_bundle(dir / "packed", "S");
    for (const auto* r : {&a, &b}) {
        REQUIRE(r->patches.size() == 3);
        REQUIRE(r->cells.size() == 6);
        for (std::size_t p = 0; p < 3; ++p) {
            CHECK(r->patches[p].gx == bag.patches[p].gx);
            CHECK(r->patches[p].gy == bag.patches[p].gy);
            CHECK(r->patches[p].embedding == bag.patches[p].embedding);
        }
        for (std::size_t c = 0; c < 6; ++c) {
            CHECK(r->cells[c].x == bag.cells[c].x);
            CHECK(r->cells[c].embedding == bag.cells[c].embedding);
            CHECK(r->cells[c].cell_class == bag.cells[c].cell_class);
        }
    }
    CHECK_THROWS_AS(read_slide_bundle(dir / "nowhere", "S"), IoError);
}

TEST_CASE("manifest round trip") {
    const auto dir = fixture::temp_dir("manifest");
    std::vector<ManifestEntry> m{{"A", "slides/A", 1, "c1", "metastatic"}, {"B", "slides/B", std::nullopt, "c2", "resected"}};
    write_manifest(m, dir / "manifest.tsv");
    const auto back = read_manifest(dir / "manifest.tsv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].label == 1);
    CHECK(!back[1].label);
    CHECK(back[0].directory == dir / "slides/A");
    CHECK(back[1].cohort == "c2");
}

TEST_CASE("checkpoint round trip") {
    ModelDims dims;
    dims.patch_dim = 6;
    dims.cell_dim = 3;
    dims.att_dim = 4;
    dims.pos_enc = true;
    ModelParams p(dims);
    std::mt19937_64 rng(33);
    for (auto& v : p.data()) v = static_cast<float>(std::normal_distribution<double>(0.0, 1.0)(rng));
    const auto dir = fixture::temp_dir("ckpt");
    save_checkpoint(p, 77, dir / "m.ckpt");
    const auto c = load_checkpoint(dir / "m.ckpt");
    CHECK(c.seed == 77);
    CHECK(c.params.dims().pos_enc);
    CHECK(c.params.dims().patch_dim == 6);
    REQUIRE(c.params.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(c.params.data()[i] == p.data()[i]);
    std::ofstream(dir / "junk.ckpt") << "nope";
    CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), InputError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
    CHECK(file_hash(dir / "m.ckpt") == file_hash(dir / "m.ckpt"));
    CHECK(file_hash(dir / "m.ckpt") != file_hash(dir / "junk.ckpt"));
}

TEST_CASE("run config JSON") {
    RunConfig c;
    apply_json(c, nlohmann::json{{"seed", 9}, {"mode", "attmil"}, {"lr", 0.1}, {"pos_enc", true}});
    CHECK(c.seed == 9);
    CHECK(c.mode == ModelMode::AttMil);
    CHECK(c.pos_enc);
    RunConfig d;
    apply_json(d, to_json(c));
    CHECK(to_json(d) == to_json(c));
    CHECK_THROWS_AS(apply_json(c, nlohmann::json{{"learning_rate", 0.1}}), InputError);
    CHECK_THROWS_AS(apply_json(c, nlohmann::json{{"k_folds", "five"}}), InputError);
    CHECK_THROWS_AS(apply_json(c, nlohmann::json{{"mode", "cnn"}}), InputError);
    CHECK_THROWS_AS(load_config("/nonexistent/config.json"), IoError);
    RunConfig bad;
    bad.k_folds = 1;
    CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("synth and label") {
    const auto dir = synth_cohort("label", small_spec(60));
    auto c = small_config(dir / "label");
    c.expression = (dir / "expression.tsv").string();
    c.classical_gmt = (dir / "moffitt_classical.gmt").string();
    c.basal_gmt = (dir / "moffitt_basal.gmt").string();
    c.ddr_gmt = (dir / "ddr6.gmt").string();
    const auto s = cmd_label(c);
    CHECK(s.n_basal + s.n_classical + s.n_intermediate + s.n_ambiguous == 60);
    CHECK(s.n_ambiguous == 0);
    CHECK(std::abs(s.classical_fraction - 0.65) <= 0.1);

    // Every confident label agrees with the planted class.
    std::map<std::string, int> planted;
    for (const auto& e : read_manifest(dir / "manifest.tsv")) planted[e.slide_id] = *e.label;
    for (const auto& r : read_labels_tsv(dir / "label" / "labels.tsv")) {
        if (r.label == Subtype::Basal) CHECK(planted[r.sample_id] == 1);
        if (r.label == Subtype::Classical) CHECK(planted[r.sample_id] == 0);
        REQUIRE(r.ddr_score);
    }

    auto counts = c;
    counts.out_dir = (dir / "label_counts").string();
    counts.expression = (dir / "counts.tsv").string();
    counts.expression_mode = "counts";
    counts.gene_lengths = (dir / "gene_lengths.tsv").string();
    const auto sc = cmd_label(counts);
    CHECK(sc.n_basal == s.n_basal);
    CHECK(sc.n_classical == s.n_classical);

    const auto summary = nlohmann::json::parse(oracle::slurp(dir / "label" / "label_summary.json"));
    CHECK(summary["n_samples"] == 60);
    CHECK(summary["config"]["ssgsea_alpha"] == 0.25);
    CHECK(fs::exists(dir / "label" / "run_config.json"));

    counts.gene_lengths.clear();
    CHECK_THROWS_AS(cmd_label(counts), InputError);
}

TEST_CASE("label rejects a cohort of identical samples") {
    const auto dir = fixture::temp_dir("label_same");
    std::string expr = "gene\tS1\tS2\n";
    for (const auto& g : shipped_sets().classical.genes) expr += g + "\t5\t5\n";
    for (const auto& g : shipped_sets().basal.genes) expr += g + "\t7\t7\n";
    expr += "OTHER\t100\t100\n";
    tsv::write_file(dir / "e.tsv", expr);
    auto c = small_config(dir / "out");
    c.expression = (dir / "e.tsv").string();
    c.classical_gmt = std::string(HISTOSUB_DATA_DIR) + "/moffitt_classical.gmt";
    c.basal_gmt = std::string(HISTOSUB_DATA_DIR) + "/moffitt_basal.gmt";
    CHECK_THROWS_AS(cmd_label(c), DegenerateError);
}

TEST_CASE("train, evaluate, survival and attention") {
    const auto dir = synth_cohort("e2e", small_spec(30));
    auto lc = small_config(dir / "label");
    lc.expression = (dir / "expression.tsv").string();
    lc.classical_gmt = (dir / "moffitt_classical.gmt").string();
    lc.basal_gmt = (dir / "moffitt_basal.gmt").string();
    const auto ls = cmd_label(lc);
    const auto labels = dir / "label" / "labels.tsv";

    auto tc = small_config(dir / "train");
    tc.manifest = (dir / "manifest.tsv").string();
    tc.labels = labels.string();
    const auto t = cmd_train(tc);
    CHECK(t.metrics["n_slides"] == ls.n_basal + ls.n_classical);
    CHECK(t.metrics["folds"].size() == 3);
    for (const char* f : {"metrics.json", "train_audit.tsv", "predictions.tsv", "best.ckpt", "fold_0.ckpt", "run_config.json"}) {
        CHECK(fs::exists(dir / "train" / f));
    }

    // Only BASAL/CLASSICAL labels reach training.
    std::map<std::string, Subtype> label_of;
    for (const auto& r : read_labels_tsv(labels)) label_of[r.sample_id] = r.label;
    const auto audit = tsv::read_lines(dir / "train" / "train_audit.tsv");
    CHECK(audit.size() == 1 + ls.n_basal + ls.n_classical);
    for (std::size_t i = 1; i < audit.size(); ++i) {
        if (audit[i].empty()) continue;
        const auto f = tsv::split(audit[i]);
        const auto l = label_of.at(std::string(f[0]));
        CHECK((l == Subtype::Basal || l == Subtype::Classical));
        CHECK(std::string(f[1]) == to_string(l));
    }

    auto ec = small_config(dir / "eval");
    ec.checkpoint = (dir / "train" / "best.ckpt").string();
    ec.manifest = tc.manifest;
    ec.labels = tc.labels;
    const auto before = file_hash(ec.checkpoint);
    const auto e = cmd_evaluate(ec);
    CHECK(file_hash(ec.checkpoint) == before);
    CHECK(e["checkpoint_hash"] == before);
    CHECK(e["report"]["n"] == ls.n_basal + ls.n_classical);
    CHECK(tsv::read_lines(dir / "eval" / "predictions.tsv").size() >= 31);

    auto sc = small_config(dir / "surv");
    sc.clinical = (dir / "clinical.csv").string();
    sc.labels = tc.labels;
    sc.predictions = (dir / "eval" / "predictions.tsv").string();
    sc.censoring = "both";
    const auto s = cmd_survival(sc);
    CHECK(s["analyses"].size() == 8);
    CHECK(fs::exists(dir / "surv" / "km_rnaseq_all_standard_basal.tsv"));
    CHECK(fs::exists(dir / "surv" / "km_model_metastatic_paper_replica_classical.tsv"));

    auto ac = small_config(dir / "att");
    ac.checkpoint = ec.checkpoint;
    ac.slide = (dir / "slides" / read_manifest(dir / "manifest.tsv")[0].slide_id).string();
    cmd_attention(ac);
    const auto rows = tsv::read_lines(dir / "att" / "attention.tsv");
    CHECK(rows[0] == "gx\tgy\tweight\tmask_value");
    double total = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (!rows[i].empty()) total += tsv::parse_double(tsv::split(rows[i])[2], "attention");
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
}

TEST_CASE("evaluate on perfect and flipped predictions") {
    const auto dir = fixture::temp_dir("eval_fixed");
    ModelDims dims;
    dims.mode = ModelMode::AttMil;
    dims.patch_dim = 2;
    dims.cell_dim = 2;
    dims.att_dim = 2;
    ModelParams p(dims);
    p.head_w()(0) = 4.0;  // logit = 4 * mean first coordinate
    save_checkpoint(p, 0, dir / "m.ckpt");
    std::vector<ManifestEntry> m;
    for (int i = 0; i < 10; ++i) {
        SlideBag bag;
        bag.slide_id = "S" + std::to_string(i);
        PatchInstance pt;
        pt.embedding = Eigen::Vector2d(i < 5 ? 1.0 : -1.0, 0.0);
        bag.patches.push_back(pt);
        write_slide_bundle(bag, dir / "slides" / bag.slide_id, BundleFormat::Tsv);
        m.push_back({bag.slide_id, fs::path("slides") / bag.slide_id, i < 5 ? 1 : 0, "x", "resected"});
    }
    write_manifest(m, dir / "manifest.tsv");
    auto c = small_config(dir / "out");
    c.checkpoint = (dir / "m.ckpt").string();
    c.manifest = (dir / "manifest.tsv").string();
    auto r = cmd_evaluate(c);
    CHECK(r["report"]["auc"] == 1.0);
    CHECK(r["report"]["accuracy"] == 1.0);
    CHECK(r["n_errors"] == 0);

    for (auto& e : m) e.label = 1 - *e.label;
    write_manifest(m, dir / "manifest.tsv");
    r = cmd_evaluate(c);
    CHECK(r["report"]["auc"] == 0.0);
    CHECK(r["report"]["accuracy"] == 0.0);
    CHECK(r["n_high_confidence_errors"] == 10);
}

TEST_CASE("survival rejects an empty subtype group") {
    const auto dir = fixture::temp_dir("surv_empty");
    write_clinical_csv({{"A", 10, 1, "x", "metastatic"}, {"B", 5, 1, "x", "metastatic"}}, dir / "clinical.csv");
    std::vector<SubtypeRecord> labels(2);
    labels[0].sample_id = "A";
    labels[0].label = Subtype::Basal;
    labels[1].sample_id = "B";
    labels[1].label = Subtype::Basal;
    write_labels_tsv(labels, dir / "labels.tsv");
    auto c = small_config(dir / "out");
    c.clinical = (dir / "clinical.csv").string();
    c.labels = (dir / "labels.tsv").string();
    CHECK_THROWS_AS(cmd_survival(c), DegenerateError);
}

TEST_CASE("commands are deterministic") {
    const auto a = synth_cohort("det");
    const auto cohort = oracle::snapshot(a);
    cmd_synth(small_spec(), shipped_sets(), small_config(a));
    CHECK(oracle::snapshot(a) == cohort);

    auto tc = small_config(a / "train");
    tc.manifest = (a / "manifest.tsv").string();
    cmd_train(tc);
    const auto first = oracle::snapshot(a / "train");
    cmd_train(tc);
    CHECK(oracle::snapshot(a / "train") == first);

    auto par = tc;
    par.out_dir = (a / "train_par").string();
    par.threads = 3;
    cmd_train(par);
    auto m1 = nlohmann::json::parse(first.at("metrics.json"));
    auto m2 = nlohmann::json::parse(oracle::slurp(a / "train_par" / "metrics.json"));
    m1["config"].erase("threads");
    m2["config"].erase("threads");
    m1["config"].erase("out_dir");
    m2["config"].erase("out_dir");
    CHECK(m1 == m2);
    CHECK(oracle::slurp(a / "train_par" / "best.ckpt") == first.at("best.ckpt"));
}

TEST_CASE("CLI exit codes") {
    const auto dir = fixture::temp_dir("cli");
    const std::string out = " --out-dir \"" + dir.string() + "\"";
    CHECK(run_cli("--help") == 0);
    CHECK(run_cli("no-such-command") == 2);
    CHECK(run_cli("train --k-folds notanumber" + out) == 2);
    CHECK(run_cli("train" + out) == 2);
    CHECK(run_cli("train --manifest \"" + (dir / "missing.tsv").string() + "\"" + out) == 4);
    CHECK(run_cli("evaluate --config \"" + (dir / "missing.json").string() + "\"" + out) == 4);
    std::ofstream(dir / "bad.json") << R"({"bogus_key": 1})";
    CHECK(run_cli("train --config \"" + (dir / "bad.json").string() + "\"" + out) == 2);

    CHECK(run_cli("synth --n-slides 12 --patches-min 2 --patches-max 3 --cells-max 2 --patch-dim 8 --d-cell 4" + out) == 0);
    CHECK(fs::exists(dir / "manifest.tsv"));
    CHECK(run_cli("label --expression \"" + (dir / "expression.tsv").string() + "\"" + out) == 0);
    CHECK(fs::exists(dir / "labels.tsv"));

    std::string same = "gene\tS1\tS2\n";
    for (const auto& g : shipped_sets().classical.genes) same += g + "\t3\t3\n";
    for (const auto& g : shipped_sets().basal.genes) same += g + "\t9\t9\n";
    tsv::write_file(dir / "same.tsv", same);
    CHECK(run_cli("label --expression \"" + (dir / "same.tsv").string() + "\" --out-dir \"" + (dir / "same").string() + "\"") == 3);
}
