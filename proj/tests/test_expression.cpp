#include <doctest.h>

#include <random>

#include "histosub/error.hpp"
#include "histosub/expression.hpp"
#include "histosub/tsv.hpp"
#include "oracles.hpp"

using namespace histosub;

namespace {

ExpressionMatrix counts(const std::vector<std::string>& genes, const Eigen::MatrixXd& v) {
    std::vector<std::string> samples;
    for (Eigen::Index s = 0; s < v.cols(); ++s) samples.push_back("S" + std::to_string(s));
    return ExpressionMatrix(genes, samples, v, ExpressionMode::Counts);
}

}  // namespace

TEST_CASE("matrix invariants are enforced on construction") {
    Eigen::MatrixXd v(2, 2);
    v << 1, 2, 3, 4;
    CHECK_THROWS_AS(ExpressionMatrix({"A", "A"}, {"s1", "s2"}, v, ExpressionMode::Tpm), InputError);
    CHECK_THROWS_AS(ExpressionMatrix({"A", "B"}, {"s1", "s1"}, v, ExpressionMode::Tpm), InputError);
    CHECK_THROWS_AS(ExpressionMatrix({"A"}, {"s1", "s2"}, v, ExpressionMode::Tpm), InputError);
    v(0, 0) = -1;
    CHECK_THROWS_AS(ExpressionMatrix({"A", "B"}, {"s1", "s2"}, v, ExpressionMode::Counts), InputError);
    CHECK_NOTHROW(ExpressionMatrix({"A", "B"}, {"s1", "s2"}, v, ExpressionMode::ZScore));
    v(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(ExpressionMatrix({"A", "B"}, {"s1", "s2"}, v, ExpressionMode::ZScore), InputError);
}

TEST_CASE("gene sets deduplicate and keep first-occurrence order") {
    GeneSet s("x", {"B", "A", "B", "C", "A"});
    CHECK(s.genes == std::vector<std::string>{"B", "A", "C"});
    CHECK_THROWS_AS(GeneSet("empty", {}), InputError);
}

TEST_CASE("counts_to_tpm") {
    SUBCASE("single gene takes the full mass") {
        Eigen::MatrixXd v(1, 1);
        v << 7;
        const auto tpm = counts_to_tpm(counts({"G"}, v), {{"G", 2.0}});
        CHECK(tpm.values()(0, 0) == doctest::Approx(1e6).epsilon(1e-12));
        CHECK(tpm.mode() == ExpressionMode::Tpm);
    }
    SUBCASE("equal counts and lengths split evenly") {
        Eigen::MatrixXd v(2, 1);
        v << 10, 10;
        const auto tpm = counts_to_tpm(counts({"A", "B"}, v), {{"A", 1.5}, {"B", 1.5}});
        CHECK(tpm.values()(0, 0) == doctest::Approx(5e5).epsilon(1e-12));
        CHECK(tpm.values()(1, 0) == doctest::Approx(5e5).epsilon(1e-12));
    }
    SUBCASE("random matrix matches the direct formula") {
        std::mt19937_64 rng(11);
        std::uniform_real_distribution<double> c(0.0, 1000.0);
        std::uniform_real_distribution<double> l(0.2, 8.0);
        Eigen::MatrixXd v(4, 2);
        std::map<std::string, double> len;
        std::vector<std::string> genes{"A", "B", "C", "D"};
        for (int g = 0; g < 4; ++g) {
            len[genes[static_cast<std::size_t>(g)]] = l(rng);
            for (int s = 0; s < 2; ++s) v(g, s) = std::round(c(rng));
        }
        const auto tpm = counts_to_tpm(counts(genes, v), len);
        for (int s = 0; s < 2; ++s) {
            double denom = 0.0;
            for (int g = 0; g < 4; ++g) denom += v(g, s) / len[genes[static_cast<std::size_t>(g)]];
            for (int g = 0; g < 4; ++g) {
                const double expect = v(g, s) / len[genes[static_cast<std::size_t>(g)]] / denom * 1e6;
                CHECK(tpm.values()(g, s) == doctest::Approx(expect).epsilon(1e-9));
            }
        }
    }
    SUBCASE("errors") {
        Eigen::MatrixXd v(2, 2);
        v << 1, 0, 1, 0;
        CHECK_THROWS_AS(counts_to_tpm(counts({"A", "B"}, v), {{"A", 1.0}}), InputError);
        CHECK_THROWS_AS(counts_to_tpm(counts({"A", "B"}, v), {{"A", 1.0}, {"B", 0.0}}), InputError);
        try {
            counts_to_tpm(counts({"A", "B"}, v), {{"A", 1.0}, {"B", 1.0}});
            FAIL("expected a degenerate-sample error");
        } catch (const DegenerateError& e) {
            CHECK(std::string(e.what()).find("S1") != std::string::npos);
        }
    }
}

TEST_CASE("counts_to_tpm properties over random inputs") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> c(0.0, 5000.0);
    std::uniform_real_distribution<double> l(0.1, 10.0);
    std::uniform_real_distribution<double> scale(0.01, 100.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int ng = 2 + trial % 7;
        Eigen::MatrixXd v(ng, 3);
        std::vector<std::string> genes;
        std::map<std::string, double> len;
        for (int g = 0; g < ng; ++g) {
            genes.push_back("G" + std::to_string(g));
            len[genes.back()] = l(rng);
            for (int s = 0; s < 3; ++s) v(g, s) = c(rng) + 1.0;
        }
        const auto tpm = counts_to_tpm(counts(genes, v), len);
        Eigen::MatrixXd scaled = v;
        scaled.col(1) *= scale(rng);
        const auto tpm2 = counts_to_tpm(counts(genes, scaled), len);
        for (int s = 0; s < 3; ++s) CHECK(std::abs(tpm.values().col(s).sum() - 1e6) <= 1e-6 * 1e6);
        CHECK((tpm.values() - tpm2.values()).cwiseAbs().maxCoeff() <= 1e-9 * 1e6);
    }
}

TEST_CASE("log2p1") {
    Eigen::MatrixXd v(3, 1);
    v << 0, 1, 3;
    const auto out = log2p1(ExpressionMatrix({"A", "B", "C"}, {"s"}, v, ExpressionMode::Tpm));
    CHECK(out.values()(0, 0) == 0.0);
    CHECK(out.values()(1, 0) == 1.0);
    CHECK(out.values()(2, 0) == 2.0);
    CHECK(out.mode() == ExpressionMode::Log2Tpm1);
    CHECK_THROWS_AS(log2p1(out), InputError);
}

TEST_CASE("log2p1 is strictly monotone") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1e5);
    Eigen::MatrixXd v(200, 1);
    for (int i = 0; i < 200; ++i) v(i, 0) = u(rng);
    std::vector<std::string> genes;
    for (int i = 0; i < 200; ++i) genes.push_back("G" + std::to_string(i));
    const auto out = log2p1(ExpressionMatrix(genes, {"s"}, v, ExpressionMode::Tpm));
    for (int i = 0; i < 200; ++i) {
        for (int j = 0; j < 200; ++j) {
            if (v(i, 0) < v(j, 0)) CHECK(out.values()(i, 0) < out.values()(j, 0));
        }
    }
}

TEST_CASE("zscore_genes") {
    SUBCASE("constant row maps to zeros") {
        Eigen::MatrixXd v(1, 3);
        v << 5, 5, 5;
        const auto z = zscore_genes(ExpressionMatrix({"A"}, {"a", "b", "c"}, v, ExpressionMode::Tpm));
        CHECK(z.values().cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("two samples") {
        Eigen::MatrixXd v(1, 2);
        v << 2, 4;
        const auto z = zscore_genes(ExpressionMatrix({"A"}, {"a", "b"}, v, ExpressionMode::Tpm));
        CHECK(z.values()(0, 0) == doctest::Approx(-1.0 / std::sqrt(2.0)).epsilon(1e-15));
        CHECK(z.values()(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
    }
    SUBCASE("random row matches mean/sd oracle") {
        std::mt19937_64 rng(3);
        std::normal_distribution<double> n(4.0, 2.0);
        Eigen::MatrixXd v(1, 6);
        std::vector<double> row;
        for (int s = 0; s < 6; ++s) row.push_back(v(0, s) = n(rng));
        const auto z = zscore_genes(ExpressionMatrix({"A"}, {"a", "b", "c", "d", "e", "f"}, v, ExpressionMode::ZScore));
        const double mean = std::accumulate(row.begin(), row.end(), 0.0) / 6.0;
        const double sd = oracle::sample_sd(row);
        for (int s = 0; s < 6; ++s) CHECK(std::abs(z.values()(0, s) - (row[static_cast<std::size_t>(s)] - mean) / sd) <= 1e-12);
    }
    SUBCASE("fewer than two samples is rejected") {
        Eigen::MatrixXd v(1, 1);
        v << 1;
        CHECK_THROWS_AS(zscore_genes(ExpressionMatrix({"A"}, {"a"}, v, ExpressionMode::Tpm)), DegenerateError);
    }
}

TEST_CASE("zscore rows have mean 0 and sd 1; composes with log2p1") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u(0.0, 500.0);
    for (int trial = 0; trial < 30; ++trial) {
        const int ns = 2 + trial % 9;
        Eigen::MatrixXd v(5, ns);
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = u(rng);
        v.row(4).setConstant(3.0);
        std::vector<std::string> samples;
        for (int s = 0; s < ns; ++s) samples.push_back("s" + std::to_string(s));
        const ExpressionMatrix m({"A", "B", "C", "D", "E"}, samples, v, ExpressionMode::Tpm);
        const auto z = zscore_genes(m);
        for (int g = 0; g < 4; ++g) {
            std::vector<double> row;
            for (int s = 0; s < ns; ++s) row.push_back(z.values()(g, s));
            CHECK(std::abs(std::accumulate(row.begin(), row.end(), 0.0) / ns) <= 1e-10);
            CHECK(std::abs(oracle::sample_sd(row) - 1.0) <= 1e-10);
        }
        CHECK(z.values().row(4).cwiseAbs().maxCoeff() == 0.0);

        const auto zl = zscore_genes(log2p1(m));
        for (int g = 0; g < 4; ++g) {
            std::vector<double> logs;
            for (int s = 0; s < ns; ++s) logs.push_back(std::log2(v(g, s) + 1.0));
            const double mean = std::accumulate(logs.begin(), logs.end(), 0.0) / ns;
            const double sd = oracle::sample_sd(logs);
            for (int s = 0; s < ns; ++s) CHECK(std::abs(zl.values()(g, s) - (logs[static_cast<std::size_t>(s)] - mean) / sd) <= 1e-10);
        }
    }
}

TEST_CASE("map_gene_ids") {
    Eigen::MatrixXd v(3, 1);
    v << 3, 5, 1;
    const ExpressionMatrix m({"ENSG1.1", "ENSG1.2", "ENSG2.1"}, {"s"}, v, ExpressionMode::Tpm);
    GeneIdMap map{{{"ENSG1.1", "X"}, {"ENSG1.2", "X"}, {"ENSG2.1", "Y"}}};

    SUBCASE("identity map leaves the matrix unchanged") {
        GeneIdMap id{{{"ENSG1.1", "ENSG1.1"}, {"ENSG1.2", "ENSG1.2"}, {"ENSG2.1", "ENSG2.1"}}};
        const auto out = map_gene_ids(m, id, CollisionPolicy::Error);
        CHECK(out.gene_ids() == m.gene_ids());
        CHECK(out.values() == m.values());
    }
    SUBCASE("collision policies") {
        const auto sum = map_gene_ids(m, map, CollisionPolicy::Sum);
        CHECK(sum.values()(*sum.gene_index("X"), 0) == 8.0);
        CHECK(sum.values()(*sum.gene_index("Y"), 0) == 1.0);
        const auto mx = map_gene_ids(m, map, CollisionPolicy::Max);
        CHECK(mx.values()(*mx.gene_index("X"), 0) == 5.0);
        CHECK_THROWS_AS(map_gene_ids(m, map, CollisionPolicy::Error), InputError);
    }
    SUBCASE("unmapped ids") {
        GeneIdMap partial{{{"ENSG1.1", "X"}}};
        try {
            map_gene_ids(m, partial, CollisionPolicy::Sum);
            FAIL("expected an unmapped-id error");
        } catch (const InputError& e) {
            CHECK(std::string(e.what()).find("ENSG2.1") != std::string::npos);
        }
        const auto dropped = map_gene_ids(m, partial, CollisionPolicy::Sum, true);
        CHECK(dropped.n_genes() == 1);
    }
}

TEST_CASE("expression TSV round trip and malformed input") {
    const auto dir = fixture::temp_dir("expr_io");
    Eigen::MatrixXd v(2, 3);
    v << 0.1, 2.5, 1e-9, 123456.789, 0, 7;
    const ExpressionMatrix m({"A", "B"}, {"s1", "s2", "s3"}, v, ExpressionMode::Tpm);
    write_expression_tsv(m, dir / "m.tsv");
    const auto back = read_expression_tsv(dir / "m.tsv", ExpressionMode::Tpm);
    CHECK(back.values() == m.values());
    CHECK(back.sample_ids() == m.sample_ids());

    tsv::write_file(dir / "bad.tsv", "gene\ts1\nA\t1\t2\n");
    CHECK_THROWS_AS(read_expression_tsv(dir / "bad.tsv", ExpressionMode::Tpm), InputError);
    tsv::write_file(dir / "nohdr.tsv", "id\ts1\nA\t1\n");
    CHECK_THROWS_AS(read_expression_tsv(dir / "nohdr.tsv", ExpressionMode::Tpm), InputError);
    tsv::write_file(dir / "nan.tsv", "gene\ts1\nA\tx\n");
    CHECK_THROWS_AS(read_expression_tsv(dir / "nan.tsv", ExpressionMode::Tpm), InputError);
    CHECK_THROWS_AS(read_expression_tsv(dir / "missing.tsv", ExpressionMode::Tpm), IoError);
}
