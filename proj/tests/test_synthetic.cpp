#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "netfact/exceptions.hpp"
#include "netfact/model.hpp"
#include "netfact/random.hpp"
#include "netfact/synthetic.hpp"

using namespace netfact;

namespace {

std::set<int> column_support(const Matrix& b, int col) {
    std::set<int> rows;
    for (int i = 0; i < b.rows(); ++i)
        if (b(i, col) != 0.0) rows.insert(i);
    return rows;
}

}  // namespace

TEST_CASE("generate_cohort produces consistent, reproducible shapes") {
    GeneratorConfig cfg;
    cfg.M = 12;
    cfg.N = 7;
    cfg.K_true = 3;
    cfg.rng_seed = 5;
    CohortDataset a, b;
    GroundTruth ta, tb;
    generate_cohort(cfg, a, ta);
    generate_cohort(cfg, b, tb);

    REQUIRE(a.n_subjects() == 7);
    REQUIRE(a.n_nodes() == 12);
    REQUIRE(ta.B_true.rows() == 12);
    REQUIRE(ta.B_true.cols() == 3);
    REQUIRE(ta.C_true.rows() == 3);
    REQUIRE(ta.C_true.cols() == 7);
    REQUIRE(ta.w_true.size() == 3);
    CHECK(a.subject_ids.size() == 7);
    CHECK(a.subject_ids[0] == "subj0000");

    // Bitwise reproducibility.
    CHECK(ta.B_true == tb.B_true);
    CHECK(ta.C_true == tb.C_true);
    CHECK(ta.w_true == tb.w_true);
    CHECK(a.scores == b.scores);
    for (int n = 0; n < 7; ++n) CHECK(a.gammas[n] == b.gammas[n]);

    // Exact symmetry after the final symmetrization.
    for (int n = 0; n < 7; ++n)
        CHECK(a.gammas[n] == Matrix(a.gammas[n].transpose()));

    CHECK(ta.C_true.minCoeff() >= 0.0);
}

TEST_CASE("supports have the configured size and disjointness") {
    GeneratorConfig cfg;
    cfg.M = 50;
    cfg.K_true = 4;
    cfg.N = 3;
    cfg.sparsity_level = 0.2;
    cfg.overlap_level = 0.0;
    cfg.rng_seed = 9;
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(cfg, data, truth);

    std::vector<std::set<int>> supports;
    for (int q = 0; q < 4; ++q) {
        supports.push_back(column_support(truth.B_true, q));
        CHECK(static_cast<int>(supports.back().size()) == 10);  // round(0.2 * 50)
    }
    // Zero overlap and K*s <= M: pairwise disjoint.
    for (int p = 0; p < 4; ++p)
        for (int q = p + 1; q < 4; ++q) {
            std::vector<int> common;
            std::set_intersection(supports[p].begin(), supports[p].end(),
                                  supports[q].begin(), supports[q].end(),
                                  std::back_inserter(common));
            CHECK(common.empty());
        }
}

TEST_CASE("full overlap forces a single shared support") {
    GeneratorConfig cfg;
    cfg.M = 30;
    cfg.K_true = 2;
    cfg.N = 2;
    cfg.sparsity_level = 0.3;
    cfg.overlap_level = 1.0;
    cfg.rng_seed = 3;
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(cfg, data, truth);
    CHECK(column_support(truth.B_true, 0) == column_support(truth.B_true, 1));
}

TEST_CASE("noiseless generation is exact") {
    GeneratorConfig cfg;
    cfg.M = 15;
    cfg.N = 6;
    cfg.K_true = 2;
    cfg.sigma_gamma = 0.0;
    cfg.sigma_y = 0.0;
    cfg.rng_seed = 77;
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(cfg, data, truth);
    for (int n = 0; n < 6; ++n) {
        const Matrix exact =
            truth.B_true * truth.C_true.col(n).asDiagonal() * truth.B_true.transpose();
        CHECK((data.gammas[n] - exact).cwiseAbs().maxCoeff() < 1e-14);
        CHECK(data.scores(n) ==
              doctest::Approx(truth.C_true.col(n).dot(truth.w_true)).epsilon(1e-15));
    }
}

TEST_CASE("matrix noise matches the requested level in Monte-Carlo") {
    GeneratorConfig cfg;
    cfg.M = 20;
    cfg.N = 1000;
    cfg.K_true = 2;
    cfg.sigma_gamma = 0.1;
    cfg.rng_seed = 2024;
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(cfg, data, truth);

    double sum = 0.0, sum2 = 0.0;
    long count = 0;
    for (int n = 0; n < cfg.N; ++n) {
        const Matrix noise = data.gammas[n] - truth.B_true *
                                                  truth.C_true.col(n).asDiagonal() *
                                                  truth.B_true.transpose();
        for (int i = 0; i < cfg.M; ++i)
            for (int j = 0; j < cfg.M; ++j) {
                if (i == j) continue;
                sum += noise(i, j);
                sum2 += noise(i, j) * noise(i, j);
                ++count;
            }
    }
    const double mean = sum / count;
    const double std = std::sqrt(sum2 / count - mean * mean);
    CHECK(std::abs(mean) < 3.0 * (0.1 / (std::sqrt(1000.0) * cfg.M)));
    CHECK(std == doctest::Approx(0.1).epsilon(0.10));
}

TEST_CASE("score noise has the requested spread") {
    GeneratorConfig cfg;
    cfg.M = 6;
    cfg.N = 20000;
    cfg.K_true = 2;
    cfg.sigma_y = 0.2;
    cfg.rng_seed = 11;
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(cfg, data, truth);
    const Vector noise = data.scores - truth.C_true.transpose() * truth.w_true;
    const double mean = noise.mean();
    const double std = std::sqrt((noise.array() - mean).square().mean());
    CHECK(std::abs(mean) < 0.006);
    CHECK(std == doctest::Approx(0.2).epsilon(0.03));
}

TEST_CASE("generator rejects invalid configurations") {
    GeneratorConfig cfg;
    CohortDataset data;
    GroundTruth truth;
    cfg.sparsity_level = 0.0;
    CHECK_THROWS_AS(generate_cohort(cfg, data, truth), ConfigError);
    cfg = GeneratorConfig{};
    cfg.M = 100;
    cfg.sparsity_level = 0.001;  // support size rounds to 0
    CHECK_THROWS_AS(generate_cohort(cfg, data, truth), ConfigError);
    cfg = GeneratorConfig{};
    cfg.overlap_level = 1.5;
    CHECK_THROWS_AS(generate_cohort(cfg, data, truth), ConfigError);
    cfg = GeneratorConfig{};
    cfg.sigma_gamma = -0.1;
    CHECK_THROWS_AS(generate_cohort(cfg, data, truth), ConfigError);
}

TEST_CASE("recovery_similarity is exact on matched bases") {
    Rng rng = make_rng(derive_seed(41u, "simself"));
    const Matrix b = testutil::random_matrix(10, 4, rng);
    CHECK(recovery_similarity(b, b) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("recovery_similarity ignores column order, sign and scale") {
    Rng rng = make_rng(derive_seed(41u, "siminv"));
    const Matrix b = testutil::random_matrix(10, 4, rng);
    Matrix scrambled(10, 4);
    scrambled.col(0) = -2.0 * b.col(3);
    scrambled.col(1) = 0.5 * b.col(2);
    scrambled.col(2) = -b.col(1);
    scrambled.col(3) = 7.0 * b.col(0);
    CHECK(recovery_similarity(scrambled, b) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("recovery_similarity of unrelated bases stays low") {
    Rng rng = make_rng(derive_seed(41u, "simnull"));
    const Matrix a = testutil::random_matrix(64, 4, rng);
    const Matrix b = testutil::random_matrix(64, 4, rng);
    CHECK(recovery_similarity(a, b) < 0.4);
}

TEST_CASE("recovery_similarity gives zero credit to zero columns") {
    Rng rng = make_rng(derive_seed(41u, "simzero"));
    const Matrix b = testutil::random_matrix(12, 4, rng);
    Matrix damaged = b;
    damaged.col(2).setZero();
    CHECK(recovery_similarity(damaged, b) == doctest::Approx(0.75).epsilon(1e-6));

    Matrix wrong_shape = testutil::random_matrix(11, 4, rng);
    CHECK_THROWS_AS(recovery_similarity(wrong_shape, b), DataError);
}

TEST_CASE("robustness_sweep runs a seeded noiseless cell above 0.95") {
    GeneratorConfig base;
    base.M = 30;
    base.N = 40;
    base.K_true = 3;
    base.overlap_level = 0.0;
    base.sigma_B = 0.2;
    base.sigma_c = 0.1;
    base.sigma_w = 0.1;
    base.sigma_y = 0.0;
    base.rng_seed = 12;

    TrainerConfig cfg;
    cfg.hp.K = 3;
    cfg.hp.gamma = 1.0;
    cfg.hp.lambda1 = 1e-3;
    cfg.hp.lambda2 = 1e-6;
    cfg.hp.lambda3 = 1.0;
    cfg.hp.step_t = 0.01;
    cfg.hp.max_outer_iters = 400;
    cfg.hp.rng_seed = 3;
    cfg.restarts = 4;

    // sigma 0 is clamped to the noiseless generator path.
    const SweepResult res = robustness_sweep({0.0}, {0.2}, 2, base, cfg);
    REQUIRE(res.cells.size() == 1);
    REQUIRE(res.cells[0].size() == 1);
    const SweepCell& cell = res.cells[0][0];
    CHECK(!cell.failed);
    CHECK(cell.mean_similarity > 0.95);
    REQUIRE(cell.trial_similarities.size() == 2);

    // Deterministic rerun.
    const SweepResult res2 = robustness_sweep({0.0}, {0.2}, 2, base, cfg);
    CHECK(res2.cells[0][0].trial_similarities == cell.trial_similarities);
}

TEST_CASE("robustness_sweep validates its grid") {
    GeneratorConfig base;
    TrainerConfig cfg;
    CHECK_THROWS_AS(robustness_sweep({}, {0.2}, 2, base, cfg), ConfigError);
    CHECK_THROWS_AS(robustness_sweep({0.1}, {}, 2, base, cfg), ConfigError);
    CHECK_THROWS_AS(robustness_sweep({0.1}, {0.2}, 0, base, cfg), ConfigError);
}
