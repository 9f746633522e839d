#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "netfact/exceptions.hpp"
#include "netfact/io.hpp"
#include "netfact/model.hpp"
#include "netfact/random.hpp"
#include "netfact/synthetic.hpp"

using namespace netfact;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

}  // namespace

TEST_CASE("format_g17 round-trips doubles exactly") {
    for (double v : {0.0, -0.0, 0.1, 1.0 / 3.0, -2.5e-13, 1e300, 1e-300,
                     3.141592653589793, -123456.789012345678}) {
        const std::string s = format_g17(v);
        const double back = std::strtod(s.c_str(), nullptr);
        CHECK(std::memcmp(&back, &v, sizeof v) == 0);
    }
}

TEST_CASE("atomic_write_text leaves only the final file") {
    const fs::path dir = testutil::temp_dir("atomic");
    const fs::path target = dir / "out.txt";
    atomic_write_text(target, "hello\n");
    CHECK(slurp(target) == "hello\n");
    int entries = 0;
    for (const auto& e : fs::directory_iterator(dir)) {
        (void)e;
        ++entries;
    }
    CHECK(entries == 1);
}

TEST_CASE("matrix csv round trip is bitwise exact") {
    Rng rng = make_rng(derive_seed(71u, "mcsv"));
    Matrix m = testutil::random_matrix(7, 5, rng);
    m(0, 0) = 1e-300;
    m(1, 1) = -1e300;
    m(2, 3) = 1.0 / 3.0;
    const fs::path dir = testutil::temp_dir("mcsv");
    write_matrix_csv(dir / "m.csv", m);
    const Matrix back = read_matrix_csv(dir / "m.csv");
    REQUIRE(back.rows() == 7);
    REQUIRE(back.cols() == 5);
    CHECK(back == m);
}

TEST_CASE("matrix csv errors name the offending location") {
    const fs::path dir = testutil::temp_dir("mbad");
    spit(dir / "bad.csv", "1,2\n3,oops\n");
    CHECK_THROWS_WITH_AS(read_matrix_csv(dir / "bad.csv"),
                         doctest::Contains("bad.csv"), DataError);

    spit(dir / "ragged.csv", "1,2\n3\n");
    CHECK_THROWS_AS(read_matrix_csv(dir / "ragged.csv"), DataError);

    CHECK_THROWS_AS(read_matrix_csv(dir / "absent.csv"), DataError);
}

TEST_CASE("scores csv round trip and header validation") {
    const fs::path dir = testutil::temp_dir("scores");
    std::vector<std::string> ids = {"alpha", "beta", "gamma"};
    Vector scores(3);
    scores << 1.5, -2.25, 1.0 / 7.0;
    write_scores_csv(dir / "scores.csv", ids, scores);
    std::vector<std::string> back_ids;
    Vector back_scores;
    read_scores_csv(dir / "scores.csv", back_ids, back_scores);
    CHECK(back_ids == ids);
    CHECK(back_scores == scores);

    spit(dir / "nohdr.csv", "id,value\nalpha,1\n");
    CHECK_THROWS_AS(read_scores_csv(dir / "nohdr.csv", back_ids, back_scores), DataError);
}

TEST_CASE("cohort save and load round trip") {
    GeneratorConfig gen;
    gen.M = 9;
    gen.N = 5;
    gen.K_true = 2;
    gen.rng_seed = 15;
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(gen, data, truth);

    const fs::path dir = testutil::temp_dir("cohort");
    save_cohort(dir, data);
    const CohortDataset back = load_cohort(dir, dir / "scores.csv", false);
    REQUIRE(back.n_subjects() == 5);
    CHECK(back.subject_ids == data.subject_ids);
    CHECK(back.scores == data.scores);
    for (int n = 0; n < 5; ++n) CHECK(back.gammas[n] == data.gammas[n]);

    // Deflation drops the leading eigenvector of every matrix.
    const CohortDataset deflated = load_cohort(dir, dir / "scores.csv", true);
    for (int n = 0; n < 5; ++n) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(data.gammas[n]);
        const Vector top = eig.eigenvectors().col(8);
        CHECK(std::abs(top.dot(deflated.gammas[n] * top)) < 1e-8);
    }
}

TEST_CASE("load_cohort reports missing and duplicate subjects") {
    GeneratorConfig gen;
    gen.M = 6;
    gen.N = 3;
    gen.K_true = 2;
    gen.rng_seed = 2;
    CohortDataset data;
    GroundTruth truth;
    generate_cohort(gen, data, truth);
    const fs::path dir = testutil::temp_dir("cohortbad");
    save_cohort(dir, data);

    fs::remove(dir / "subj0001.csv");
    CHECK_THROWS_WITH_AS(load_cohort(dir, dir / "scores.csv", false),
                         doctest::Contains("subj0001"), DataError);

    // Restore, then corrupt the scores file with a duplicate id.
    write_matrix_csv(dir / "subj0001.csv", data.gammas[1]);
    spit(dir / "dup.csv", "subject_id,score\nsubj0000,1\nsubj0000,2\n");
    CHECK_THROWS_AS(load_cohort(dir, dir / "dup.csv", false), DataError);
}

TEST_CASE("checkpoint round trip is bitwise lossless") {
    Rng rng = make_rng(derive_seed(71u, "ckpt"));
    Checkpoint ck;
    ck.model = testutil::random_model(6, 3, 4, rng);
    ck.hp.gamma = 1.25;
    ck.hp.lambda1 = 31.5;
    ck.hp.lambda2 = 0.375;
    ck.hp.lambda3 = 2.0;
    ck.hp.step_t = 0.0025;
    ck.hp.K = 3;
    ck.hp.eta0 = 1e-3;
    ck.hp.eta_decay = 0.75;
    ck.hp.max_outer_iters = 123;
    ck.hp.tol_objective = 1e-5;
    ck.hp.tol_constraint = 1e-3;
    ck.hp.rng_seed = 987654321;
    ck.seed = 42;
    ck.iteration = 77;

    const fs::path dir = testutil::temp_dir("ckpt");
    write_checkpoint(dir / "checkpoint.json", ck);
    const Checkpoint back = read_checkpoint(dir / "checkpoint.json");
    CHECK(back.model.B == ck.model.B);
    CHECK(back.model.C == ck.model.C);
    CHECK(back.model.w == ck.model.w);
    CHECK(back.hp.gamma == ck.hp.gamma);
    CHECK(back.hp.lambda1 == ck.hp.lambda1);
    CHECK(back.hp.lambda2 == ck.hp.lambda2);
    CHECK(back.hp.lambda3 == ck.hp.lambda3);
    CHECK(back.hp.step_t == ck.hp.step_t);
    CHECK(back.hp.K == ck.hp.K);
    CHECK(back.hp.eta0 == ck.hp.eta0);
    CHECK(back.hp.eta_decay == ck.hp.eta_decay);
    CHECK(back.hp.max_outer_iters == ck.hp.max_outer_iters);
    CHECK(back.hp.tol_objective == ck.hp.tol_objective);
    CHECK(back.hp.tol_constraint == ck.hp.tol_constraint);
    CHECK(back.hp.rng_seed == ck.hp.rng_seed);
    CHECK(back.seed == ck.seed);
    CHECK(back.iteration == ck.iteration);

    // Same bytes when written again.
    write_checkpoint(dir / "second.json", back);
    CHECK(slurp(dir / "checkpoint.json") == slurp(dir / "second.json"));
}

TEST_CASE("checkpoint readers reject tampered files") {
    Rng rng = make_rng(derive_seed(71u, "ckptbad"));
    Checkpoint ck;
    ck.model = testutil::random_model(4, 2, 3, rng);
    const fs::path dir = testutil::temp_dir("ckptbad");
    write_checkpoint(dir / "ok.json", ck);

    std::string text = slurp(dir / "ok.json");
    std::string wrong_version = text;
    wrong_version.replace(wrong_version.find("\"1\""), 3, "\"9\"");
    spit(dir / "badver.json", wrong_version);
    CHECK_THROWS_AS(read_checkpoint(dir / "badver.json"), DataError);

    std::string wrong_shape = text;
    const auto pos = wrong_shape.find("\"M\": 4");
    REQUIRE(pos != std::string::npos);
    wrong_shape.replace(pos, 6, "\"M\": 5");
    spit(dir / "badshape.json", wrong_shape);
    CHECK_THROWS_AS(read_checkpoint(dir / "badshape.json"), DataError);

    Checkpoint nan_ck = ck;
    nan_ck.model.B(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(write_checkpoint(dir / "nan.json", nan_ck), NumericalError);
}

namespace {

PredictionReport sample_report() {
    PredictionReport rep;
    rep.method = "ours";
    rep.fold_count = 2;
    auto add = [&](const std::string& id, int idx, int fold, bool test, double yt,
                   double yp, bool missing) {
        SubjectRow row;
        row.subject_id = id;
        row.subject_index = idx;
        row.fold = fold;
        row.is_test = test;
        row.y_true = yt;
        row.y_pred = yp;
        row.missing = missing;
        rep.rows.push_back(row);
    };
    add("s0", 0, 0, true, 1.0, 1.2, false);
    add("s1", 1, 0, false, 2.0, 2.1, false);
    add("s1", 1, 1, true, 2.0, 1.8, false);
    add("s0", 0, 1, false, 1.0, 0.9, false);
    add("s2", 2, 0, false, 3.0, 2.9, false);
    add("s2", 2, 1, true, 3.0, 0.0, true);  // missing prediction
    rep.recompute_aggregates();
    return rep;
}

}  // namespace

TEST_CASE("emit_report writes the schema plus csv siblings") {
    const PredictionReport rep = sample_report();
    const fs::path dir = testutil::temp_dir("report");
    emit_report(rep, dir / "report.json");

    const auto j = nlohmann::json::parse(slurp(dir / "report.json"));
    CHECK(j.at("meta").at("format_version") == "1");
    CHECK(j.at("meta").at("method") == "ours");
    CHECK(j.at("meta").at("fold_count") == 2);
    CHECK(j.at("meta").at("n_subjects") == 3);
    REQUIRE(j.at("subjects").is_array());
    CHECK(j.at("subjects").size() == rep.rows.size());

    bool saw_null = false;
    for (const auto& row : j.at("subjects"))
        if (row.at("y_pred").is_null()) saw_null = true;
    CHECK(saw_null);

    const auto& agg = j.at("aggregates");
    CHECK(agg.at("rmse_train").get<double>() == doctest::Approx(rep.rmse_train));
    CHECK(agg.at("rmse_test").get<double>() == doctest::Approx(rep.rmse_test));
    CHECK(agg.at("r2_train").get<double>() == doctest::Approx(rep.r2_train));
    CHECK(agg.at("r2_test").get<double>() == doctest::Approx(rep.r2_test));

    // Subjects csv: header + one line per row. Plot csv: header + one line
    // per distinct subject, preferring the test-fold row.
    const std::string subjects = slurp(dir / "report_subjects.csv");
    CHECK(std::count(subjects.begin(), subjects.end(), '\n') ==
          static_cast<long>(rep.rows.size()) + 1);
    const std::string plot = slurp(dir / "report_plot.csv");
    CHECK(std::count(plot.begin(), plot.end(), '\n') == 4);

    PredictionReport empty;
    empty.method = "ours";
    CHECK_THROWS_AS(emit_report(empty, dir / "empty.json"), DataError);
}

TEST_CASE("trace csv has one header and one line per record") {
    TrainTrace trace;
    trace.initial_aug = 10.0;
    TraceRow row;
    row.iter = 0;
    row.aug_step1 = 9.0;
    row.aug_step2 = 8.5;
    row.aug_step3 = 8.25;
    row.aug_end = 8.0;
    row.plain = 7.0;
    row.fit_term = 6.0;
    row.residual = 0.01;
    row.b_l1 = 1.5;
    row.eta = 1e-3;
    trace.rows.push_back(row);
    row.iter = 1;
    trace.rows.push_back(row);

    const fs::path dir = testutil::temp_dir("trace");
    write_trace_csv(dir / "trace.csv", trace);
    const std::string text = slurp(dir / "trace.csv");
    REQUIRE(std::count(text.begin(), text.end(), '\n') == 3);
    const std::string header = text.substr(0, text.find('\n'));
    CHECK(std::count(header.begin(), header.end(), ',') == 11);  // 12 columns
    CHECK(header.find("iter") != std::string::npos);
    CHECK(header.find("residual") != std::string::npos);
}

TEST_CASE("sweep writers emit the grid and a summary with null for failures") {
    SweepResult res;
    res.sigma_grid = {0.1, 0.2};
    res.sparsity_grid = {0.3};
    res.cells.resize(2);
    SweepCell good;
    good.sigma_gamma = 0.1;
    good.sparsity = 0.3;
    good.mean_similarity = 0.9;
    good.std_similarity = 0.05;
    good.trial_similarities = {0.85, 0.95};
    res.cells[0].push_back(good);
    SweepCell bad;
    bad.sigma_gamma = 0.2;
    bad.sparsity = 0.3;
    bad.mean_similarity = std::numeric_limits<double>::quiet_NaN();
    bad.std_similarity = std::numeric_limits<double>::quiet_NaN();
    bad.trial_similarities = {std::numeric_limits<double>::quiet_NaN()};
    bad.failed = true;
    res.cells[1].push_back(bad);

    const fs::path dir = testutil::temp_dir("sweep");
    write_sweep(res, dir);
    const std::string grid = slurp(dir / "sweep_grid.csv");
    CHECK(grid.find("sigma_gamma") != std::string::npos);
    CHECK(std::count(grid.begin(), grid.end(), '\n') == 3);  // header + 2 sigma rows

    const auto j = nlohmann::json::parse(slurp(dir / "sweep_summary.json"));
    CHECK(j.at("format_version") == "1");
    const auto& cells = j.at("cells");
    REQUIRE(cells.size() == 2);
    bool saw_failed = false;
    for (const auto& c : cells)
        if (c.at("failed").get<bool>()) {
            saw_failed = true;
            CHECK(c.at("mean").is_null());
        }
    CHECK(saw_failed);
}
