#include "netfact/predict.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "netfact/exceptions.hpp"
#include "netfact/metrics.hpp"
#include "netfact/qp.hpp"
#include "netfact/random.hpp"

namespace netfact {

FoldSplit make_folds(int n_subjects, int fold_count, std::uint64_t seed) {
    if (fold_count < 1) throw ConfigError("fold_count must be at least 1");
    if (n_subjects < fold_count)
        throw DataError("fewer subjects than folds");
    FoldSplit split;
    split.fold_count = fold_count;
    split.rng_seed = seed;
    std::vector<int> order(n_subjects);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(derive_seed(seed, "folds"));
    std::shuffle(order.begin(), order.end(), rng);
    split.assignments.assign(n_subjects, 0);
    for (int i = 0; i < n_subjects; ++i) split.assignments[order[i]] = i % fold_count;
    return split;
}

std::optional<double> predict_subject(const Matrix& B_star, const Vector& w_star,
                                      const Matrix& gamma_test, const HyperParams& hp) {
    const QpProblem prob = build_prediction_qp(B_star, gamma_test, hp.lambda2);
    const QpSolution sol = solve_nonneg_qp(prob);
    if (!sol.converged) return std::nullopt;
    return sol.c.dot(w_star);
}

void PredictionReport::recompute_aggregates() {
    std::vector<double> yt_train, yp_train, yt_test, yp_test;
    for (const SubjectRow& row : rows) {
        if (row.missing) continue;
        if (row.is_test) {
            yt_test.push_back(row.y_true);
            yp_test.push_back(row.y_pred);
        } else {
            yt_train.push_back(row.y_true);
            yp_train.push_back(row.y_pred);
        }
    }
    auto to_vec = [](const std::vector<double>& v) {
        return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    };
    if (yt_test.empty() || yt_train.empty())
        throw DataError("report needs at least one train and one test row");
    rmse_train = rmse(to_vec(yt_train), to_vec(yp_train));
    rmse_test = rmse(to_vec(yt_test), to_vec(yp_test));
    r2_train = r_squared(to_vec(yt_train), to_vec(yp_train));
    r2_test = r_squared(to_vec(yt_test), to_vec(yp_test));
}

PredictionReport run_cross_validation(const CohortDataset& data, const TrainerConfig& cfg,
                                      const FoldSplit& split) {
    const int n = data.n_subjects();
    if (static_cast<int>(split.assignments.size()) != n)
        throw DataError("fold assignments do not match subject count");
    const int folds = split.fold_count;
    if (n < folds) throw DataError("fewer subjects than folds");
    std::vector<int> fold_sizes(folds, 0);
    for (int a : split.assignments) {
        if (a < 0 || a >= folds) throw DataError("fold id out of range");
        ++fold_sizes[a];
    }
    for (int f = 0; f < folds; ++f)
        if (fold_sizes[f] < 1) throw DataError("fold " + std::to_string(f) + " is empty");

    PredictionReport report;
    report.method = "ours";
    report.fold_count = folds;
    for (int f = 0; f < folds; ++f) {
        CohortDataset train;
        std::vector<int> train_local(n, -1);
        for (int i = 0; i < n; ++i) {
            if (split.assignments[i] == f) continue;
            train_local[i] = train.n_subjects();
            train.gammas.push_back(data.gammas[i]);
            if (!data.subject_ids.empty())
                train.subject_ids.push_back(data.subject_ids[i]);
        }
        train.scores.resize(train.n_subjects());
        int t = 0;
        for (int i = 0; i < n; ++i)
            if (split.assignments[i] != f) train.scores(t++) = data.scores(i);

        TrainerConfig fold_cfg = cfg;
        fold_cfg.hp.rng_seed =
            derive_seed(cfg.hp.rng_seed, "fold", static_cast<std::uint64_t>(f));
        const FitResult fr = fit(train, fold_cfg);

        for (int i = 0; i < n; ++i) {
            SubjectRow row;
            row.subject_id = data.subject_ids.empty() ? std::to_string(i)
                                                      : data.subject_ids[i];
            row.subject_index = i;
            row.fold = f;
            row.is_test = split.assignments[i] == f;
            row.y_true = data.scores(i);
            if (row.is_test) {
                const auto pred =
                    predict_subject(fr.model.B, fr.model.w, data.gammas[i], fold_cfg.hp);
                if (pred) {
                    row.y_pred = *pred;
                } else {
                    row.missing = true;
                    row.y_pred = std::numeric_limits<double>::quiet_NaN();
                }
            } else {
                row.y_pred = fr.model.C.col(train_local[i]).dot(fr.model.w);
            }
            report.rows.push_back(std::move(row));
        }
    }
    report.recompute_aggregates();
    return report;
}

}  // namespace netfact
