#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "netfact/trainer.hpp"
#include "netfact/types.hpp"

namespace netfact {

struct FoldSplit {
    int fold_count = 10;
    std::vector<int> assignments;  // subject index -> fold id
    std::uint64_t rng_seed = 0;
};

// Seeded shuffle then round-robin; fold sizes differ by at most one.
FoldSplit make_folds(int n_subjects, int fold_count, std::uint64_t seed);

struct SubjectRow {
    std::string subject_id;
    int subject_index = 0;
    int fold = 0;
    bool is_test = false;
    double y_true = 0.0;
    double y_pred = 0.0;
    bool missing = false;  // prediction unavailable (QP non-convergence)
};

struct PredictionReport {
    std::string method;
    int fold_count = 0;
    std::vector<SubjectRow> rows;
    double rmse_train = 0.0;
    double rmse_test = 0.0;
    double r2_train = 0.0;
    double r2_test = 0.0;

    // Pools non-missing rows by tag and recomputes the four aggregates.
    void recompute_aggregates();
};

// c_test from the prediction QP, then c_test . w. nullopt when the QP
// solver fails to converge.
std::optional<double> predict_subject(const Matrix& B_star, const Vector& w_star,
                                      const Matrix& gamma_test, const HyperParams& hp);

// Per fold: fit on out-of-fold subjects (seed derived per fold), predict
// held-out subjects with the prediction QP and training subjects from the
// fitted C. Rows cover every (subject, fold) pair; aggregates pool test rows
// once per subject and train rows across folds.
PredictionReport run_cross_validation(const CohortDataset& data, const TrainerConfig& cfg,
                                      const FoldSplit& split);

}  // namespace netfact
