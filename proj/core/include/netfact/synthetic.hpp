#pragma once

#include <cstdint>
#include <vector>

#include "netfact/trainer.hpp"
#include "netfact/types.hpp"

namespace netfact {

struct GeneratorConfig {
    int M = 50;
    int N = 100;
    int K_true = 4;
    double sigma_B = 0.2;         // Laplace scale of basis entries
    double sparsity_level = 0.2;  // fraction of nonzeros per column
    double overlap_level = 0.0;   // fraction of support shared between columns
    double sigma_gamma = 0.1;     // elementwise noise std on the matrices
    double sigma_c = 0.1;
    double sigma_w = 0.1;
    double sigma_y = 0.2;
    std::uint64_t rng_seed = 0;
};

struct GroundTruth {
    Matrix B_true;
    Matrix C_true;
    Vector w_true;
};

// Gamma_n = B diag(c_n) B^T + (E + E^T)/2 with E iid N(0, (sigma_gamma
// sqrt(2))^2), so symmetrized off-diagonal noise entries have std
// sigma_gamma; y_n = c_n^T w + N(0, sigma_y); c entries |N(0, sigma_c)|.
void generate_cohort(const GeneratorConfig& cfg, CohortDataset& data, GroundTruth& truth);

// Mean |cosine| between unit-normalized columns under the best one-to-one
// matching; sign and permutation invariant. Zero columns contribute 0 and
// emit a warning.
double recovery_similarity(const Matrix& B_rec, const Matrix& B_true);

struct SweepCell {
    double sigma_gamma = 0.0;
    double sparsity = 0.0;
    double mean_similarity = 0.0;
    double std_similarity = 0.0;
    std::vector<double> trial_similarities;
    bool failed = false;  // fit diverged in some trial
};

struct SweepResult {
    std::vector<double> sigma_grid;
    std::vector<double> sparsity_grid;
    std::vector<std::vector<SweepCell>> cells;  // [sigma index][sparsity index]
};

// Per cell: generate trials cohorts at (sigma, sparsity), fit with cfg (seeds
// derived from base seed, cell indices and trial), score recovery similarity.
SweepResult robustness_sweep(const std::vector<double>& sigma_grid,
                             const std::vector<double>& sparsity_grid, int trials,
                             const GeneratorConfig& base, const TrainerConfig& cfg);

}  // namespace netfact
