#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace netfact {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// N symmetric M x M correlation matrices plus one scalar score per subject.
struct CohortDataset {
    std::vector<Matrix> gammas;        // each M x M, symmetric
    Vector scores;                     // length N
    std::vector<std::string> subject_ids;  // optional; empty or length N

    int n_subjects() const { return static_cast<int>(gammas.size()); }
    int n_nodes() const { return gammas.empty() ? 0 : static_cast<int>(gammas.front().rows()); }
};

// Shared basis B (M x K), nonnegative coefficients C (K x N), weights w (K).
struct FactorModel {
    Matrix B;
    Matrix C;
    Vector w;

    int n_nodes() const { return static_cast<int>(B.rows()); }
    int n_components() const { return static_cast<int>(B.cols()); }
    int n_subjects() const { return static_cast<int>(C.cols()); }
};

// Splitting variables D_n and multipliers Lambda_n of the augmented problem.
struct AugmentedState {
    std::vector<Matrix> D;       // each M x K
    std::vector<Matrix> Lambda;  // each M x K
    double eta = 1e-3;
};

struct HyperParams {
    double gamma = 1.0;     // prediction loss weight
    double lambda1 = 30.0;  // l1 on B
    double lambda2 = 0.2;   // l2 on C
    double lambda3 = 1.0;   // l2 on w
    double step_t = 0.001;  // proximal step for B
    int K = 8;              // number of components

    double eta0 = 1e-3;        // initial dual step
    double eta_decay = 0.75;   // per-iteration multiplier, floored at 1e-12
    int max_outer_iters = 200;
    double tol_objective = 1e-5;
    double tol_constraint = 1e-3;
    std::uint64_t rng_seed = 0;
};

}  // namespace netfact
