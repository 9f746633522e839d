#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "netfact/types.hpp"

namespace netfact {

// The printed update steps by t/lambda1 while thresholding at t; Verbatim
// keeps that coupling, Standard is the usual prox (step t, threshold
// t*lambda1).
enum class ProxVariant { Verbatim, Standard };

struct TrainerConfig {
    HyperParams hp;
    int prox_inner_iters = 1;
    bool line_search = true;
    int trace_every = 1;
    ProxVariant prox_variant = ProxVariant::Verbatim;
    // Independent random initializations; the run with the lowest final plain
    // objective is returned. 1 reproduces the single-init procedure.
    int restarts = 1;
    // Test hook, invoked after every outer iteration.
    std::function<void(int iter, const FactorModel&, const AugmentedState&)> observer;
};

struct TraceRow {
    int iter = 0;
    double aug_step1 = 0.0;  // augmented objective after each step
    double aug_step2 = 0.0;
    double aug_step3 = 0.0;
    double aug_end = 0.0;  // after the D / Lambda update
    double plain = 0.0;    // unaugmented objective
    double fit_term = 0.0;
    double residual = 0.0;
    double b_l1 = 0.0;
    double eta = 0.0;               // dual step used this iteration
    double step1_increase = 0.0;    // positive when a fixed-step update rose
    int step1_halvings = 0;
};

struct TrainTrace {
    double initial_aug = 0.0;
    std::vector<TraceRow> rows;
};

struct FitResult {
    FactorModel model;
    TrainTrace trace;
    int iterations = 0;
    bool converged = false;
    double final_residual = 0.0;
    double final_objective = 0.0;  // plain total
    double final_aug_objective = 0.0;
    int qp_nonconverged = 0;
    int restart_index = 0;
    std::vector<double> restart_objectives;
};

// B ~ U[-1/sqrt(M), 1/sqrt(M)], C ~ U[0,1], w ~ U[-1/sqrt(K), 1/sqrt(K)],
// D_n = B diag(c_n), Lambda_n = 0, eta = eta0.
void initialize(const CohortDataset& data, const HyperParams& hp, std::uint64_t seed,
                FactorModel& model, AugmentedState& aug);

// sum_n [ 2 (B D_n^T D_n - Gamma_n D_n) - D_n V_n + B V_n^2 - Lambda_n V_n ],
// V_n = diag(c_n).
Matrix grad_B(const CohortDataset& data, const FactorModel& model,
              const AugmentedState& aug);

// Soft-threshold update of B; step <= 0 selects hp.step_t.
Matrix prox_step_B(const Matrix& B, const Matrix& grad, const HyperParams& hp,
                   ProxVariant variant = ProxVariant::Verbatim, double step = -1.0);

// Per-subject nonnegative QPs; qp_failures (optional) counts columns whose
// solver returned a non-converged best iterate.
Matrix step2_update_C(const CohortDataset& data, const FactorModel& model,
                      const AugmentedState& aug, const HyperParams& hp,
                      int* qp_failures = nullptr);

// w = (C C^T + (lambda3/gamma) I)^{-1} C y
Vector step3_update_w(const Matrix& C, const Vector& y, double gamma, double lambda3);

// D_n = (B diag(c_n) + 2 Gamma_n B - Lambda_n)(I + 2 B^T B)^{-1}, one shared
// K x K factorization.
std::vector<Matrix> step4_update_D(const CohortDataset& data, const FactorModel& model,
                                   const AugmentedState& aug);

// Lambda_n += eta (D_n - B diag(c_n)); then eta *= decay, floored at 1e-12.
void step4_update_Lambda(const FactorModel& model, AugmentedState& aug,
                         const HyperParams& hp);

FitResult fit(const CohortDataset& data, const TrainerConfig& cfg);

}  // namespace netfact
