#pragma once

#include <vector>

#include "netfact/types.hpp"

namespace netfact {

// minimize 1/2 c^T H c + f^T c  subject to  c >= 0
struct QpProblem {
    Matrix H;  // K x K symmetric positive definite
    Vector f;  // length K
};

struct QpSolution {
    Vector c;
    double kkt_residual = 0.0;
    int iterations = 0;
    std::vector<int> active_set;  // indices clamped at zero
    bool converged = false;
    bool jittered = false;                // diagonal jitter was applied
    std::vector<double> objective_trace;  // value after each iterate update
};

// Primal active-set solver with projected-gradient fallback. max_iter <= 0
// selects the default 10 K^2. KKT: g = Hc + f, free |g_i| <= tol, clamped
// g_i >= -tol.
QpSolution solve_nonneg_qp(const QpProblem& prob, double tol = 1e-8, int max_iter = 0);

// H_n = diag(B^T B) + 2 gamma w w^T + 2 lambda2 I
// f_n = -diag(D_n^T B) - diag(Lambda_n^T B) - 2 gamma y_n w
QpProblem build_training_qp(const Matrix& B, const Matrix& D_n, const Matrix& Lambda_n,
                            const Vector& w, double y_n, double gamma, double lambda2);

// Coefficient inference for an unseen matrix: minimize
// ||Gamma - sum_k c_k b_k b_k^T||_F^2 + lambda2 ||c||^2 over c >= 0, i.e.
// H = 2 (B^T B) o (B^T B) + 2 lambda2 I, f_k = -2 b_k^T Gamma b_k.
QpProblem build_prediction_qp(const Matrix& B, const Matrix& gamma_test, double lambda2);

}  // namespace netfact
