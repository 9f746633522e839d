#include "netfact/qp.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>

#include "netfact/exceptions.hpp"

namespace netfact {

namespace {

double qp_objective(const QpProblem& p, const Vector& c) {
    return 0.5 * c.dot(p.H * c) + p.f.dot(c);
}

// KKT residual at x for g = Hx + f with free/clamped split by x_i > 0.
double kkt_residual_at(const QpProblem& p, const Vector& x, Vector& g) {
    g = p.H * x + p.f;
    double r = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        if (x(i) > 0.0)
            r = std::max(r, std::abs(g(i)));
        else
            r = std::max(r, std::max(0.0, -g(i)));
    }
    return r;
}

// Diminishing-step projected gradient; used when the active-set path stalls
// on ill-conditioned H. Returns the best iterate seen.
void projected_gradient_fallback(const QpProblem& p, double tol, QpSolution& sol) {
    const int k = static_cast<int>(p.f.size());
    double lips = 0.0;
    for (int i = 0; i < k; ++i) lips = std::max(lips, p.H.row(i).cwiseAbs().sum());
    if (lips <= 0.0) lips = 1.0;
    Vector x = sol.c;
    Vector best = x;
    double best_obj = qp_objective(p, x);
    Vector g;
    const int max_pg = 20000;
    for (int t = 0; t < max_pg; ++t) {
        const double r = kkt_residual_at(p, x, g);
        if (r <= tol) break;
        const double step = 1.0 / (lips * (1.0 + t / 100.0));
        x = (x - step * g).cwiseMax(0.0);
        const double obj = qp_objective(p, x);
        if (obj < best_obj) {
            best_obj = obj;
            best = x;
        }
        ++sol.iterations;
    }
    sol.c = best;
    sol.kkt_residual = kkt_residual_at(p, sol.c, g);
    sol.converged = sol.kkt_residual <= tol;
}

}  // namespace

QpSolution solve_nonneg_qp(const QpProblem& prob, double tol, int max_iter) {
    const int k = static_cast<int>(prob.f.size());
    if (prob.H.rows() != k || prob.H.cols() != k)
        throw DataError("QP dimensions inconsistent");
    if (k == 0) throw DataError("empty QP");
    if ((prob.H - prob.H.transpose()).cwiseAbs().maxCoeff() >
        1e-10 * std::max(1.0, prob.H.cwiseAbs().maxCoeff()))
        throw NumericalError("QP matrix not symmetric");
    if ((prob.H.diagonal().array() <= 0.0).any())
        throw NumericalError("QP matrix not positive definite");
    if (tol <= 0.0) throw ConfigError("QP tolerance must be positive");
    if (max_iter <= 0) max_iter = 10 * k * k;

    Matrix H = prob.H;
    QpSolution sol;
    sol.c = Vector::Zero(k);
    sol.objective_trace.push_back(qp_objective(prob, sol.c));

    std::vector<bool> free_var(k, false);
    Vector g;
    bool stalled = false;

    const double hscale = H.cwiseAbs().maxCoeff();
    while (sol.iterations < max_iter) {
        sol.kkt_residual = kkt_residual_at(prob, sol.c, g);
        if (sol.kkt_residual <= tol) {
            sol.converged = true;
            break;
        }
        // Free the clamped coordinate with the most negative gradient.
        int pick = -1;
        double worst = -tol;
        for (int i = 0; i < k; ++i) {
            if (!free_var[i] && g(i) < worst) {
                worst = g(i);
                pick = i;
            }
        }
        if (pick < 0) {
            // Residual comes from the free set; re-optimizing below handles
            // it. If no variable is free either, nothing can improve.
            bool any_free = std::any_of(free_var.begin(), free_var.end(),
                                        [](bool b) { return b; });
            if (!any_free) {
                stalled = true;
                break;
            }
        } else {
            free_var[pick] = true;
        }

        // Re-optimize over the free set with ratio-test clamping.
        bool inner_ok = true;
        for (int guard = 0; guard <= k; ++guard) {
            std::vector<int> fidx;
            for (int i = 0; i < k; ++i)
                if (free_var[i]) fidx.push_back(i);
            if (fidx.empty()) break;
            const int nf = static_cast<int>(fidx.size());
            Matrix hff(nf, nf);
            Vector ff(nf);
            for (int a = 0; a < nf; ++a) {
                ff(a) = prob.f(fidx[a]);
                for (int b = 0; b < nf; ++b) hff(a, b) = H(fidx[a], fidx[b]);
            }
            Eigen::LDLT<Matrix> ldlt(hff);
            bool bad = ldlt.info() != Eigen::Success ||
                       ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, hscale);
            if (bad && !sol.jittered) {
                H.diagonal().array() += 1e-12;  // degenerate H, jitter once
                sol.jittered = true;
                for (int a = 0; a < nf; ++a) hff(a, a) = H(fidx[a], fidx[a]);
                ldlt.compute(hff);
                bad = ldlt.info() != Eigen::Success ||
                      ldlt.vectorD().minCoeff() <= 0.0;
            }
            if (bad) {
                inner_ok = false;
                break;
            }
            Vector z = ldlt.solve(-ff);
            if ((z.array() >= 0.0).all()) {
                for (int i = 0; i < k; ++i) sol.c(i) = 0.0;
                for (int a = 0; a < nf; ++a) sol.c(fidx[a]) = z(a);
                break;
            }
            // Blocking-constraint step: x <- x + alpha (z - x).
            double alpha = 1.0;
            for (int a = 0; a < nf; ++a) {
                if (z(a) < 0.0) {
                    const double xa = sol.c(fidx[a]);
                    alpha = std::min(alpha, xa / (xa - z(a)));
                }
            }
            for (int a = 0; a < nf; ++a) {
                const int i = fidx[a];
                sol.c(i) += alpha * (z(a) - sol.c(i));
            }
            for (int a = 0; a < nf; ++a) {
                const int i = fidx[a];
                if (z(a) < 0.0 && sol.c(i) <= 1e-15 * std::max(1.0, sol.c.maxCoeff())) {
                    sol.c(i) = 0.0;
                    free_var[i] = false;
                }
            }
            sol.objective_trace.push_back(qp_objective(prob, sol.c));
        }
        sol.objective_trace.push_back(qp_objective(prob, sol.c));
        ++sol.iterations;
        if (!inner_ok) {
            stalled = true;
            break;
        }
    }

    if (!sol.converged || stalled) projected_gradient_fallback(prob, tol, sol);

    sol.active_set.clear();
    for (int i = 0; i < k; ++i)
        if (sol.c(i) == 0.0) sol.active_set.push_back(i);
    sol.objective_trace.push_back(qp_objective(prob, sol.c));
    return sol;
}

QpProblem build_training_qp(const Matrix& B, const Matrix& D_n, const Matrix& Lambda_n,
                            const Vector& w, double y_n, double gamma, double lambda2) {
    const int k = static_cast<int>(B.cols());
    if (D_n.rows() != B.rows() || D_n.cols() != k || Lambda_n.rows() != B.rows() ||
        Lambda_n.cols() != k || w.size() != k)
        throw DataError("training QP shape mismatch");
    QpProblem p;
    p.H = Matrix(B.colwise().squaredNorm().asDiagonal());
    p.H.noalias() += 2.0 * gamma * (w * w.transpose());
    p.H.diagonal().array() += 2.0 * lambda2;
    p.f = -(D_n.cwiseProduct(B)).colwise().sum().transpose() -
          (Lambda_n.cwiseProduct(B)).colwise().sum().transpose() - 2.0 * gamma * y_n * w;
    return p;
}

QpProblem build_prediction_qp(const Matrix& B, const Matrix& gamma_test, double lambda2) {
    if (gamma_test.rows() != B.rows() || gamma_test.cols() != B.rows())
        throw DataError("prediction QP shape mismatch");
    const Matrix gram = B.transpose() * B;
    QpProblem p;
    p.H = 2.0 * gram.cwiseProduct(gram);
    p.H.diagonal().array() += 2.0 * lambda2;
    const Matrix gb = gamma_test * B;
    p.f = -2.0 * (B.cwiseProduct(gb)).colwise().sum().transpose();
    return p;
}

}  // namespace netfact
