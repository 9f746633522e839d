#include "netfact/trainer.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "netfact/exceptions.hpp"
#include "netfact/model.hpp"
#include "netfact/parallel.hpp"
#include "netfact/qp.hpp"
#include "netfact/random.hpp"

namespace netfact {

namespace {

void check_config(const TrainerConfig& cfg) {
    const HyperParams& hp = cfg.hp;
    if (hp.K < 1) throw ConfigError("K must be at least 1");
    if (hp.step_t <= 0.0) throw ConfigError("step_t must be positive");
    if (hp.gamma <= 0.0) throw ConfigError("gamma must be positive");
    if (hp.lambda1 < 0.0 || hp.lambda2 < 0.0 || hp.lambda3 < 0.0)
        throw ConfigError("regularization weights must be nonnegative");
    if (cfg.prox_variant == ProxVariant::Verbatim && hp.lambda1 <= 0.0)
        throw ConfigError("lambda1 must be positive for the verbatim proximal step");
    if (cfg.prox_inner_iters < 1) throw ConfigError("prox_inner_iters must be >= 1");
    if (cfg.trace_every < 1) throw ConfigError("trace_every must be >= 1");
    if (cfg.restarts < 1) throw ConfigError("restarts must be >= 1");
    if (hp.max_outer_iters < 0) throw ConfigError("max_outer_iters must be >= 0");
    if (hp.eta0 <= 0.0) throw ConfigError("eta0 must be positive");
    if (hp.eta_decay <= 0.0 || hp.eta_decay > 1.0)
        throw ConfigError("eta_decay must be in (0, 1]");
}

FitResult fit_single(const CohortDataset& data, const TrainerConfig& cfg,
                     std::uint64_t seed) {
    const HyperParams& hp = cfg.hp;
    FitResult res;
    FactorModel& model = res.model;
    AugmentedState aug;
    initialize(data, hp, seed, model, aug);

    double j_prev = eval_augmented_objective(data, model, aug, hp);
    res.trace.initial_aug = j_prev;
    int streak = 0;

    for (int iter = 0; iter < hp.max_outer_iters; ++iter) {
        TraceRow row;
        row.iter = iter;
        row.eta = aug.eta;
        const double j_enter = j_prev;

        // Step 1: proximal update(s) of B.
        double j_cur = j_enter;
        for (int inner = 0; inner < cfg.prox_inner_iters; ++inner) {
            const Matrix grad = grad_B(data, model, aug);
            if (cfg.line_search) {
                double t_eff = hp.step_t;
                bool accepted = false;
                for (int h = 0; h <= 20; ++h) {
                    Matrix cand = prox_step_B(model.B, grad, hp, cfg.prox_variant, t_eff);
                    FactorModel trial = model;
                    trial.B = std::move(cand);
                    const double j_trial = eval_augmented_objective(data, trial, aug, hp);
                    if (j_trial <= j_cur) {
                        model.B = std::move(trial.B);
                        j_cur = j_trial;
                        accepted = true;
                        row.step1_halvings += h;
                        break;
                    }
                    t_eff *= 0.5;
                }
                if (!accepted) row.step1_halvings += 21;  // B left unchanged
            } else {
                model.B = prox_step_B(model.B, grad, hp, cfg.prox_variant);
                j_cur = eval_augmented_objective(data, model, aug, hp);
            }
        }
        row.aug_step1 = j_cur;
        row.step1_increase = std::max(0.0, j_cur - j_enter);

        // Step 2: per-subject nonnegative QPs for C.
        int qp_failures = 0;
        model.C = step2_update_C(data, model, aug, hp, &qp_failures);
        res.qp_nonconverged += qp_failures;
        row.aug_step2 = eval_augmented_objective(data, model, aug, hp);

        // Step 3: ridge solve for w.
        model.w = step3_update_w(model.C, data.scores, hp.gamma, hp.lambda3);
        row.aug_step3 = eval_augmented_objective(data, model, aug, hp);

        // Step 4: splitting variables and dual ascent.
        aug.D = step4_update_D(data, model, aug);
        row.residual = constraint_residual(model, aug);
        step4_update_Lambda(model, aug, hp);
        row.aug_end = eval_augmented_objective(data, model, aug, hp);

        if (!std::isfinite(row.aug_end))
            throw NumericalError("augmented objective non-finite at iteration " +
                                 std::to_string(iter) + "; last finite value " +
                                 std::to_string(j_prev));

        const ObjectiveTerms plain = eval_objective(data, model, hp);
        row.plain = plain.total();
        row.fit_term = plain.fit;
        row.b_l1 = model.B.cwiseAbs().sum();

        res.iterations = iter + 1;
        res.final_residual = row.residual;
        const double rel = std::abs(row.aug_end - j_prev) / std::max(1.0, std::abs(j_prev));
        streak = rel < hp.tol_objective ? streak + 1 : 0;
        j_prev = row.aug_end;

        if (iter % cfg.trace_every == 0 || iter == hp.max_outer_iters - 1)
            res.trace.rows.push_back(row);
        else if (!res.trace.rows.empty() && res.trace.rows.back().iter < iter &&
                 streak >= 3 && row.residual < hp.tol_constraint)
            res.trace.rows.push_back(row);  // always keep the stopping record

        if (cfg.observer) cfg.observer(iter, model, aug);

        if (streak >= 3 && row.residual < hp.tol_constraint) {
            res.converged = true;
            break;
        }
    }

    if (hp.max_outer_iters == 0) res.final_residual = constraint_residual(model, aug);
    res.final_aug_objective = j_prev;
    res.final_objective = eval_objective(data, model, hp).total();
    // D and Lambda are discarded; the residual above certifies the split.
    return res;
}

}  // namespace

void initialize(const CohortDataset& data, const HyperParams& hp, std::uint64_t seed,
                FactorModel& model, AugmentedState& aug) {
    const int m = data.n_nodes();
    const int n = data.n_subjects();
    const int k = hp.K;
    if (k < 1) throw ConfigError("K must be at least 1");
    Rng rng = make_rng(derive_seed(seed, "init"));
    const double b_lim = 1.0 / std::sqrt(static_cast<double>(m));
    const double w_lim = 1.0 / std::sqrt(static_cast<double>(k));
    model.B.resize(m, k);
    for (int j = 0; j < k; ++j)
        for (int i = 0; i < m; ++i) model.B(i, j) = draw_uniform(rng, -b_lim, b_lim);
    model.C.resize(k, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < k; ++i) model.C(i, j) = draw_uniform(rng, 0.0, 1.0);
    model.w.resize(k);
    for (int i = 0; i < k; ++i) model.w(i) = draw_uniform(rng, -w_lim, w_lim);
    aug.D.resize(n);
    aug.Lambda.assign(n, Matrix::Zero(m, k));
    for (int i = 0; i < n; ++i) aug.D[i] = model.B * model.C.col(i).asDiagonal();
    aug.eta = hp.eta0;
}

Matrix grad_B(const CohortDataset& data, const FactorModel& model,
              const AugmentedState& aug) {
    const std::size_t n = static_cast<std::size_t>(data.n_subjects());
    const int m = model.n_nodes();
    const int k = model.n_components();
    if (aug.D.size() != n || aug.Lambda.size() != n)
        throw DataError("augmented state size mismatch");
    std::vector<Matrix> slot(parallel::chunk_count(n), Matrix::Zero(m, k));
    parallel::for_chunks(n, [&](std::size_t begin, std::size_t end, std::size_t c) {
        Matrix acc = Matrix::Zero(m, k);
        for (std::size_t i = begin; i < end; ++i) {
            const auto v = model.C.col(static_cast<int>(i));
            const Matrix& d = aug.D[i];
            acc.noalias() += 2.0 * (model.B * (d.transpose() * d));
            acc.noalias() -= 2.0 * (data.gammas[i] * d);
            acc.noalias() -= d * v.asDiagonal();
            acc.noalias() += model.B * v.cwiseProduct(v).asDiagonal();
            acc.noalias() -= aug.Lambda[i] * v.asDiagonal();
        }
        slot[c] = std::move(acc);
    });
    Matrix total = Matrix::Zero(m, k);
    for (const Matrix& s : slot) total += s;
    return total;
}

Matrix prox_step_B(const Matrix& B, const Matrix& grad, const HyperParams& hp,
                   ProxVariant variant, double step) {
    const double t = step > 0.0 ? step : hp.step_t;
    double grad_scale, threshold;
    if (variant == ProxVariant::Verbatim) {
        if (hp.lambda1 <= 0.0)
            throw ConfigError("lambda1 must be positive for the verbatim proximal step");
        grad_scale = t / hp.lambda1;  // step by t/lambda1, threshold at t
        threshold = t;
    } else {
        grad_scale = t;
        threshold = t * hp.lambda1;
    }
    const Matrix x = B - grad_scale * grad;
    return x.array().sign() * (x.array().abs() - threshold).max(0.0);
}

Matrix step2_update_C(const CohortDataset& data, const FactorModel& model,
                      const AugmentedState& aug, const HyperParams& hp,
                      int* qp_failures) {
    const std::size_t n = static_cast<std::size_t>(data.n_subjects());
    const int k = model.n_components();
    Matrix c_new(k, static_cast<int>(n));
    std::vector<char> failed(n, 0);
    parallel::for_each_index(n, [&](std::size_t i) {
        const QpProblem prob =
            build_training_qp(model.B, aug.D[i], aug.Lambda[i], model.w,
                              data.scores(static_cast<int>(i)), hp.gamma, hp.lambda2);
        const QpSolution sol = solve_nonneg_qp(prob);
        c_new.col(static_cast<int>(i)) = sol.c;
        if (!sol.converged) failed[i] = 1;
    });
    if (qp_failures)
        *qp_failures = static_cast<int>(std::accumulate(failed.begin(), failed.end(), 0));
    return c_new;
}

Vector step3_update_w(const Matrix& C, const Vector& y, double gamma, double lambda3) {
    if (gamma <= 0.0) throw ConfigError("gamma must be positive");
    if (C.cols() != y.size()) throw DataError("C and y sizes are inconsistent");
    const int k = static_cast<int>(C.rows());
    Matrix sys = C * C.transpose();
    sys.diagonal().array() += lambda3 / gamma;
    Eigen::LDLT<Matrix> ldlt(sys);
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("w update system could not be factorized");
    return ldlt.solve(C * y);
}

std::vector<Matrix> step4_update_D(const CohortDataset& data, const FactorModel& model,
                                   const AugmentedState& aug) {
    const std::size_t n = static_cast<std::size_t>(data.n_subjects());
    const int k = model.n_components();
    Matrix sys = 2.0 * (model.B.transpose() * model.B);
    sys.diagonal().array() += 1.0;
    const Eigen::LDLT<Matrix> ldlt(sys);  // shared across subjects
    if (ldlt.info() != Eigen::Success)
        throw NumericalError("D update system could not be factorized");
    std::vector<Matrix> d_new(n);
    parallel::for_each_index(n, [&](std::size_t i) {
        Matrix rhs = model.B * model.C.col(static_cast<int>(i)).asDiagonal();
        rhs.noalias() += 2.0 * (data.gammas[i] * model.B);
        rhs -= aug.Lambda[i];
        d_new[i] = ldlt.solve(rhs.transpose()).transpose();
    });
    return d_new;
}

void step4_update_Lambda(const FactorModel& model, AugmentedState& aug,
                         const HyperParams& hp) {
    if (aug.eta <= 0.0) throw ConfigError("eta must be positive");
    const std::size_t n = aug.D.size();
    parallel::for_each_index(n, [&](std::size_t i) {
        const Matrix bv = model.B * model.C.col(static_cast<int>(i)).asDiagonal();
        aug.Lambda[i].noalias() += aug.eta * (aug.D[i] - bv);
    });
    aug.eta = std::max(aug.eta * hp.eta_decay, 1e-12);
}

FitResult fit(const CohortDataset& data, const TrainerConfig& cfg) {
    check_config(cfg);
    if (data.n_subjects() < 1) throw DataError("dataset has no subjects");
    if (cfg.restarts == 1) {
        FitResult res = fit_single(data, cfg, cfg.hp.rng_seed);
        res.restart_objectives = {res.final_objective};
        return res;
    }
    FitResult best;
    bool have_best = false;
    std::vector<double> objectives;
    std::string last_error;
    for (int r = 0; r < cfg.restarts; ++r) {
        const std::uint64_t seed = r == 0
                                       ? cfg.hp.rng_seed
                                       : derive_seed(cfg.hp.rng_seed, "restart",
                                                     static_cast<std::uint64_t>(r));
        try {
            FitResult res = fit_single(data, cfg, seed);
            objectives.push_back(res.final_objective);
            if (!have_best || res.final_objective < best.final_objective) {
                res.restart_index = r;
                best = std::move(res);
                have_best = true;
            }
        } catch (const NumericalError& e) {
            objectives.push_back(std::numeric_limits<double>::infinity());
            last_error = e.what();
        }
    }
    if (!have_best)
        throw NumericalError("all restarts diverged; last error: " + last_error);
    best.restart_objectives = std::move(objectives);
    return best;
}

}  // namespace netfact
