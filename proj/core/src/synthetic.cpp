#include "netfact/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <numeric>

#include "netfact/assignment.hpp"
#include "netfact/exceptions.hpp"
#include "netfact/random.hpp"

namespace netfact {

namespace {

void check_generator_config(const GeneratorConfig& cfg) {
    if (cfg.M < 2) throw ConfigError("generator M must be at least 2");
    if (cfg.N < 1) throw ConfigError("generator N must be at least 1");
    if (cfg.K_true < 1) throw ConfigError("generator K_true must be at least 1");
    if (!(cfg.sparsity_level > 0.0 && cfg.sparsity_level <= 1.0))
        throw ConfigError("sparsity_level must lie in (0, 1]");
    if (!(cfg.overlap_level >= 0.0 && cfg.overlap_level <= 1.0))
        throw ConfigError("overlap_level must lie in [0, 1]");
    if (cfg.sigma_B <= 0.0) throw ConfigError("sigma_B must be positive");
    if (cfg.sigma_gamma < 0.0 || cfg.sigma_c < 0.0 || cfg.sigma_w < 0.0 ||
        cfg.sigma_y < 0.0)
        throw ConfigError("noise scales must be nonnegative");
}

// Column supports: a shared core of size overlap*support plus per-column
// remainders drawn from the complement, disjointly until the pool runs out.
std::vector<std::vector<int>> draw_supports(const GeneratorConfig& cfg, Rng& rng) {
    const int m = cfg.M;
    const int s = std::min<long>(m, std::lround(cfg.sparsity_level * m));
    if (s <= 0) throw ConfigError("support size rounds to 0");
    int core = static_cast<int>(std::lround(cfg.overlap_level * s));
    core = std::clamp(core, 0, s);

    std::vector<int> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<int> core_idx(order.begin(), order.begin() + core);
    std::vector<int> pool(order.begin() + core, order.end());
    if (s - core > static_cast<int>(pool.size()))
        throw ConfigError("overlap infeasible for requested support size");

    std::vector<std::vector<int>> supports(cfg.K_true);
    std::size_t cursor = 0;
    for (int k = 0; k < cfg.K_true; ++k) {
        std::vector<char> in_col(m, 0);
        std::vector<int>& sup = supports[k];
        sup = core_idx;
        for (int idx : sup) in_col[idx] = 1;
        std::size_t skips = 0;
        while (static_cast<int>(sup.size()) < s) {
            if (cursor >= pool.size()) {
                std::shuffle(pool.begin(), pool.end(), rng);
                cursor = 0;
            }
            const int idx = pool[cursor++];
            if (in_col[idx]) {
                if (++skips > 2 * pool.size() + 1)
                    throw ConfigError("overlap infeasible for requested support size");
                continue;
            }
            skips = 0;
            in_col[idx] = 1;
            sup.push_back(idx);
        }
        std::sort(sup.begin(), sup.end());
    }
    return supports;
}

}  // namespace

void generate_cohort(const GeneratorConfig& cfg, CohortDataset& data, GroundTruth& truth) {
    check_generator_config(cfg);
    const int m = cfg.M, n = cfg.N, k = cfg.K_true;

    Rng rng_support = make_rng(derive_seed(cfg.rng_seed, "support"));
    const auto supports = draw_supports(cfg, rng_support);

    Rng rng_basis = make_rng(derive_seed(cfg.rng_seed, "basis"));
    truth.B_true = Matrix::Zero(m, k);
    for (int j = 0; j < k; ++j)
        for (int idx : supports[j]) truth.B_true(idx, j) = draw_laplace(rng_basis, cfg.sigma_B);

    Rng rng_coeff = make_rng(derive_seed(cfg.rng_seed, "coeffs"));
    truth.C_true.resize(k, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < k; ++i)
            truth.C_true(i, j) = std::abs(draw_normal(rng_coeff, cfg.sigma_c));

    Rng rng_w = make_rng(derive_seed(cfg.rng_seed, "weights"));
    truth.w_true.resize(k);
    for (int i = 0; i < k; ++i) truth.w_true(i) = draw_normal(rng_w, cfg.sigma_w);

    data.gammas.assign(n, Matrix());
    const double noise_std = cfg.sigma_gamma * std::sqrt(2.0);
    for (int j = 0; j < n; ++j) {
        Matrix g = truth.B_true * truth.C_true.col(j).asDiagonal() *
                   truth.B_true.transpose();
        if (cfg.sigma_gamma > 0.0) {
            Rng rng_noise = make_rng(
                derive_seed(cfg.rng_seed, "noise", static_cast<std::uint64_t>(j)));
            Matrix e(m, m);
            for (int col = 0; col < m; ++col)
                for (int row = 0; row < m; ++row) e(row, col) = draw_normal(rng_noise, noise_std);
            g += 0.5 * (e + e.transpose());
        }
        data.gammas[j] = 0.5 * (g + g.transpose());
    }

    Rng rng_y = make_rng(derive_seed(cfg.rng_seed, "scores"));
    data.scores.resize(n);
    for (int j = 0; j < n; ++j) {
        double y = truth.C_true.col(j).dot(truth.w_true);
        if (cfg.sigma_y > 0.0) y += draw_normal(rng_y, cfg.sigma_y);
        data.scores(j) = y;
    }

    data.subject_ids.resize(n);
    char buf[32];
    for (int j = 0; j < n; ++j) {
        std::snprintf(buf, sizeof(buf), "subj%04d", j);
        data.subject_ids[j] = buf;
    }
}

double recovery_similarity(const Matrix& B_rec, const Matrix& B_true) {
    if (B_rec.rows() != B_true.rows() || B_rec.cols() != B_true.cols())
        throw DataError("recovery_similarity shape mismatch");
    const int k = static_cast<int>(B_rec.cols());
    if (k == 0) throw DataError("recovery_similarity on empty basis");
    Matrix u = B_rec, v = B_true;
    bool warned = false;
    for (Matrix* mat : {&u, &v}) {
        for (int j = 0; j < k; ++j) {
            const double norm = mat->col(j).norm();
            if (norm < 1e-300) {
                mat->col(j).setZero();  // contributes 0 to the mean
                if (!warned) {
                    std::cerr << "warning: zero column in recovery_similarity input\n";
                    warned = true;
                }
            } else {
                mat->col(j) /= norm;
            }
        }
    }
    const Matrix sim = (u.transpose() * v).cwiseAbs();
    const std::vector<int> match = max_weight_assignment(sim);
    double total = 0.0;
    for (int i = 0; i < k; ++i) total += sim(i, match[i]);
    return total / k;
}

SweepResult robustness_sweep(const std::vector<double>& sigma_grid,
                             const std::vector<double>& sparsity_grid, int trials,
                             const GeneratorConfig& base, const TrainerConfig& cfg) {
    if (sigma_grid.empty() || sparsity_grid.empty())
        throw ConfigError("sweep grid must be non-empty");
    if (trials < 1) throw ConfigError("sweep needs at least one trial per cell");
    SweepResult res;
    res.sigma_grid = sigma_grid;
    res.sparsity_grid = sparsity_grid;
    res.cells.resize(sigma_grid.size());
    for (std::size_t i = 0; i < sigma_grid.size(); ++i) {
        res.cells[i].resize(sparsity_grid.size());
        for (std::size_t j = 0; j < sparsity_grid.size(); ++j) {
            SweepCell& cell = res.cells[i][j];
            cell.sigma_gamma = sigma_grid[i];
            cell.sparsity = sparsity_grid[j];
            double sum = 0.0, sumsq = 0.0;
            int ok = 0;
            for (int t = 0; t < trials; ++t) {
                GeneratorConfig gen = base;
                gen.sigma_gamma = sigma_grid[i];
                gen.sparsity_level = sparsity_grid[j];
                gen.rng_seed = derive_seed(base.rng_seed, "cell",
                                           static_cast<std::uint64_t>(i),
                                           static_cast<std::uint64_t>(j),
                                           static_cast<std::uint64_t>(t));
                CohortDataset data;
                GroundTruth truth;
                generate_cohort(gen, data, truth);
                TrainerConfig tc = cfg;
                tc.hp.rng_seed = derive_seed(gen.rng_seed, "fit", cfg.hp.rng_seed);
                try {
                    const FitResult fr = fit(data, tc);
                    const double sim = recovery_similarity(fr.model.B, truth.B_true);
                    cell.trial_similarities.push_back(sim);
                    sum += sim;
                    sumsq += sim * sim;
                    ++ok;
                } catch (const NumericalError&) {
                    cell.failed = true;
                    cell.trial_similarities.push_back(
                        std::numeric_limits<double>::quiet_NaN());
                }
            }
            if (ok > 0) {
                cell.mean_similarity = sum / ok;
                const double var =
                    ok > 1 ? std::max(0.0, (sumsq - sum * sum / ok) / (ok - 1)) : 0.0;
                cell.std_similarity = std::sqrt(var);
            } else {
                cell.mean_similarity = std::numeric_limits<double>::quiet_NaN();
                cell.std_similarity = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return res;
}

}  // namespace netfact
