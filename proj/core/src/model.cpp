#include "netfact/model.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <vector>

#include "netfact/exceptions.hpp"
#include "netfact/parallel.hpp"

namespace netfact {

void validate_dataset(CohortDataset& data, double sym_tol) {
    const int n = data.n_subjects();
    if (n < 1) throw DataError("dataset has no subjects");
    if (data.scores.size() != n)
        throw DataError("score count " + std::to_string(data.scores.size()) +
                        " does not match subject count " + std::to_string(n));
    if (!data.subject_ids.empty() && static_cast<int>(data.subject_ids.size()) != n)
        throw DataError("subject id count does not match subject count");
    const int m = static_cast<int>(data.gammas.front().rows());
    if (m < 2) throw DataError("matrices must be at least 2 x 2");
    for (int i = 0; i < n; ++i) {
        Matrix& g = data.gammas[i];
        if (g.rows() != g.cols())
            throw DataError("matrix " + std::to_string(i) + " is not square");
        if (g.rows() != m)
            throw DataError("matrix " + std::to_string(i) + " has size " +
                            std::to_string(g.rows()) + ", expected " + std::to_string(m));
        if (!g.allFinite())
            throw DataError("matrix " + std::to_string(i) + " contains non-finite entries");
        const double asym = (g - g.transpose()).cwiseAbs().maxCoeff();
        if (asym > sym_tol)
            throw DataError("matrix " + std::to_string(i) + " asymmetry " +
                            std::to_string(asym) + " exceeds tolerance");
        g = 0.5 * (g + g.transpose()).eval();
    }
    if (!data.scores.allFinite()) throw DataError("scores contain non-finite entries");
}

int deflate_first_eigenvector(CohortDataset& data) {
    int ambiguous = 0;
    for (Matrix& g : data.gammas) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
        if (eig.info() != Eigen::Success)
            throw NumericalError("eigendecomposition failed during deflation");
        const int m = static_cast<int>(g.rows());
        const double top = eig.eigenvalues()(m - 1);
        if (m >= 2) {
            const double second = eig.eigenvalues()(m - 2);
            if (std::abs(top - second) <= 1e-12 * std::max(1.0, std::abs(top))) ++ambiguous;
        }
        const Vector v = eig.eigenvectors().col(m - 1);
        g -= top * (v * v.transpose());
        g = 0.5 * (g + g.transpose()).eval();
    }
    return ambiguous;
}

namespace {

// Chunked parallel sum over subjects; sequential reduce keeps the result
// independent of thread count.
template <typename PerSubject>
double chunked_sum(std::size_t n, PerSubject&& per_subject) {
    std::vector<double> slot(parallel::chunk_count(n), 0.0);
    parallel::for_chunks(n, [&](std::size_t begin, std::size_t end, std::size_t c) {
        double acc = 0.0;
        for (std::size_t i = begin; i < end; ++i) acc += per_subject(i);
        slot[c] = acc;
    });
    double total = 0.0;
    for (double s : slot) total += s;
    return total;
}

}  // namespace

ObjectiveTerms eval_objective(const CohortDataset& data, const FactorModel& model,
                              const HyperParams& hp) {
    const std::size_t n = static_cast<std::size_t>(data.n_subjects());
    ObjectiveTerms terms;
    terms.fit = chunked_sum(n, [&](std::size_t i) {
        const Matrix bv = model.B * model.C.col(static_cast<int>(i)).asDiagonal();
        return (data.gammas[i] - bv * model.B.transpose()).squaredNorm();
    });
    terms.prediction =
        hp.gamma * (data.scores - model.C.transpose() * model.w).squaredNorm();
    terms.l1_B = hp.lambda1 * model.B.cwiseAbs().sum();
    terms.l2_C = hp.lambda2 * model.C.squaredNorm();
    terms.l2_w = hp.lambda3 * model.w.squaredNorm();
    return terms;
}

double eval_augmented_objective(const CohortDataset& data, const FactorModel& model,
                                const AugmentedState& state, const HyperParams& hp) {
    const std::size_t n = static_cast<std::size_t>(data.n_subjects());
    const double coupled = chunked_sum(n, [&](std::size_t i) {
        const Matrix bv = model.B * model.C.col(static_cast<int>(i)).asDiagonal();
        const Matrix gap = state.D[i] - bv;
        double v = (data.gammas[i] - state.D[i] * model.B.transpose()).squaredNorm();
        v += (state.Lambda[i].array() * gap.array()).sum();  // Tr(Lambda^T gap)
        v += 0.5 * gap.squaredNorm();
        return v;
    });
    const double prediction =
        hp.gamma * (data.scores - model.C.transpose() * model.w).squaredNorm();
    return coupled + prediction + hp.lambda1 * model.B.cwiseAbs().sum() +
           hp.lambda2 * model.C.squaredNorm() + hp.lambda3 * model.w.squaredNorm();
}

double constraint_residual(const FactorModel& model, const AugmentedState& state) {
    const std::size_t n = state.D.size();
    std::vector<double> slot(parallel::chunk_count(n), 0.0);
    parallel::for_chunks(n, [&](std::size_t begin, std::size_t end, std::size_t c) {
        double worst = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            const Matrix bv = model.B * model.C.col(static_cast<int>(i)).asDiagonal();
            const double rel =
                (state.D[i] - bv).norm() / std::max(1.0, bv.norm());
            worst = std::max(worst, rel);
        }
        slot[c] = worst;
    });
    double worst = 0.0;
    for (double s : slot) worst = std::max(worst, s);
    return worst;
}

}  // namespace netfact
