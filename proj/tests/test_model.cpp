#include <cmath>
#include <limits>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "netfact/exceptions.hpp"
#include "netfact/model.hpp"
#include "netfact/random.hpp"

using namespace netfact;

namespace {

// Straight-line re-derivations of the objective values, kept deliberately
// naive (no shared code with the library evaluators).
double naive_plain(const CohortDataset& data, const FactorModel& model,
                   const HyperParams& hp) {
    const int m = model.n_nodes(), k = model.n_components(), n = model.n_subjects();
    double fit = 0.0;
    for (int s = 0; s < n; ++s) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                double r = data.gammas[s](i, j);
                for (int q = 0; q < k; ++q) r -= model.B(i, q) * model.C(q, s) * model.B(j, q);
                fit += r * r;
            }
    }
    double pred = 0.0;
    for (int s = 0; s < n; ++s) {
        double e = data.scores(s);
        for (int q = 0; q < k; ++q) e -= model.C(q, s) * model.w(q);
        pred += e * e;
    }
    double l1 = 0.0, l2c = 0.0, l2w = 0.0;
    for (int i = 0; i < m; ++i)
        for (int q = 0; q < k; ++q) l1 += std::abs(model.B(i, q));
    for (int q = 0; q < k; ++q)
        for (int s = 0; s < n; ++s) l2c += model.C(q, s) * model.C(q, s);
    for (int q = 0; q < k; ++q) l2w += model.w(q) * model.w(q);
    return fit + hp.gamma * pred + hp.lambda1 * l1 + hp.lambda2 * l2c + hp.lambda3 * l2w;
}

double naive_augmented(const CohortDataset& data, const FactorModel& model,
                       const AugmentedState& aug, const HyperParams& hp) {
    const int m = model.n_nodes(), k = model.n_components(), n = model.n_subjects();
    double total = 0.0;
    for (int s = 0; s < n; ++s) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                double r = data.gammas[s](i, j);
                for (int q = 0; q < k; ++q) r -= aug.D[s](i, q) * model.B(j, q);
                total += r * r;
            }
        for (int i = 0; i < m; ++i)
            for (int q = 0; q < k; ++q) {
                const double gap = aug.D[s](i, q) - model.B(i, q) * model.C(q, s);
                total += aug.Lambda[s](i, q) * gap + 0.5 * gap * gap;
            }
    }
    double pred = 0.0;
    for (int s = 0; s < n; ++s) {
        double e = data.scores(s);
        for (int q = 0; q < k; ++q) e -= model.C(q, s) * model.w(q);
        pred += e * e;
    }
    total += hp.gamma * pred;
    for (int i = 0; i < m; ++i)
        for (int q = 0; q < k; ++q) total += hp.lambda1 * std::abs(model.B(i, q));
    total += hp.lambda2 * model.C.squaredNorm() + hp.lambda3 * model.w.squaredNorm();
    return total;
}

}  // namespace

TEST_CASE("validate_dataset accepts symmetric input unchanged") {
    CohortDataset data;
    Matrix g(2, 2);
    g << 1, 0.5, 0.5, 1;
    data.gammas.push_back(g);
    data.scores = Vector::Constant(1, 3.0);
    validate_dataset(data);
    CHECK(data.gammas[0] == g);
}

TEST_CASE("validate_dataset symmetrizes sub-tolerance asymmetry by averaging") {
    CohortDataset data;
    Matrix g(2, 2);
    g << 1, 0.5, 0.5 + 1e-9, 1;
    data.gammas.push_back(g);
    data.scores = Vector::Constant(1, 3.0);
    validate_dataset(data);
    CHECK(data.gammas[0](0, 1) == doctest::Approx(0.5 + 5e-10).epsilon(1e-15));
    CHECK(data.gammas[0](0, 1) == data.gammas[0](1, 0));
}

TEST_CASE("validate_dataset rejects malformed cohorts") {
    auto one = [](const Matrix& g) {
        CohortDataset d;
        d.gammas.push_back(g);
        d.scores = Vector::Constant(1, 1.0);
        return d;
    };

    CohortDataset nonsquare = one(Matrix::Zero(3, 2));
    CHECK_THROWS_AS(validate_dataset(nonsquare), DataError);

    Matrix skew(2, 2);
    skew << 1, 0.5, 0.6, 1;  // asymmetry far beyond 1e-8
    CohortDataset asym = one(skew);
    CHECK_THROWS_AS(validate_dataset(asym), DataError);

    Matrix bad(2, 2);
    bad << 1, std::numeric_limits<double>::quiet_NaN(), 0, 1;
    CohortDataset nonfinite = one(bad);
    CHECK_THROWS_AS(validate_dataset(nonfinite), DataError);

    CohortDataset empty;
    empty.scores = Vector();
    CHECK_THROWS_AS(validate_dataset(empty), DataError);

    CohortDataset mismatch = one(Matrix::Identity(2, 2));
    mismatch.scores = Vector::Zero(2);  // two scores, one matrix
    CHECK_THROWS_AS(validate_dataset(mismatch), DataError);

    CohortDataset tiny = one(Matrix::Identity(1, 1));
    CHECK_THROWS_AS(validate_dataset(tiny), DataError);

    CohortDataset sizes;
    sizes.gammas.push_back(Matrix::Identity(2, 2));
    sizes.gammas.push_back(Matrix::Identity(3, 3));
    sizes.scores = Vector::Zero(2);
    CHECK_THROWS_AS(validate_dataset(sizes), DataError);
}

TEST_CASE("deflation removes a rank-one matrix entirely") {
    Rng rng = make_rng(derive_seed(11u, "deflate1"));
    Vector v = testutil::random_vector(6, rng);
    v.normalize();
    CohortDataset data;
    data.gammas.push_back(Matrix(v * v.transpose()));
    data.scores = Vector::Zero(1);
    deflate_first_eigenvector(data);
    CHECK(data.gammas[0].cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("deflation of diag(3,1) yields diag(0,1)") {
    CohortDataset data;
    Matrix g(2, 2);
    g << 3, 0, 0, 1;
    data.gammas.push_back(g);
    data.scores = Vector::Zero(1);
    deflate_first_eigenvector(data);
    CHECK(data.gammas[0](0, 0) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(data.gammas[0](1, 1) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(std::abs(data.gammas[0](0, 1)) < 1e-14);
}

TEST_CASE("deflation drops the top eigenvalue to the second largest") {
    Rng rng = make_rng(derive_seed(11u, "deflate2"));
    const Matrix g = testutil::random_symmetric(10, rng);
    CohortDataset data;
    data.gammas.push_back(g);
    data.scores = Vector::Zero(1);

    Eigen::SelfAdjointEigenSolver<Matrix> before(g);
    const Vector top_vec = before.eigenvectors().col(9);
    const double second = before.eigenvalues()(8);

    const int ambiguous = deflate_first_eigenvector(data);
    CHECK(ambiguous == 0);
    CHECK(data.gammas[0].isApprox(data.gammas[0].transpose(), 1e-12));

    Eigen::SelfAdjointEigenSolver<Matrix> after(data.gammas[0]);
    CHECK(after.eigenvalues().maxCoeff() == doctest::Approx(second).epsilon(1e-8));
    // Rayleigh quotient of the removed direction vanishes.
    CHECK(std::abs(top_vec.dot(data.gammas[0] * top_vec)) < 1e-8);
}

TEST_CASE("deflation reports ambiguous (tied) leading eigenvalues") {
    CohortDataset data;
    data.gammas.push_back(Matrix::Identity(3, 3));
    data.scores = Vector::Zero(1);
    CHECK(deflate_first_eigenvector(data) == 1);
}

TEST_CASE("eval_objective reduces to data norms at the zero model") {
    Rng rng = make_rng(derive_seed(11u, "obj0"));
    CohortDataset data = testutil::random_dataset(4, 3, rng);
    FactorModel model;
    model.B = Matrix::Zero(4, 2);
    model.C = Matrix::Zero(2, 3);
    model.w = Vector::Zero(2);
    HyperParams hp;
    hp.gamma = 1.7;
    double expected = hp.gamma * data.scores.squaredNorm();
    for (const Matrix& g : data.gammas) expected += g.squaredNorm();
    const ObjectiveTerms terms = eval_objective(data, model, hp);
    CHECK(terms.total() == doctest::Approx(expected).epsilon(1e-14));
    CHECK(terms.l1_B == 0.0);
    CHECK(terms.l2_C == 0.0);
    CHECK(terms.l2_w == 0.0);
}

TEST_CASE("eval_objective matches a naive recomputation") {
    Rng rng = make_rng(derive_seed(11u, "objnaive"));
    for (int trial = 0; trial < 10; ++trial) {
        CohortDataset data = testutil::random_dataset(4, 3, rng);
        FactorModel model = testutil::random_model(4, 2, 3, rng);
        HyperParams hp;
        hp.gamma = 0.9;
        hp.lambda1 = 0.3;
        hp.lambda2 = 0.2;
        hp.lambda3 = 0.45;
        const double got = eval_objective(data, model, hp).total();
        const double want = naive_plain(data, model, hp);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("eval_objective is invariant under joint column permutation") {
    Rng rng = make_rng(derive_seed(11u, "objperm"));
    CohortDataset data = testutil::random_dataset(5, 4, rng);
    FactorModel model = testutil::random_model(5, 3, 4, rng);
    HyperParams hp;
    FactorModel perm = model;
    const int order[3] = {2, 0, 1};
    for (int q = 0; q < 3; ++q) {
        perm.B.col(q) = model.B.col(order[q]);
        perm.C.row(q) = model.C.row(order[q]);
        perm.w(q) = model.w(order[q]);
    }
    CHECK(eval_objective(data, model, hp).total() ==
          doctest::Approx(eval_objective(data, perm, hp).total()).epsilon(1e-12));
}

TEST_CASE("augmented objective equals the plain one on the constraint manifold") {
    Rng rng = make_rng(derive_seed(11u, "augeq"));
    CohortDataset data = testutil::random_dataset(5, 3, rng);
    FactorModel model = testutil::random_model(5, 2, 3, rng);
    AugmentedState aug;
    for (int n = 0; n < 3; ++n) {
        aug.D.push_back(Matrix(model.B * model.C.col(n).asDiagonal()));
        aug.Lambda.push_back(Matrix::Zero(5, 2));
    }
    HyperParams hp;
    hp.lambda1 = 2.0;
    const double plain = eval_objective(data, model, hp).total();
    const double augv = eval_augmented_objective(data, model, aug, hp);
    CHECK(augv == doctest::Approx(plain).epsilon(1e-14));
}

TEST_CASE("augmented objective at the zero split keeps only data and C,w terms") {
    Rng rng = make_rng(derive_seed(11u, "aug0"));
    CohortDataset data = testutil::random_dataset(4, 2, rng);
    FactorModel model;
    model.B = Matrix::Zero(4, 3);
    // C and w on disjoint components so the prediction term is gamma ||y||^2.
    model.C = Matrix::Zero(3, 2);
    model.C.row(0) = testutil::random_vector(2, rng).cwiseAbs().transpose();
    model.w = Vector::Zero(3);
    model.w(1) = 0.8;
    model.w(2) = -0.3;
    AugmentedState aug;
    aug.D.assign(2, Matrix::Zero(4, 3));
    aug.Lambda.assign(2, Matrix::Zero(4, 3));
    HyperParams hp;
    hp.gamma = 1.3;
    hp.lambda2 = 0.7;
    hp.lambda3 = 0.2;
    double expected = hp.gamma * data.scores.squaredNorm() +
                      hp.lambda2 * model.C.squaredNorm() +
                      hp.lambda3 * model.w.squaredNorm();
    for (const Matrix& g : data.gammas) expected += g.squaredNorm();
    CHECK(eval_augmented_objective(data, model, aug, hp) ==
          doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("augmented objective matches a naive recomputation") {
    Rng rng = make_rng(derive_seed(11u, "augnaive"));
    for (int trial = 0; trial < 10; ++trial) {
        CohortDataset data = testutil::random_dataset(4, 3, rng);
        FactorModel model = testutil::random_model(4, 2, 3, rng);
        AugmentedState aug = testutil::random_state(4, 2, 3, rng);
        HyperParams hp;
        hp.gamma = 1.1;
        hp.lambda1 = 0.25;
        hp.lambda2 = 0.6;
        hp.lambda3 = 0.15;
        const double got = eval_augmented_objective(data, model, aug, hp);
        const double want = naive_augmented(data, model, aug, hp);
        CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("constraint_residual definition") {
    Rng rng = make_rng(derive_seed(11u, "resid"));
    FactorModel model = testutil::random_model(4, 2, 3, rng);
    AugmentedState aug;
    for (int n = 0; n < 3; ++n) {
        aug.D.push_back(Matrix(model.B * model.C.col(n).asDiagonal()));
        aug.Lambda.push_back(Matrix::Zero(4, 2));
    }
    CHECK(constraint_residual(model, aug) == 0.0);

    // Zero basis: denominator clamps at 1, numerator is ||ones||_F.
    FactorModel zero = model;
    zero.B = Matrix::Zero(4, 2);
    AugmentedState ones;
    ones.D.assign(3, Matrix::Ones(4, 2));
    ones.Lambda.assign(3, Matrix::Zero(4, 2));
    CHECK(constraint_residual(zero, ones) ==
          doctest::Approx(std::sqrt(8.0)).epsilon(1e-15));

    // Random instance against a naive loop.
    AugmentedState rnd = testutil::random_state(4, 2, 3, rng);
    double naive = 0.0;
    for (int n = 0; n < 3; ++n) {
        const Matrix target = model.B * model.C.col(n).asDiagonal();
        const double gap = (rnd.D[n] - target).norm();
        naive = std::max(naive, gap / std::max(1.0, target.norm()));
    }
    CHECK(constraint_residual(model, rnd) == doctest::Approx(naive).epsilon(1e-14));
}
