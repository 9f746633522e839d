#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "netfact/random.hpp"
#include "netfact/types.hpp"

namespace testutil {

inline netfact::Matrix random_matrix(int rows, int cols, netfact::Rng& rng,
                                     double scale = 1.0) {
    netfact::Matrix m(rows, cols);
    for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) m(i, j) = netfact::draw_normal(rng, scale);
    return m;
}

inline netfact::Matrix random_symmetric(int n, netfact::Rng& rng, double scale = 1.0) {
    netfact::Matrix a = random_matrix(n, n, rng, scale);
    return netfact::Matrix(0.5 * (a + a.transpose()));
}

// A^T A + ridge keeps the spectrum safely positive.
inline netfact::Matrix random_pd(int n, netfact::Rng& rng, double ridge = 0.1) {
    netfact::Matrix a = random_matrix(n, n, rng);
    return netfact::Matrix(a.transpose() * a + ridge * netfact::Matrix::Identity(n, n));
}

inline netfact::Vector random_vector(int n, netfact::Rng& rng, double scale = 1.0) {
    netfact::Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = netfact::draw_normal(rng, scale);
    return v;
}

inline netfact::CohortDataset random_dataset(int m, int n_subj, netfact::Rng& rng) {
    netfact::CohortDataset data;
    for (int n = 0; n < n_subj; ++n) data.gammas.push_back(random_symmetric(m, rng));
    data.scores = random_vector(n_subj, rng);
    return data;
}

inline netfact::FactorModel random_model(int m, int k, int n_subj, netfact::Rng& rng) {
    netfact::FactorModel model;
    model.B = random_matrix(m, k, rng);
    model.C = random_matrix(k, n_subj, rng).cwiseAbs();
    model.w = random_vector(k, rng);
    return model;
}

inline netfact::AugmentedState random_state(int m, int k, int n_subj, netfact::Rng& rng) {
    netfact::AugmentedState aug;
    for (int n = 0; n < n_subj; ++n) {
        aug.D.push_back(random_matrix(m, k, rng));
        aug.Lambda.push_back(random_matrix(m, k, rng));
    }
    return aug;
}

// Fresh directory under the system temp root; callers may leave it behind,
// the sandbox is disposable.
inline std::filesystem::path temp_dir(const std::string& tag) {
    static int counter = 0;
    const auto base = std::filesystem::temp_directory_path() /
                      ("netfact_test_" + tag + "_" + std::to_string(counter++));
    std::filesystem::remove_all(base);
    std::filesystem::create_directories(base);
    return base;
}

}  // namespace testutil
