#pragma once

#include "netfact/types.hpp"

namespace netfact {

struct ObjectiveTerms {
    double fit = 0.0;         // sum_n ||Gamma_n - B diag(c_n) B^T||_F^2
    double prediction = 0.0;  // gamma ||y - C^T w||^2
    double l1_B = 0.0;        // lambda1 ||B||_1
    double l2_C = 0.0;        // lambda2 ||C||_F^2
    double l2_w = 0.0;        // lambda3 ||w||^2

    double total() const { return fit + prediction + l1_B + l2_C + l2_w; }
};

// Checks shapes, finiteness and symmetry (within sym_tol on max abs
// asymmetry); symmetrizes matrices in place. Throws DataError on violation.
void validate_dataset(CohortDataset& data, double sym_tol = 1e-8);

// Removes the leading rank-one part Gamma - sigma_1 v_1 v_1^T per subject
// (largest algebraic eigenvalue). Returns the number of subjects whose top
// eigenvalue is not separated from the second (tie within 1e-12 relative),
// where the deflated direction is ambiguous.
int deflate_first_eigenvector(CohortDataset& data);

ObjectiveTerms eval_objective(const CohortDataset& data, const FactorModel& model,
                              const HyperParams& hp);

// Augmented Lagrangian value at (model, state): adds the splitting fit term,
// the multiplier inner products and the quadratic coupling penalty.
double eval_augmented_objective(const CohortDataset& data, const FactorModel& model,
                                const AugmentedState& state, const HyperParams& hp);

// max_n ||D_n - B diag(c_n)||_F / max(1, ||B diag(c_n)||_F)
double constraint_residual(const FactorModel& model, const AugmentedState& state);

}  // namespace netfact
