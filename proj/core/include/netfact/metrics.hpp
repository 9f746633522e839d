#pragma once

#include "netfact/types.hpp"

namespace netfact {

// sqrt(median of squared residuals); even-length median averages the two
// central order statistics.
double rmse(const Vector& truth, const Vector& pred);

// 1 - SSR/SST about the mean of truth. Throws DataError when truth is
// constant (SST = 0) or fewer than 2 points are given.
double r_squared(const Vector& truth, const Vector& pred);

}  // namespace netfact
