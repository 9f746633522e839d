#pragma once

#include <vector>

#include "netfact/types.hpp"

namespace netfact {

// Exact maximum-weight one-to-one assignment on a square weight matrix
// (Hungarian algorithm, O(n^3)). Returns col index assigned to each row.
std::vector<int> max_weight_assignment(const Matrix& weight);

}  // namespace netfact
