#include "netfact/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "netfact/exceptions.hpp"

namespace netfact {

double rmse(const Vector& truth, const Vector& pred) {
    if (truth.size() != pred.size()) throw DataError("rmse length mismatch");
    const int n = static_cast<int>(truth.size());
    if (n < 1) throw DataError("rmse on empty input");
    std::vector<double> sq(n);
    for (int i = 0; i < n; ++i) {
        const double r = truth(i) - pred(i);
        sq[i] = r * r;
    }
    std::sort(sq.begin(), sq.end());
    const double med = (n % 2 == 1) ? sq[n / 2] : 0.5 * (sq[n / 2 - 1] + sq[n / 2]);
    return std::sqrt(med);
}

double r_squared(const Vector& truth, const Vector& pred) {
    if (truth.size() != pred.size()) throw DataError("r_squared length mismatch");
    const int n = static_cast<int>(truth.size());
    if (n < 2) throw DataError("r_squared needs at least 2 points");
    const double mean = truth.mean();
    const double sst = (truth.array() - mean).square().sum();
    if (sst == 0.0) throw DataError("r_squared undefined for constant truth");
    const double ssr = (truth - pred).squaredNorm();
    return 1.0 - ssr / sst;
}

}  // namespace netfact
