#include "netfact/baselines.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "netfact/exceptions.hpp"
#include "netfact/parallel.hpp"
#include "netfact/random.hpp"

namespace netfact {

Vector vectorize_upper(const Matrix& gamma) {
    const int m = static_cast<int>(gamma.rows());
    if (gamma.cols() != m) throw DataError("vectorize_upper needs a square matrix");
    Vector out(m * (m - 1) / 2);
    int p = 0;
    for (int i = 0; i < m; ++i)
        for (int j = i + 1; j < m; ++j) out(p++) = gamma(i, j);
    return out;
}

PcaReducer::PcaReducer(int components) : requested_(components) {
    if (components < 1) throw ConfigError("PCA needs at least 1 component");
}

void PcaReducer::fit(const Matrix& x_train) {
    const int n = static_cast<int>(x_train.rows());
    if (n < 2) throw DataError("PCA needs at least 2 rows");
    mean_ = x_train.colwise().mean();
    const Matrix centered = x_train.rowwise() - mean_.transpose();
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double tol = std::max(x_train.rows(), x_train.cols()) *
                       std::numeric_limits<double>::epsilon() *
                       (s.size() > 0 ? s(0) : 0.0);
    int rank = 0;
    for (int i = 0; i < s.size(); ++i)
        if (s(i) > tol) ++rank;
    int k = std::min(requested_, rank);
    if (k < 1) k = 1;  // degenerate data still yields one direction
    if (k < requested_)
        std::cerr << "warning: PCA components reduced from " << requested_ << " to "
                  << k << " (rank)\n";
    basis_ = svd.matrixV().leftCols(k);
    singular_values_ = s.head(k);
}

Matrix PcaReducer::transform(const Matrix& x) const {
    if (basis_.size() == 0) throw DataError("PCA transform before fit");
    if (x.cols() != mean_.size()) throw DataError("PCA feature width mismatch");
    return (x.rowwise() - mean_.transpose()) * basis_;
}

KpcaReducer::KpcaReducer(int components, double rbf_coeff)
    : requested_(components), coeff_(rbf_coeff) {
    if (components < 1) throw ConfigError("kernel PCA needs at least 1 component");
    if (rbf_coeff <= 0.0) throw ConfigError("rbf coefficient must be positive");
}

namespace {

Matrix rbf_kernel(const Matrix& a, const Matrix& b, double coeff) {
    // ||x - z||^2 = ||x||^2 + ||z||^2 - 2 x.z
    const Vector an = a.rowwise().squaredNorm();
    const Vector bn = b.rowwise().squaredNorm();
    Matrix d2 = (-2.0 * (a * b.transpose())).colwise() + an;
    d2 = d2.rowwise() + bn.transpose();
    return (-coeff * d2.cwiseMax(0.0)).array().exp();
}

}  // namespace

void KpcaReducer::fit(const Matrix& x_train) {
    const int n = static_cast<int>(x_train.rows());
    if (n < 2) throw DataError("kernel PCA needs at least 2 rows");
    x_train_ = x_train;
    const Matrix k = rbf_kernel(x_train, x_train, coeff_);
    train_row_mean_ = k.rowwise().mean();
    train_grand_mean_ = k.mean();
    Matrix centered = k;
    centered.colwise() -= train_row_mean_;
    centered.rowwise() -= train_row_mean_.transpose();
    centered.array() += train_grand_mean_;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(centered);
    if (eig.info() != Eigen::Success)
        throw NumericalError("kernel PCA eigendecomposition failed");
    const Vector& vals = eig.eigenvalues();  // ascending
    const double top = vals(n - 1);
    const double floor = 1e-14 * std::max(1.0, top);
    int positive = 0;
    for (int i = 0; i < n; ++i)
        if (vals(i) > floor) ++positive;
    if (positive == 0) throw DataError("degenerate Gram matrix: all points identical");
    const int k_eff = std::min(requested_, positive);
    if (k_eff < requested_)
        std::cerr << "warning: kernel PCA components reduced from " << requested_
                  << " to " << k_eff << "\n";
    alphas_.resize(n, k_eff);
    for (int j = 0; j < k_eff; ++j) {
        const int src = n - 1 - j;  // descending order
        alphas_.col(j) = eig.eigenvectors().col(src) / std::sqrt(vals(src));
    }
}

Matrix KpcaReducer::transform(const Matrix& x) const {
    if (alphas_.size() == 0) throw DataError("kernel PCA transform before fit");
    if (x.cols() != x_train_.cols()) throw DataError("kernel PCA feature width mismatch");
    const Matrix kz = rbf_kernel(x, x_train_, coeff_);  // rows x train points
    const Vector row_mean = kz.rowwise().mean();
    Matrix centered = kz;
    centered.colwise() -= row_mean;
    centered.rowwise() -= train_row_mean_.transpose();
    centered.array() += train_grand_mean_;
    return centered * alphas_;
}

namespace {

struct SplitScan {
    int feature = -1;
    double threshold = 0.0;
    double sse = std::numeric_limits<double>::infinity();
    bool valid = false;
};

// Best SSE split of samples on one feature; prefix sums over the sorted
// column.
SplitScan scan_feature(const Matrix& x, const Vector& y, const std::vector<int>& samples,
                       int feature, int min_leaf) {
    const int n = static_cast<int>(samples.size());
    std::vector<std::pair<double, double>> vals(n);
    for (int i = 0; i < n; ++i)
        vals[i] = {x(samples[i], feature), y(samples[i])};
    std::sort(vals.begin(), vals.end());
    SplitScan best;
    best.feature = feature;
    double left_sum = 0.0, left_sq = 0.0;
    double total_sum = 0.0, total_sq = 0.0;
    for (const auto& [v, t] : vals) {
        total_sum += t;
        total_sq += t * t;
    }
    for (int p = 1; p < n; ++p) {
        left_sum += vals[p - 1].second;
        left_sq += vals[p - 1].second * vals[p - 1].second;
        if (p < min_leaf || n - p < min_leaf) continue;
        if (vals[p].first <= vals[p - 1].first) continue;  // not a cut point
        const double right_sum = total_sum - left_sum;
        const double right_sq = total_sq - left_sq;
        const double sse = (left_sq - left_sum * left_sum / p) +
                           (right_sq - right_sum * right_sum / (n - p));
        if (sse < best.sse) {
            best.sse = sse;
            best.threshold = 0.5 * (vals[p - 1].first + vals[p].first);
            best.valid = true;
        }
    }
    return best;
}

}  // namespace

void RandomForest::fit(const Matrix& x, const Vector& y, const ForestConfig& cfg) {
    const int n = static_cast<int>(x.rows());
    const int p = static_cast<int>(x.cols());
    if (n < 2) throw DataError("forest needs at least 2 rows");
    if (y.size() != n) throw DataError("forest target length mismatch");
    if (cfg.tree_count < 1) throw ConfigError("tree_count must be at least 1");
    if (!(cfg.feature_subsample > 0.0 && cfg.feature_subsample <= 1.0))
        throw ConfigError("feature_subsample must lie in (0, 1]");
    if (cfg.min_leaf_size < 1) throw ConfigError("min_leaf_size must be at least 1");
    const int m_try =
        std::clamp(static_cast<int>(std::ceil(cfg.feature_subsample * p)), 1, p);

    trees_.assign(cfg.tree_count, {});
    parallel::for_each_index(static_cast<std::size_t>(cfg.tree_count), [&](std::size_t t) {
        Rng rng = make_rng(derive_seed(cfg.rng_seed, "tree", static_cast<std::uint64_t>(t)));
        std::vector<int> samples(n);
        if (cfg.bootstrap) {
            std::uniform_int_distribution<int> pick(0, n - 1);
            for (int i = 0; i < n; ++i) samples[i] = pick(rng);
        } else {
            std::iota(samples.begin(), samples.end(), 0);
        }
        std::vector<Node>& nodes = trees_[t];
        std::vector<int> features(p);
        std::iota(features.begin(), features.end(), 0);

        // Depth-first build with an explicit stack of (node id, samples,
        // depth); children are appended and patched into the parent.
        struct Job {
            int node;
            std::vector<int> samples;
            int depth;
        };
        nodes.push_back({});
        std::vector<Job> stack;
        stack.push_back({0, samples, 0});
        while (!stack.empty()) {
            Job job = std::move(stack.back());
            stack.pop_back();
            Node& node = nodes[job.node];
            const int count = static_cast<int>(job.samples.size());
            double sum = 0.0;
            for (int idx : job.samples) sum += y(idx);
            const double mean = sum / count;
            node.value = mean;
            bool leaf = count < 2 * cfg.min_leaf_size;
            if (cfg.max_depth && job.depth >= *cfg.max_depth) leaf = true;
            if (!leaf) {
                double sse = 0.0;
                for (int idx : job.samples) sse += (y(idx) - mean) * (y(idx) - mean);
                if (sse <= 1e-24 * count) leaf = true;  // constant target
            }
            SplitScan best;
            if (!leaf) {
                // Partial Fisher-Yates draw of m_try distinct candidates.
                for (int i = 0; i < m_try; ++i) {
                    std::uniform_int_distribution<int> pick(i, p - 1);
                    std::swap(features[i], features[pick(rng)]);
                    const SplitScan s =
                        scan_feature(x, y, job.samples, features[i], cfg.min_leaf_size);
                    if (s.valid && s.sse < best.sse) best = s;
                }
                if (!best.valid) {
                    // Candidates were constant on this node; fall back to the
                    // remaining features before declaring a leaf.
                    for (int i = m_try; i < p && !best.valid; ++i) {
                        const SplitScan s =
                            scan_feature(x, y, job.samples, features[i], cfg.min_leaf_size);
                        if (s.valid && s.sse < best.sse) best = s;
                    }
                }
                if (!best.valid) leaf = true;
            }
            if (leaf) {
                node.feature = -1;
                continue;
            }
            std::vector<int> left_samples, right_samples;
            for (int idx : job.samples) {
                if (x(idx, best.feature) <= best.threshold)
                    left_samples.push_back(idx);
                else
                    right_samples.push_back(idx);
            }
            node.feature = best.feature;
            node.threshold = best.threshold;
            const int left_id = static_cast<int>(nodes.size());
            nodes.push_back({});
            const int right_id = static_cast<int>(nodes.size());
            nodes.push_back({});
            nodes[job.node].left = left_id;
            nodes[job.node].right = right_id;
            stack.push_back({right_id, std::move(right_samples), job.depth + 1});
            stack.push_back({left_id, std::move(left_samples), job.depth + 1});
        }
    });
}

Vector RandomForest::predict(const Matrix& x) const {
    if (trees_.empty()) throw DataError("forest predict before fit");
    const int n = static_cast<int>(x.rows());
    Vector out = Vector::Zero(n);
    for (const auto& nodes : trees_) {
        for (int i = 0; i < n; ++i) {
            int cur = 0;
            while (nodes[cur].feature >= 0)
                cur = x(i, nodes[cur].feature) <= nodes[cur].threshold ? nodes[cur].left
                                                                       : nodes[cur].right;
            out(i) += nodes[cur].value;
        }
    }
    return out / static_cast<double>(trees_.size());
}

std::unique_ptr<Reducer> make_reducer(const BaselineConfig& cfg) {
    if (cfg.kind == BaselineKind::Pca)
        return std::make_unique<PcaReducer>(cfg.components);
    return std::make_unique<KpcaReducer>(cfg.components, cfg.rbf_coeff);
}

PredictionReport run_baseline(
    const CohortDataset& data, const BaselineConfig& cfg, const FoldSplit& split,
    const std::function<std::unique_ptr<Reducer>()>& reducer_factory) {
    const int n = data.n_subjects();
    if (static_cast<int>(split.assignments.size()) != n)
        throw DataError("fold assignments do not match subject count");
    const int m = data.n_nodes();
    Matrix features(n, m * (m - 1) / 2);
    for (int i = 0; i < n; ++i) features.row(i) = vectorize_upper(data.gammas[i]);

    PredictionReport report;
    report.method = reducer_factory ? "custom"
                    : cfg.kind == BaselineKind::Pca ? "pca"
                                                    : "kpca";
    report.fold_count = split.fold_count;
    for (int f = 0; f < split.fold_count; ++f) {
        std::vector<int> train_idx, test_idx;
        for (int i = 0; i < n; ++i)
            (split.assignments[i] == f ? test_idx : train_idx).push_back(i);
        if (train_idx.empty() || test_idx.empty())
            throw DataError("fold " + std::to_string(f) + " leaves an empty split");
        Matrix x_train(static_cast<int>(train_idx.size()), features.cols());
        Vector y_train(static_cast<int>(train_idx.size()));
        for (std::size_t a = 0; a < train_idx.size(); ++a) {
            x_train.row(static_cast<int>(a)) = features.row(train_idx[a]);
            y_train(static_cast<int>(a)) = data.scores(train_idx[a]);
        }
        Matrix x_test(static_cast<int>(test_idx.size()), features.cols());
        for (std::size_t a = 0; a < test_idx.size(); ++a)
            x_test.row(static_cast<int>(a)) = features.row(test_idx[a]);

        std::unique_ptr<Reducer> reducer =
            reducer_factory ? reducer_factory() : make_reducer(cfg);
        reducer->fit(x_train);
        const Matrix z_train = reducer->transform(x_train);
        const Matrix z_test = reducer->transform(x_test);

        ForestConfig forest_cfg = cfg.forest;
        forest_cfg.rng_seed =
            derive_seed(cfg.forest.rng_seed, "fold", static_cast<std::uint64_t>(f));
        RandomForest forest;
        forest.fit(z_train, y_train, forest_cfg);
        const Vector pred_train = forest.predict(z_train);
        const Vector pred_test = forest.predict(z_test);

        auto push_row = [&](int subject, bool is_test, double pred) {
            SubjectRow row;
            row.subject_id = data.subject_ids.empty() ? std::to_string(subject)
                                                      : data.subject_ids[subject];
            row.subject_index = subject;
            row.fold = f;
            row.is_test = is_test;
            row.y_true = data.scores(subject);
            row.y_pred = pred;
            report.rows.push_back(std::move(row));
        };
        // Emit in subject order to mirror run_cross_validation's layout.
        std::size_t a_train = 0, a_test = 0;
        for (int i = 0; i < n; ++i) {
            if (split.assignments[i] == f)
                push_row(i, true, pred_test(static_cast<int>(a_test++)));
            else
                push_row(i, false, pred_train(static_cast<int>(a_train++)));
        }
    }
    report.recompute_aggregates();
    return report;
}

}  // namespace netfact
