#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "netfact/predict.hpp"
#include "netfact/types.hpp"

namespace netfact {

// Row-major upper triangle (i < j, i-major) of a symmetric matrix.
Vector vectorize_upper(const Matrix& gamma);

// Dimensionality-reduction stage of a baseline pipeline. fit sees only
// training rows; transform may be called on unseen rows afterwards.
class Reducer {
  public:
    virtual ~Reducer() = default;
    virtual void fit(const Matrix& x_train) = 0;
    virtual Matrix transform(const Matrix& x) const = 0;
    virtual int out_dim() const = 0;
};

// Centered PCA via thin SVD; keeps at most rank(X) components (with a
// warning when the request exceeds it).
class PcaReducer : public Reducer {
  public:
    explicit PcaReducer(int components);
    void fit(const Matrix& x_train) override;
    Matrix transform(const Matrix& x) const override;
    int out_dim() const override { return static_cast<int>(basis_.cols()); }
    const Vector& singular_values() const { return singular_values_; }

  private:
    int requested_;
    Vector mean_;
    Matrix basis_;  // P x k, orthonormal columns
    Vector singular_values_;
};

// RBF kernel PCA, k(x, z) = exp(-coeff ||x - z||^2), double-centered Gram,
// standard centered out-of-sample projection.
class KpcaReducer : public Reducer {
  public:
    KpcaReducer(int components, double rbf_coeff);
    void fit(const Matrix& x_train) override;
    Matrix transform(const Matrix& x) const override;
    int out_dim() const override { return static_cast<int>(alphas_.cols()); }

  private:
    int requested_;
    double coeff_;
    Matrix x_train_;
    Vector train_row_mean_;  // per-point mean kernel against training set
    double train_grand_mean_ = 0.0;
    Matrix alphas_;  // N x k, eigenvectors scaled by 1/sqrt(eigenvalue)
};

struct ForestConfig {
    int tree_count = 100;
    std::optional<int> max_depth;  // unset = unlimited
    int min_leaf_size = 2;
    double feature_subsample = 1.0 / 3.0;
    bool bootstrap = true;
    std::uint64_t rng_seed = 0;
};

// Regression forest over variance-reduction CART trees.
class RandomForest {
  public:
    void fit(const Matrix& x, const Vector& y, const ForestConfig& cfg);
    Vector predict(const Matrix& x) const;

  private:
    struct Node {
        int feature = -1;  // -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
    };
    std::vector<std::vector<Node>> trees_;
};

enum class BaselineKind { Pca, Kpca };

struct BaselineConfig {
    BaselineKind kind = BaselineKind::Pca;
    int components = 15;     // 10 is the usual kernel-PCA setting
    double rbf_coeff = 0.1;  // kernel PCA only
    ForestConfig forest;
};

std::unique_ptr<Reducer> make_reducer(const BaselineConfig& cfg);

// Per fold: vectorize, fit reducer + forest on training rows only, predict
// train and test rows. Same report schema as the main pipeline. When
// reducer_factory is provided it overrides cfg.kind (test seam).
PredictionReport run_baseline(
    const CohortDataset& data, const BaselineConfig& cfg, const FoldSplit& split,
    const std::function<std::unique_ptr<Reducer>()>& reducer_factory = {});

}  // namespace netfact
