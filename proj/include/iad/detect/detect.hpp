#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "iad/core/matrix.hpp"
#include "iad/core/series.hpp"
#include "iad/nn/layers.hpp"

namespace iad::detect {

struct RegressorConfig {
    std::size_t hidden = 100;
    std::size_t epochs = 200;
    std::size_t batch = 200;
    double lr = 1e-3;
};

/// Instantaneous map h_V: x_t -> y_t. Inputs and outputs are standardised
/// internally with statistics of the fitting data; predictions are in data units.
class Regressor {
public:
    Regressor() = default;
    Regressor(std::size_t n_env, std::size_t n_sys, std::size_t hidden, std::uint64_t seed);

    std::size_t n_env() const noexcept { return n_env_; }
    std::size_t n_sys() const noexcept { return n_sys_; }
    std::size_t hidden() const noexcept { return hidden_; }

    /// env: N x T -> predicted sys: M x T
    Matrix predict(const Matrix& env) const;

    /// Network weights plus the four standardisation vectors.
    std::vector<nn::NamedTensor> parameters() const;

    const nn::Mlp& network() const noexcept { return mlp_; }
    void set_standardisation(std::vector<double> in_mean, std::vector<double> in_scale, std::vector<double> out_mean,
                             std::vector<double> out_scale);
    /// Standardised inputs [P, N] and targets [P, M] for the given series.
    std::pair<Matrix, Matrix> design(const std::vector<MultivariateSeries>& series) const;

private:
    std::size_t n_env_ = 0, n_sys_ = 0, hidden_ = 0;
    nn::Mlp mlp_;
    nn::TensorPtr in_mean_, in_scale_, out_mean_, out_scale_;
};

/// Minimises the mean squared error of y_t given x_t over all time steps of `train`.
Regressor fit_regressor(const std::vector<MultivariateSeries>& train, std::uint64_t seed, const RegressorConfig& cfg = {});

/// Fits on the listed series, restricted to those labelled Normal when labels exist.
Regressor fit_regressor(const Dataset& dataset, std::span<const std::size_t> train_index, std::uint64_t seed,
                        const RegressorConfig& cfg = {});

/// δ[m, t] = h_V(x_t)[m] - y[m, t]
Matrix residuals(const Regressor& regressor, const MultivariateSeries& series);

/// max over m, t of |δ[m, t]|
double res_thresh_score(const Matrix& residual);

/// c(n) = 2 H(n-1) - 2 (n-1) / n, with c(1) = 0 and c(2) = 1.
double average_path_length(std::size_t n);

struct IsolationForestConfig {
    std::size_t trees = 100;
    std::size_t subsample = 256;
    std::uint64_t seed = 0;
};

/// Points are matrix rows.
class IsolationForest {
public:
    static IsolationForest fit(const Matrix& points, const IsolationForestConfig& cfg = {});

    /// 2^(-E[h(x)] / c(psi)), in (0, 1).
    double score(std::span<const double> point) const;
    std::vector<double> score(const Matrix& points) const;

private:
    struct Node {
        std::size_t feature = 0;
        double split = 0.0;
        std::int32_t left = -1, right = -1;  // -1 marks a leaf
        std::size_t size = 0;
    };
    struct Tree {
        std::vector<Node> nodes;
    };
    double path_length(const Tree& tree, std::span<const double> point) const;

    std::vector<Tree> trees_;
    std::size_t dims_ = 0;
    std::size_t psi_ = 0;
};

/// Local outlier factor. fit() uses the reference set for neighbourhoods;
/// score() evaluates new points against it.
class LocalOutlierFactor {
public:
    static LocalOutlierFactor fit(const Matrix& reference, std::size_t k = 20);

    /// Scores of the reference points themselves (each excluded from its own neighbourhood).
    const std::vector<double>& training_scores() const noexcept { return train_scores_; }
    double score(std::span<const double> point) const;
    std::vector<double> score(const Matrix& points) const;

private:
    Matrix ref_;
    std::size_t k_ = 0;
    std::vector<double> k_distance_;
    std::vector<double> lrd_;
    std::vector<double> train_scores_;
};

/// In-sample LOF; k >= number of points is an Argument error.
std::vector<double> lof_scores(const Matrix& points, std::size_t k = 20);

struct Neighbor {
    std::size_t index;
    double distance;
};

/// The k rows of `points` closest to `query` (Euclidean), ascending by distance and then index.
/// Row `exclude`, if given, is skipped.
std::vector<Neighbor> nearest_neighbors(const Matrix& points, std::span<const double> query, std::size_t k,
                                        std::optional<std::size_t> exclude = std::nullopt);

struct KnnResult {
    std::size_t predicted = 0;
    double score = 0.0;  // fraction of neighbours carrying `positive_class`
    std::vector<Neighbor> neighbors;
};

/// Majority vote of the k nearest training rows; ties go to the smallest class index.
KnnResult knn_classify(const Matrix& train, std::span<const std::size_t> train_labels, std::span<const double> query,
                       std::size_t k = 5, std::size_t positive_class = 1, std::optional<std::size_t> exclude = std::nullopt);

/// Per-time-step feature rows (T x channels) of a matrix given as channels x T.
Matrix time_rows(const Matrix& channels_by_time);

/// Max of step scores; an empty span is an Argument error.
double max_aggregate(std::span<const double> step_scores);

}  // namespace iad::detect
