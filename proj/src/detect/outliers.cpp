#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "iad/detect/detect.hpp"

namespace iad::detect {

double average_path_length(std::size_t n) {
    if (n <= 1) return 0.0;
    if (n == 2) return 1.0;
    double harmonic = 0.0;
    for (std::size_t i = 1; i < n; ++i) harmonic += 1.0 / static_cast<double>(i);
    const double nd = static_cast<double>(n);
    return 2.0 * harmonic - 2.0 * (nd - 1.0) / nd;
}

IsolationForest IsolationForest::fit(const Matrix& points, const IsolationForestConfig& cfg) {
    const std::size_t n = points.rows();
    require(n >= 2, ErrorCode::Argument, "isolation forest: need at least 2 points, got " + std::to_string(n));
    require(points.cols() >= 1, ErrorCode::Shape, "isolation forest: points have no features");
    require(cfg.trees >= 1 && cfg.subsample >= 2, ErrorCode::Config, "isolation forest: trees >= 1 and subsample >= 2 required");
    IsolationForest forest;
    forest.dims_ = points.cols();
    forest.psi_ = std::min(cfg.subsample, n);
    const auto height_limit = static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(forest.psi_))));
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});

    for (std::size_t t = 0; t < cfg.trees; ++t) {
        for (std::size_t i = 0; i < forest.psi_; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(all[i], all[pick(rng)]);
        }
        std::vector<std::size_t> idx(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(forest.psi_));
        Tree tree;
        struct Work {
            std::size_t node, begin, end, depth;
        };
        tree.nodes.push_back({});
        std::vector<Work> stack{{0, 0, idx.size(), 0}};
        std::vector<std::size_t> candidates;
        while (!stack.empty()) {
            const Work w = stack.back();
            stack.pop_back();
            const std::size_t size = w.end - w.begin;
            tree.nodes[w.node].size = size;
            if (size <= 1 || w.depth >= height_limit) continue;
            candidates.clear();
            std::vector<double> lo(forest.dims_, INFINITY), hi(forest.dims_, -INFINITY);
            for (std::size_t i = w.begin; i < w.end; ++i)
                for (std::size_t f = 0; f < forest.dims_; ++f) {
                    lo[f] = std::min(lo[f], points(idx[i], f));
                    hi[f] = std::max(hi[f], points(idx[i], f));
                }
            for (std::size_t f = 0; f < forest.dims_; ++f)
                if (hi[f] > lo[f]) candidates.push_back(f);
            if (candidates.empty()) continue;
            const std::size_t f = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
            const double split = std::uniform_real_distribution<double>(lo[f], hi[f])(rng);
            auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(w.begin), idx.begin() + static_cast<std::ptrdiff_t>(w.end),
                                      [&](std::size_t r) { return points(r, f) < split; });
            const auto m = static_cast<std::size_t>(mid - idx.begin());
            const auto left = static_cast<std::int32_t>(tree.nodes.size());
            tree.nodes.push_back({});
            tree.nodes.push_back({});
            tree.nodes[w.node].feature = f;
            tree.nodes[w.node].split = split;
            tree.nodes[w.node].left = left;
            tree.nodes[w.node].right = left + 1;
            stack.push_back({static_cast<std::size_t>(left) + 1, m, w.end, w.depth + 1});
            stack.push_back({static_cast<std::size_t>(left), w.begin, m, w.depth + 1});
        }
        forest.trees_.push_back(std::move(tree));
    }
    return forest;
}

double IsolationForest::path_length(const Tree& tree, std::span<const double> point) const {
    std::size_t node = 0;
    double depth = 0.0;
    while (tree.nodes[node].left >= 0) {
        const Node& nd = tree.nodes[node];
        node = static_cast<std::size_t>(point[nd.feature] < nd.split ? nd.left : nd.right);
        depth += 1.0;
    }
    return depth + average_path_length(tree.nodes[node].size);
}

double IsolationForest::score(std::span<const double> point) const {
    require(point.size() == dims_, ErrorCode::Shape,
            "isolation forest: point has " + std::to_string(point.size()) + " features, expected " + std::to_string(dims_));
    double total = 0.0;
    for (const auto& tree : trees_) total += path_length(tree, point);
    const double mean = total / static_cast<double>(trees_.size());
    return std::exp2(-mean / average_path_length(psi_));
}

std::vector<double> IsolationForest::score(const Matrix& points) const {
    std::vector<double> out(points.rows());
    for (std::size_t r = 0; r < points.rows(); ++r) out[r] = score(points.row(r));
    return out;
}

namespace {

double sq_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

constexpr double kLrdEps = 1e-10;

}  // namespace

std::vector<Neighbor> nearest_neighbors(const Matrix& points, std::span<const double> query, std::size_t k,
                                        std::optional<std::size_t> exclude) {
    require(query.size() == points.cols(), ErrorCode::Shape,
            "nearest_neighbors: query has " + std::to_string(query.size()) + " dims, points have " + std::to_string(points.cols()));
    const std::size_t available = points.rows() - (exclude && *exclude < points.rows() ? 1 : 0);
    require(k >= 1 && k <= available, ErrorCode::Argument,
            "nearest_neighbors: k=" + std::to_string(k) + " but only " + std::to_string(available) + " candidate rows");
    std::vector<Neighbor> all;
    all.reserve(points.rows());
    for (std::size_t r = 0; r < points.rows(); ++r) {
        if (exclude && *exclude == r) continue;
        all.push_back({r, sq_distance(points.row(r), query)});
    }
    auto less = [](const Neighbor& a, const Neighbor& b) { return a.distance < b.distance || (a.distance == b.distance && a.index < b.index); };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), less);
    all.resize(k);
    for (auto& n : all) n.distance = std::sqrt(n.distance);
    return all;
}

KnnResult knn_classify(const Matrix& train, std::span<const std::size_t> train_labels, std::span<const double> query, std::size_t k,
                       std::size_t positive_class, std::optional<std::size_t> exclude) {
    require(train_labels.size() == train.rows(), ErrorCode::Shape, "knn: label count does not match training rows");
    const std::size_t available = train.rows() - (exclude && *exclude < train.rows() ? 1 : 0);
    require(available >= k, ErrorCode::Argument,
            "knn: need at least k=" + std::to_string(k) + " training rows, have " + std::to_string(available));
    KnnResult res;
    res.neighbors = nearest_neighbors(train, query, k, exclude);
    const std::size_t classes = *std::max_element(train_labels.begin(), train_labels.end()) + 1;
    std::vector<std::size_t> votes(std::max(classes, positive_class + 1), 0);
    for (const auto& n : res.neighbors) ++votes[train_labels[n.index]];
    res.predicted = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
    res.score = static_cast<double>(votes[positive_class]) / static_cast<double>(k);
    return res;
}

LocalOutlierFactor LocalOutlierFactor::fit(const Matrix& reference, std::size_t k) {
    const std::size_t n = reference.rows();
    require(k >= 1, ErrorCode::Argument, "lof: k must be >= 1");
    require(k < n, ErrorCode::Argument, "lof: k=" + std::to_string(k) + " must be smaller than the point count " + std::to_string(n));
    LocalOutlierFactor lof;
    lof.ref_ = reference;
    lof.k_ = k;
    std::vector<std::vector<Neighbor>> nbrs(n);
    lof.k_distance_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i] = nearest_neighbors(reference, reference.row(i), k, i);
        lof.k_distance_[i] = nbrs[i].back().distance;
    }
    lof.lrd_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double reach = 0.0;
        for (const auto& nb : nbrs[i]) reach += std::max(lof.k_distance_[nb.index], nb.distance);
        lof.lrd_[i] = 1.0 / (reach / static_cast<double>(k) + kLrdEps);
    }
    lof.train_scores_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (const auto& nb : nbrs[i]) s += lof.lrd_[nb.index];
        lof.train_scores_[i] = s / static_cast<double>(k) / lof.lrd_[i];
    }
    return lof;
}

double LocalOutlierFactor::score(std::span<const double> point) const {
    const auto nbrs = nearest_neighbors(ref_, point, k_);
    double reach = 0.0, lrd_sum = 0.0;
    for (const auto& nb : nbrs) {
        reach += std::max(k_distance_[nb.index], nb.distance);
        lrd_sum += lrd_[nb.index];
    }
    const double lrd = 1.0 / (reach / static_cast<double>(k_) + kLrdEps);
    return lrd_sum / static_cast<double>(k_) / lrd;
}

std::vector<double> LocalOutlierFactor::score(const Matrix& points) const {
    std::vector<double> out(points.rows());
    for (std::size_t r = 0; r < points.rows(); ++r) out[r] = score(points.row(r));
    return out;
}

std::vector<double> lof_scores(const Matrix& points, std::size_t k) { return LocalOutlierFactor::fit(points, k).training_scores(); }

Matrix time_rows(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) out(c, r) = m(r, c);
    return out;
}

double max_aggregate(std::span<const double> step_scores) {
    require(!step_scores.empty(), ErrorCode::Argument, "max_aggregate: no step scores");
    return *std::max_element(step_scores.begin(), step_scores.end());
}

}  // namespace iad::detect
