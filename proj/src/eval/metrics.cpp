#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "iad/datagen/generators.hpp"
#include "iad/eval/eval.hpp"

namespace iad::eval {

double auroc(std::span<const double> scores, std::span<const std::size_t> labels) {
    require(scores.size() == labels.size(), ErrorCode::Shape,
            "auroc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) + " labels");
    std::size_t n_pos = 0;
    for (auto l : labels) {
        require(l <= 1, ErrorCode::Argument, "auroc: labels must be 0 or 1");
        n_pos += l;
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) fail(ErrorCode::Metric, "auroc: both classes must be present");
    for (double s : scores) require(!std::isnan(s), ErrorCode::Argument, "auroc: NaN score");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (labels[order[k]] == 1) pos_rank_sum += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double weighted_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> truth, std::size_t n_classes) {
    require(!truth.empty(), ErrorCode::Metric, "weighted_f1: empty input");
    require(predicted.size() == truth.size(), ErrorCode::Shape,
            "weighted_f1: " + std::to_string(predicted.size()) + " predictions vs " + std::to_string(truth.size()) + " labels");
    require(n_classes >= 1, ErrorCode::Argument, "weighted_f1: need at least one class");
    std::vector<double> tp(n_classes, 0.0), fp(n_classes, 0.0), fn(n_classes, 0.0), support(n_classes, 0.0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        require(truth[i] < n_classes && predicted[i] < n_classes, ErrorCode::Argument, "weighted_f1: class index out of range");
        support[truth[i]] += 1.0;
        if (predicted[i] == truth[i]) {
            tp[truth[i]] += 1.0;
        } else {
            fp[predicted[i]] += 1.0;
            fn[truth[i]] += 1.0;
        }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        const double denom = 2.0 * tp[c] + fp[c] + fn[c];
        const double f1 = denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
        total += support[c] * f1;
    }
    return total / static_cast<double>(truth.size());
}

std::size_t map_label(AnomalyClass klass, LabelScheme scheme) noexcept {
    if (scheme == LabelScheme::ThreeClass) return static_cast<std::size_t>(klass);
    return klass == AnomalyClass::Intrinsic ? 1 : 0;
}

std::vector<std::size_t> map_labels(const std::vector<LabelRecord>& records, LabelScheme scheme) {
    std::vector<std::size_t> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(map_label(r.klass, scheme));
    return out;
}

DistanceGap distance_gap(const Matrix& reference, std::span<const std::size_t> reference_labels, const Matrix& queries,
                         std::span<const std::size_t> query_labels) {
    require(reference.rows() == reference_labels.size() && queries.rows() == query_labels.size(), ErrorCode::Shape,
            "distance_gap: label counts do not match rows");
    require(reference.cols() == queries.cols(), ErrorCode::Shape, "distance_gap: reference and query dimensions differ");
    require(queries.rows() >= 1, ErrorCode::Metric, "distance_gap: no query rows");
    const std::size_t d = reference.cols();
    std::vector<std::vector<double>> centroid(2, std::vector<double>(d, 0.0));
    std::vector<double> count(2, 0.0);
    for (std::size_t r = 0; r < reference.rows(); ++r) {
        const std::size_t c = reference_labels[r];
        require(c <= 1, ErrorCode::Argument, "distance_gap: labels must be 0 or 1");
        for (std::size_t k = 0; k < d; ++k) centroid[c][k] += reference(r, k);
        count[c] += 1.0;
    }
    if (count[0] == 0.0 || count[1] == 0.0) fail(ErrorCode::Metric, "distance_gap: reference set lacks one of the two classes");
    for (std::size_t c = 0; c < 2; ++c)
        for (double& v : centroid[c]) v /= count[c];
    auto dist = [&](std::size_t row, std::size_t c) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += (queries(row, k) - centroid[c][k]) * (queries(row, k) - centroid[c][k]);
        return std::sqrt(s);
    };
    DistanceGap g;
    for (std::size_t r = 0; r < queries.rows(); ++r) {
        const std::size_t c = query_labels[r];
        require(c <= 1, ErrorCode::Argument, "distance_gap: labels must be 0 or 1");
        const double corr = dist(r, c), incorr = dist(r, 1 - c);
        g.mean_corr += corr;
        g.mean_incorr += incorr;
    }
    const double n = static_cast<double>(queries.rows());
    g.mean_corr /= n;
    g.mean_incorr /= n;
    g.gap = g.mean_incorr - g.mean_corr;
    return g;
}

Split stratified_split(const std::vector<LabelRecord>& labels, std::uint64_t seed, double train_frac) {
    require(train_frac > 0.0 && train_frac < 1.0, ErrorCode::Argument, "split: train fraction must be in (0, 1)");
    require(!labels.empty(), ErrorCode::State, "split: dataset has no labels");
    std::mt19937_64 rng(datagen::derive_seed(seed, 0x5b117));
    Split s;
    for (int c = 0; c < 3; ++c) {
        std::vector<std::size_t> group;
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (static_cast<int>(labels[i].klass) == c) group.push_back(i);
        std::shuffle(group.begin(), group.end(), rng);
        const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(group.size())));
        s.train.insert(s.train.end(), group.begin(), group.begin() + static_cast<std::ptrdiff_t>(n_train));
        s.test.insert(s.test.end(), group.begin() + static_cast<std::ptrdiff_t>(n_train), group.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

MetricSummary summarize(std::string metric, std::vector<double> values) {
    require(!values.empty(), ErrorCode::Argument, "summarize: no values");
    MetricSummary m{std::move(metric), std::move(values), 0.0, 0.0};
    const double n = static_cast<double>(m.values.size());
    m.mean = std::accumulate(m.values.begin(), m.values.end(), 0.0) / n;
    double var = 0.0;
    for (double v : m.values) var += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(var / n);
    return m;
}

}  // namespace iad::eval
