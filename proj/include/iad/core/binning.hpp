#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace iad {

/// Quantile bucketing of a real-valued signal into B classes.
class QuantileBins {
public:
    QuantileBins() = default;
    explicit QuantileBins(std::vector<double> edges) : edges_(std::move(edges)) {}

    /// Number of edges strictly below `value`; always in [0, bucket_count()).
    std::size_t digitize(double value) const noexcept;

    std::size_t bucket_count() const noexcept { return edges_.size() + 1; }
    const std::vector<double>& edges() const noexcept { return edges_; }

private:
    std::vector<double> edges_;
};

/// Edges at the i/B quantiles, i = 1..B-1, midpoint interpolation.
/// Throws Argument on empty input or B < 2.
QuantileBins quantile_bins(std::span<const double> values, std::size_t buckets);

}  // namespace iad
