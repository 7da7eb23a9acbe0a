#include "iad/core/binning.hpp"

#include <algorithm>
#include <cmath>

#include "iad/core/error.hpp"

namespace iad {

std::size_t QuantileBins::digitize(double value) const noexcept {
    // edges are non-decreasing, so "strictly below" is a lower_bound
    return static_cast<std::size_t>(std::lower_bound(edges_.begin(), edges_.end(), value) - edges_.begin());
}

QuantileBins quantile_bins(std::span<const double> values, std::size_t buckets) {
    require(!values.empty(), ErrorCode::Argument, "quantile_bins: empty input");
    require(buckets >= 2, ErrorCode::Argument, "quantile_bins: need at least 2 buckets");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const double last = static_cast<double>(sorted.size() - 1);
    std::vector<double> edges;
    edges.reserve(buckets - 1);
    for (std::size_t i = 1; i < buckets; ++i) {
        const double pos = last * static_cast<double>(i) / static_cast<double>(buckets);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = static_cast<std::size_t>(std::ceil(pos));
        edges.push_back(0.5 * (sorted[lo] + sorted[hi]));
    }
    return QuantileBins(std::move(edges));
}

}  // namespace iad
