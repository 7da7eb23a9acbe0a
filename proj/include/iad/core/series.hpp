#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "iad/core/matrix.hpp"

namespace iad {

/// Contiguous time range [start, start + length) within one series.
struct SnippetRange {
    std::size_t start = 0;
    std::size_t length = 1;

    std::size_t end() const noexcept { return start + length; }
    friend bool operator==(const SnippetRange&, const SnippetRange&) = default;
};

/// One environment/system recording. Immutable once built: the constructor
/// enforces N, M >= 1, a shared T >= 2 and finite values.
class MultivariateSeries {
public:
    MultivariateSeries(std::string id, Matrix env, Matrix sys);

    const std::string& id() const noexcept { return id_; }
    const Matrix& env() const noexcept { return env_; }
    const Matrix& sys() const noexcept { return sys_; }

    std::size_t n_env() const noexcept { return env_.rows(); }
    std::size_t n_sys() const noexcept { return sys_.rows(); }
    std::size_t length() const noexcept { return env_.cols(); }

    /// env stacked over sys, (N + M) x T.
    Matrix stacked() const { return vstack(env_, sys_); }

    friend bool operator==(const MultivariateSeries&, const MultivariateSeries&) = default;

private:
    std::string id_;
    Matrix env_;
    Matrix sys_;
};

enum class AnomalyClass : int { Normal = 0, Extrinsic = 1, Intrinsic = 2 };
enum class LabelSource : int { Generator = 0, File = 1, Human = 2 };

const char* label_source_name(LabelSource s) noexcept;
LabelSource parse_label_source(const std::string& text);

using UtcTime = std::chrono::sys_seconds;

std::string format_utc(UtcTime t);
UtcTime parse_utc(const std::string& text);
UtcTime utc_now();

struct LabelRecord {
    std::string series_id;
    AnomalyClass klass = AnomalyClass::Normal;
    std::vector<SnippetRange> ranges;
    LabelSource source = LabelSource::Generator;
    UtcTime timestamp{};

    /// Normal <=> no ranges; ranges sorted, disjoint and inside [0, length).
    void validate(std::size_t length) const;

    friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

struct DatasetManifest {
    std::string name;
    std::size_t n_series = 0;
    std::size_t length = 0;  // T
    std::size_t n_env = 0;   // N
    std::size_t n_sys = 0;   // M
    std::int64_t seed = 0;
    nlohmann::json generator_config = nlohmann::json::object();
    std::vector<std::string> series_paths;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<MultivariateSeries> series;
    std::vector<LabelRecord> labels;  // aligned with series when non-empty

    bool has_labels() const noexcept { return !labels.empty(); }
    std::optional<std::size_t> index_of(const std::string& id) const;

    /// Checks manifest fields against every series and label.
    void validate() const;
};

/// Copy of columns [range.start, range.end()).
MultivariateSeries slice(const MultivariateSeries& series, SnippetRange range);

/// Per-row z-normalization with population std; rows with std < 1e-12 become zero.
MultivariateSeries znormalize(const MultivariateSeries& series);

/// Per-channel affine scaling fitted on pooled values of many series.
class ChannelScaler {
public:
    ChannelScaler() = default;
    ChannelScaler(std::size_t n_env, std::vector<double> mean, std::vector<double> scale);

    static ChannelScaler fit(const std::vector<MultivariateSeries>& series);

    MultivariateSeries apply(const MultivariateSeries& series) const;
    Dataset apply(const Dataset& dataset) const;

    const std::vector<double>& mean() const noexcept { return mean_; }
    const std::vector<double>& scale() const noexcept { return scale_; }
    std::size_t n_env() const noexcept { return n_env_; }

private:
    std::size_t n_env_ = 0;
    std::vector<double> mean_;
    std::vector<double> scale_;
};

}  // namespace iad
