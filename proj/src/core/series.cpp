#include "iad/core/series.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <sstream>

namespace iad {

const char* error_code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::Argument: return "argument error";
        case ErrorCode::Range: return "range error";
        case ErrorCode::Parse: return "parse error";
        case ErrorCode::Config: return "config error";
        case ErrorCode::Shape: return "shape error";
        case ErrorCode::State: return "state error";
        case ErrorCode::Io: return "io error";
        case ErrorCode::Training: return "training error";
        case ErrorCode::Metric: return "metric error";
        case ErrorCode::Ingest: return "ingestion error";
        case ErrorCode::Sampling: return "sampling error";
        case ErrorCode::Consistency: return "consistency error";
        case ErrorCode::NotFound: return "not found";
        case ErrorCode::Conflict: return "conflict";
        case ErrorCode::Internal: return "internal error";
    }
    return "unknown error";
}

Matrix Matrix::columns(std::size_t start, std::size_t length) const {
    require(start + length <= cols_, ErrorCode::Range, "column range out of bounds");
    Matrix out(rows_, length);
    for (std::size_t r = 0; r < rows_; ++r) {
        std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + start), length,
                    out.data_.begin() + static_cast<std::ptrdiff_t>(r * length));
    }
    return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
    require(top.cols() == bottom.cols(), ErrorCode::Shape, "vstack: column counts differ");
    std::vector<double> data;
    data.reserve(top.data().size() + bottom.data().size());
    data.insert(data.end(), top.data().begin(), top.data().end());
    data.insert(data.end(), bottom.data().begin(), bottom.data().end());
    return Matrix(top.rows() + bottom.rows(), top.cols(), std::move(data));
}

MultivariateSeries::MultivariateSeries(std::string id, Matrix env, Matrix sys)
    : id_(std::move(id)), env_(std::move(env)), sys_(std::move(sys)) {
    require(env_.rows() >= 1, ErrorCode::Shape, "series '" + id_ + "': need at least one environment row");
    require(sys_.rows() >= 1, ErrorCode::Shape, "series '" + id_ + "': need at least one system row");
    require(env_.cols() == sys_.cols(), ErrorCode::Shape,
            "series '" + id_ + "': environment and system lengths differ");
    require(env_.cols() >= 2, ErrorCode::Shape, "series '" + id_ + "': length must be at least 2");
    auto finite = [](const Matrix& m) {
        return std::all_of(m.data().begin(), m.data().end(), [](double v) { return std::isfinite(v); });
    };
    require(finite(env_) && finite(sys_), ErrorCode::Argument, "series '" + id_ + "': non-finite value");
}

const char* label_source_name(LabelSource s) noexcept {
    switch (s) {
        case LabelSource::Generator: return "generator";
        case LabelSource::File: return "file";
        case LabelSource::Human: return "human";
    }
    return "file";
}

LabelSource parse_label_source(const std::string& text) {
    if (text == "generator") return LabelSource::Generator;
    if (text == "file") return LabelSource::File;
    if (text == "human") return LabelSource::Human;
    fail(ErrorCode::Parse, "unknown label source '" + text + "'");
}

std::string format_utc(UtcTime t) {
    std::time_t tt = t.time_since_epoch().count();
    std::tm tm{};
    gmtime_r(&tt, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

UtcTime parse_utc(const std::string& text) {
    std::tm tm{};
    std::istringstream in(text);
    in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
    if (in.fail()) fail(ErrorCode::Parse, "bad UTC timestamp '" + text + "'");
    return UtcTime(std::chrono::seconds(timegm(&tm)));
}

UtcTime utc_now() {
    return std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
}

void LabelRecord::validate(std::size_t length) const {
    const bool normal = klass == AnomalyClass::Normal;
    require(normal == ranges.empty(), ErrorCode::Consistency,
            "label '" + series_id + "': normal labels carry no ranges and anomalies need at least one");
    std::size_t prev_end = 0;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        const auto& r = ranges[i];
        require(r.length >= 1, ErrorCode::Consistency, "label '" + series_id + "': empty range");
        require(r.end() <= length, ErrorCode::Range, "label '" + series_id + "': range out of bounds");
        require(i == 0 || r.start >= prev_end, ErrorCode::Consistency,
                "label '" + series_id + "': ranges must be sorted and non-overlapping");
        prev_end = r.end();
    }
}

std::optional<std::size_t> Dataset::index_of(const std::string& id) const {
    for (std::size_t i = 0; i < series.size(); ++i)
        if (series[i].id() == id) return i;
    return std::nullopt;
}

void Dataset::validate() const {
    const auto& m = manifest;
    require(m.n_series == series.size(), ErrorCode::Consistency,
            "manifest declares " + std::to_string(m.n_series) + " series, found " + std::to_string(series.size()));
    for (const auto& s : series) {
        require(s.n_env() == m.n_env && s.n_sys() == m.n_sys, ErrorCode::Consistency,
                "series '" + s.id() + "' dimensions disagree with manifest");
        require(m.length == 0 || s.length() == m.length, ErrorCode::Consistency,
                "series '" + s.id() + "' length disagrees with manifest");
    }
    if (!labels.empty()) {
        require(labels.size() == series.size(), ErrorCode::Consistency, "label count differs from series count");
        for (std::size_t i = 0; i < series.size(); ++i) {
            require(labels[i].series_id == series[i].id(), ErrorCode::Consistency,
                    "labels are not aligned with series order at '" + series[i].id() + "'");
            labels[i].validate(series[i].length());
        }
    }
}

MultivariateSeries slice(const MultivariateSeries& series, SnippetRange range) {
    if (range.length < 1 || range.end() > series.length())
        fail(ErrorCode::Range, "slice [" + std::to_string(range.start) + ", " + std::to_string(range.end()) +
                                   ") out of bounds for length " + std::to_string(series.length()));
    return MultivariateSeries(series.id(), series.env().columns(range.start, range.length),
                              series.sys().columns(range.start, range.length));
}

namespace {

void znormalize_rows(Matrix& m) {
    const auto n = static_cast<double>(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        const double sd = std::sqrt(var / n);
        for (double& v : row) v = sd < 1e-12 ? 0.0 : (v - mean) / sd;
    }
}

}  // namespace

MultivariateSeries znormalize(const MultivariateSeries& series) {
    Matrix env = series.env();
    Matrix sys = series.sys();
    znormalize_rows(env);
    znormalize_rows(sys);
    return MultivariateSeries(series.id(), std::move(env), std::move(sys));
}

ChannelScaler::ChannelScaler(std::size_t n_env, std::vector<double> mean, std::vector<double> scale)
    : n_env_(n_env), mean_(std::move(mean)), scale_(std::move(scale)) {
    require(mean_.size() == scale_.size() && n_env_ < mean_.size(), ErrorCode::Shape, "scaler: inconsistent parameters");
}

ChannelScaler ChannelScaler::fit(const std::vector<MultivariateSeries>& series) {
    require(!series.empty(), ErrorCode::Argument, "scaler: no series to fit");
    ChannelScaler s;
    s.n_env_ = series.front().n_env();
    const std::size_t channels = s.n_env_ + series.front().n_sys();
    std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
    double count = 0.0;
    for (const auto& x : series) {
        require(x.n_env() == s.n_env_ && x.n_env() + x.n_sys() == channels, ErrorCode::Shape,
                "scaler: inconsistent dimensions");
        for (std::size_t c = 0; c < channels; ++c) {
            auto row = c < s.n_env_ ? x.env().row(c) : x.sys().row(c - s.n_env_);
            for (double v : row) {
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        count += static_cast<double>(x.length());
    }
    s.mean_.resize(channels);
    s.scale_.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        s.mean_[c] = sum[c] / count;
        const double var = std::max(0.0, sq[c] / count - s.mean_[c] * s.mean_[c]);
        const double sd = std::sqrt(var);
        s.scale_[c] = sd < 1e-12 ? 0.0 : 1.0 / sd;
    }
    return s;
}

MultivariateSeries ChannelScaler::apply(const MultivariateSeries& series) const {
    require(series.n_env() == n_env_ && series.n_env() + series.n_sys() == mean_.size(), ErrorCode::Shape,
            "scaler: dimensions differ from fitted data");
    Matrix env = series.env();
    Matrix sys = series.sys();
    for (std::size_t c = 0; c < mean_.size(); ++c) {
        auto row = c < n_env_ ? env.row(c) : sys.row(c - n_env_);
        for (double& v : row) v = (v - mean_[c]) * scale_[c];
    }
    return MultivariateSeries(series.id(), std::move(env), std::move(sys));
}

Dataset ChannelScaler::apply(const Dataset& dataset) const {
    Dataset out;
    out.manifest = dataset.manifest;
    out.labels = dataset.labels;
    out.series.reserve(dataset.series.size());
    for (const auto& s : dataset.series) out.series.push_back(apply(s));
    return out;
}

}  // namespace iad
