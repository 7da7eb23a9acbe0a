#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "iad/datagen/generators.hpp"

namespace iad::datagen {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 over (seed, stream)
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

namespace {

std::string series_id(const char* prefix, std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04zu", prefix, index);
    return buf;
}

SnippetRange draw_interval(std::mt19937_64& rng, std::size_t length, double min_frac, double max_frac) {
    std::uniform_real_distribution<double> frac(min_frac, max_frac);
    auto len = static_cast<std::size_t>(std::lround(frac(rng) * static_cast<double>(length)));
    len = std::clamp<std::size_t>(len, 1, length);
    std::uniform_int_distribution<std::size_t> start(0, length - len);
    return {start(rng), len};
}

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

void SyntheticConfig::validate() const {
    require(n_series >= 1, ErrorCode::Config, "synthetic: n_series must be >= 1");
    require(length >= 2, ErrorCode::Config, "synthetic: T must be >= 2");
    for (double s : noise_std) require(s >= 0.0 && std::isfinite(s), ErrorCode::Config, "synthetic: noise std must be >= 0");
    require(p_extrinsic >= 0.0 && p_intrinsic >= 0.0 && p_extrinsic + p_intrinsic <= 1.0, ErrorCode::Config,
            "synthetic: anomaly probabilities must be in [0,1] and sum to at most 1");
    require(anomaly_len_min > 0.0 && anomaly_len_min <= anomaly_len_max && anomaly_len_max <= 1.0, ErrorCode::Config,
            "synthetic: anomaly length fractions must satisfy 0 < min <= max <= 1");
    require(std::isfinite(anomaly_amplitude), ErrorCode::Config, "synthetic: amplitude must be finite");
}

nlohmann::json SyntheticConfig::to_json() const {
    return {{"kind", "synthetic"},
            {"n_series", n_series},
            {"T", length},
            {"noise_std", std::vector<double>(noise_std, noise_std + 4)},
            {"p_extrinsic", p_extrinsic},
            {"p_intrinsic", p_intrinsic},
            {"anomaly_amplitude", anomaly_amplitude},
            {"anomaly_len_frac", std::vector<double>{anomaly_len_min, anomaly_len_max}}};
}

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
    SyntheticConfig c;
    try {
        read_field(j, "n_series", c.n_series);
        read_field(j, "T", c.length);
        if (j.contains("noise_std")) {
            auto v = j.at("noise_std").get<std::vector<double>>();
            require(v.size() == 4, ErrorCode::Config, "synthetic: noise_std needs 4 values");
            std::copy(v.begin(), v.end(), c.noise_std);
        }
        read_field(j, "p_extrinsic", c.p_extrinsic);
        read_field(j, "p_intrinsic", c.p_intrinsic);
        read_field(j, "anomaly_amplitude", c.anomaly_amplitude);
        if (j.contains("anomaly_len_frac")) {
            auto v = j.at("anomaly_len_frac").get<std::vector<double>>();
            require(v.size() == 2, ErrorCode::Config, "synthetic: anomaly_len_frac needs [min, max]");
            c.anomaly_len_min = v[0];
            c.anomaly_len_max = v[1];
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, std::string("synthetic config: ") + e.what());
    }
    c.validate();
    return c;
}

GeneratedSeries synthetic_series(const SyntheticConfig& c, std::uint64_t seed, std::size_t index, bool inject) {
    const std::size_t T = c.length;
    // class and interval draws use one stream, noise another, so the clean twin
    // shares every noise sample with its anomalous counterpart
    std::mt19937_64 plan_rng(derive_seed(seed, 2 * index));
    std::mt19937_64 noise_rng(derive_seed(seed, 2 * index + 1));

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(plan_rng);
    AnomalyClass klass = AnomalyClass::Normal;
    if (u < c.p_extrinsic) {
        klass = AnomalyClass::Extrinsic;
    } else if (u < c.p_extrinsic + c.p_intrinsic) {
        klass = AnomalyClass::Intrinsic;
    }
    SnippetRange range{};
    std::size_t target_row = 0;
    if (klass != AnomalyClass::Normal) {
        range = draw_interval(plan_rng, T, c.anomaly_len_min, c.anomaly_len_max);
        target_row = std::uniform_int_distribution<std::size_t>(0, 1)(plan_rng);
    }

    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix env(2, T), sys(2, T);
    const double t0 = static_cast<double>(index * T);
    for (std::size_t k = 0; k < T; ++k) {
        const double t = t0 + static_cast<double>(k);
        const double e1 = c.noise_std[0] * gauss(noise_rng);
        const double e2 = c.noise_std[1] * gauss(noise_rng);
        const double e3 = c.noise_std[2] * gauss(noise_rng);
        const double e4 = c.noise_std[3] * gauss(noise_rng);
        const bool in_range = klass != AnomalyClass::Normal && k >= range.start && k < range.end();
        double x1 = std::sin(t / 275.0 - 50.0) + std::sin(t / 200.0) + e1;
        const double x2 = std::sin(t / 100.0) + e2;
        if (inject && in_range && klass == AnomalyClass::Extrinsic) x1 += c.anomaly_amplitude;
        double y1 = x1 + e3;
        double y2 = x1 + x2 / 2.0 - 2.0 + e4;
        if (inject && in_range && klass == AnomalyClass::Intrinsic) (target_row == 0 ? y1 : y2) += c.anomaly_amplitude;
        env(0, k) = x1;
        env(1, k) = x2;
        sys(0, k) = y1;
        sys(1, k) = y2;
    }

    LabelRecord label;
    label.series_id = series_id("syn", index);
    label.klass = klass;
    if (klass != AnomalyClass::Normal) label.ranges = {range};
    label.source = LabelSource::Generator;
    return {MultivariateSeries(label.series_id, std::move(env), std::move(sys)), std::move(label)};
}

Dataset gen_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
    config.validate();
    Dataset ds;
    ds.manifest.name = "synthetic";
    ds.manifest.n_series = config.n_series;
    ds.manifest.length = config.length;
    ds.manifest.n_env = 2;
    ds.manifest.n_sys = 2;
    ds.manifest.seed = static_cast<std::int64_t>(seed);
    ds.manifest.generator_config = config.to_json();
    for (std::size_t i = 0; i < config.n_series; ++i) {
        auto g = synthetic_series(config, seed, i);
        ds.manifest.series_paths.push_back("series/" + g.series.id() + ".csv");
        ds.series.push_back(std::move(g.series));
        ds.labels.push_back(std::move(g.label));
    }
    ds.validate();
    return ds;
}

}  // namespace iad::datagen
