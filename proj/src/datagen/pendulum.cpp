#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "iad/datagen/generators.hpp"

namespace iad::datagen {

namespace {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace

PendulumState PendulumDynamics::operator()(const PendulumState& s, double control) const {
    return {s.velocity, -(gravity / chord_length) * std::sin(s.angle) - damping * s.velocity + control};
}

double PendulumDynamics::energy(const PendulumState& s) const {
    return 0.5 * chord_length * chord_length * s.velocity * s.velocity +
           gravity * chord_length * (1.0 - std::cos(s.angle));
}

PendulumState rk4_step(const PendulumState& s, const Dynamics& f, double u, double dt) {
    require(dt > 0.0, ErrorCode::Argument, "rk4_step: dt must be positive");
    auto axpy = [](const PendulumState& a, const PendulumState& k, double h) {
        return PendulumState{a.angle + h * k.angle, a.velocity + h * k.velocity};
    };
    const PendulumState k1 = f(s, u);
    const PendulumState k2 = f(axpy(s, k1, dt / 2), u);
    const PendulumState k3 = f(axpy(s, k2, dt / 2), u);
    const PendulumState k4 = f(axpy(s, k3, dt), u);
    return {s.angle + dt / 6 * (k1.angle + 2 * k2.angle + 2 * k3.angle + k4.angle),
            s.velocity + dt / 6 * (k1.velocity + 2 * k2.velocity + 2 * k3.velocity + k4.velocity)};
}

std::vector<double> ou_path(std::size_t steps, double dt, double reversion, double volatility,
                            const std::function<double(double)>& mean_fn, std::uint64_t seed) {
    require(reversion >= 0.0 && volatility >= 0.0, ErrorCode::Argument, "ou_path: reversion and volatility must be >= 0");
    std::vector<double> path;
    if (steps == 0) return path;
    path.reserve(steps);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sqrt_dt = std::sqrt(dt);
    double u = mean_fn(0.0);
    path.push_back(u);
    for (std::size_t t = 0; t + 1 < steps; ++t) {
        const double xi = gauss(rng);
        u += reversion * (mean_fn(static_cast<double>(t)) - u) * dt + volatility * sqrt_dt * xi;
        path.push_back(u);
    }
    return path;
}

void PendulumConfig::validate() const {
    require(n_series >= 1, ErrorCode::Config, "pendulum: n_series must be >= 1");
    require(length >= 2, ErrorCode::Config, "pendulum: T must be >= 2");
    require(dt > 0.0, ErrorCode::Config, "pendulum: dt must be > 0");
    require(chord_length > 0.0, ErrorCode::Config, "pendulum: chord length must be > 0");
    require(length_factor > 0.0, ErrorCode::Config, "pendulum: length_factor must be > 0");
    require(ou_reversion >= 0.0 && ou_volatility >= 0.0, ErrorCode::Config, "pendulum: OU parameters must be >= 0");
    require(ou_mean_period > 0.0, ErrorCode::Config, "pendulum: OU mean period must be > 0");
    require(p_intrinsic >= 0.0 && p_intrinsic <= 1.0, ErrorCode::Config, "pendulum: p_intrinsic must be in [0,1]");
    require(anomaly_len_min > 0.0 && anomaly_len_min <= anomaly_len_max && anomaly_len_max <= 1.0, ErrorCode::Config,
            "pendulum: anomaly length fractions must satisfy 0 < min <= max <= 1");
    require(initial_angle_max >= 0.0, ErrorCode::Config, "pendulum: initial_angle_max must be >= 0");
}

nlohmann::json PendulumConfig::to_json() const {
    return {{"kind", "pendulum"},
            {"n_series", n_series},
            {"T", length},
            {"dt", dt},
            {"g", gravity},
            {"L0", chord_length},
            {"damping", damping},
            {"ou_reversion", ou_reversion},
            {"ou_volatility", ou_volatility},
            {"ou_mean_amplitude", ou_mean_amplitude},
            {"ou_mean_period", ou_mean_period},
            {"initial_angle_max", initial_angle_max},
            {"p_intrinsic", p_intrinsic},
            {"length_factor", length_factor},
            {"anomaly_len_frac", std::vector<double>{anomaly_len_min, anomaly_len_max}}};
}

PendulumConfig PendulumConfig::from_json(const nlohmann::json& j) {
    PendulumConfig c;
    try {
        read_field(j, "n_series", c.n_series);
        read_field(j, "T", c.length);
        read_field(j, "dt", c.dt);
        read_field(j, "g", c.gravity);
        read_field(j, "L0", c.chord_length);
        read_field(j, "damping", c.damping);
        read_field(j, "ou_reversion", c.ou_reversion);
        read_field(j, "ou_volatility", c.ou_volatility);
        read_field(j, "ou_mean_amplitude", c.ou_mean_amplitude);
        read_field(j, "ou_mean_period", c.ou_mean_period);
        read_field(j, "initial_angle_max", c.initial_angle_max);
        read_field(j, "p_intrinsic", c.p_intrinsic);
        read_field(j, "length_factor", c.length_factor);
        if (j.contains("anomaly_len_frac")) {
            auto v = j.at("anomaly_len_frac").get<std::vector<double>>();
            require(v.size() == 2, ErrorCode::Config, "pendulum: anomaly_len_frac needs [min, max]");
            c.anomaly_len_min = v[0];
            c.anomaly_len_max = v[1];
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, std::string("pendulum config: ") + e.what());
    }
    c.validate();
    return c;
}

GeneratedSeries pendulum_series(const PendulumConfig& c, std::uint64_t seed, std::size_t index, bool inject) {
    const std::size_t T = c.length;
    std::mt19937_64 plan_rng(derive_seed(seed, 2 * index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const bool intrinsic = unit(plan_rng) < c.p_intrinsic;
    SnippetRange range{};
    if (intrinsic) {
        std::uniform_real_distribution<double> frac(c.anomaly_len_min, c.anomaly_len_max);
        auto len = static_cast<std::size_t>(std::lround(frac(plan_rng) * static_cast<double>(T)));
        len = std::clamp<std::size_t>(len, 1, T);
        range = {std::uniform_int_distribution<std::size_t>(0, T - len)(plan_rng), len};
    }
    const double phase = 2.0 * std::numbers::pi * unit(plan_rng);
    const double theta0 = c.initial_angle_max * (2.0 * unit(plan_rng) - 1.0);

    const double amp = c.ou_mean_amplitude, period = c.ou_mean_period;
    auto mean_fn = [amp, period, phase](double t) { return amp * std::sin(2.0 * std::numbers::pi * t / period + phase); };
    const auto control = ou_path(T, c.dt, c.ou_reversion, c.ou_volatility, mean_fn, derive_seed(seed, 2 * index + 1));

    PendulumDynamics normal{c.gravity, c.chord_length, c.damping};
    PendulumDynamics lengthened{c.gravity, c.chord_length * c.length_factor, c.damping};
    Matrix env(1, T), sys(2, T);
    PendulumState state{theta0, 0.0};
    for (std::size_t k = 0; k < T; ++k) {
        env(0, k) = control[k];
        sys(0, k) = state.angle;
        sys(1, k) = state.velocity;
        const bool in_range = intrinsic && inject && k >= range.start && k < range.end();
        const PendulumDynamics& dyn = in_range ? lengthened : normal;
        state = rk4_step(state, std::cref(dyn), control[k], c.dt);
    }

    LabelRecord label;
    char id[32];
    std::snprintf(id, sizeof id, "pend_%04zu", index);
    label.series_id = id;
    label.klass = intrinsic ? AnomalyClass::Intrinsic : AnomalyClass::Normal;
    if (intrinsic) label.ranges = {range};
    label.source = LabelSource::Generator;
    return {MultivariateSeries(label.series_id, std::move(env), std::move(sys)), std::move(label)};
}

Dataset gen_pendulum(const PendulumConfig& config, std::uint64_t seed) {
    config.validate();
    Dataset ds;
    ds.manifest.name = "pendulum";
    ds.manifest.n_series = config.n_series;
    ds.manifest.length = config.length;
    ds.manifest.n_env = 1;
    ds.manifest.n_sys = 2;
    ds.manifest.seed = static_cast<std::int64_t>(seed);
    ds.manifest.generator_config = config.to_json();
    for (std::size_t i = 0; i < config.n_series; ++i) {
        auto g = pendulum_series(config, seed, i);
        ds.manifest.series_paths.push_back("series/" + g.series.id() + ".csv");
        ds.series.push_back(std::move(g.series));
        ds.labels.push_back(std::move(g.label));
    }
    ds.validate();
    return ds;
}

}  // namespace iad::datagen
