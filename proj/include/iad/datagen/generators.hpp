#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <utility>
#include <vector>

#include "iad/core/series.hpp"

namespace iad::datagen {

/// Sinusoidal two-environment / two-system benchmark.
struct SyntheticConfig {
    std::size_t n_series = 360;
    std::size_t length = 1440;
    double noise_std[4] = {0.05, 0.1, 0.1, 0.08};
    double p_extrinsic = 0.2;
    double p_intrinsic = 0.2;
    double anomaly_amplitude = 1.0;
    double anomaly_len_min = 0.05;  // fraction of length
    double anomaly_len_max = 0.20;

    void validate() const;
    nlohmann::json to_json() const;
    static SyntheticConfig from_json(const nlohmann::json& overrides);
};

/// Damped, controlled pendulum; intrinsic anomalies lengthen the chord.
struct PendulumConfig {
    std::size_t n_series = 300;
    std::size_t length = 144;
    double dt = 0.05;
    double gravity = 9.81;
    double chord_length = 1.0;
    double damping = 0.3;
    double ou_reversion = 0.5;
    double ou_volatility = 0.3;
    double ou_mean_amplitude = 1.0;
    double ou_mean_period = 48.0;  // steps
    double initial_angle_max = 0.5;  // |theta_0| drawn uniformly below this
    double p_intrinsic = 0.3;
    double length_factor = 1.6;
    double anomaly_len_min = 0.2;
    double anomaly_len_max = 0.5;

    void validate() const;
    nlohmann::json to_json() const;
    static PendulumConfig from_json(const nlohmann::json& overrides);
};

/// One generated series with its label; `clean` disables anomaly injection while
/// keeping every random draw identical.
struct GeneratedSeries {
    MultivariateSeries series;
    LabelRecord label;
};

GeneratedSeries synthetic_series(const SyntheticConfig& config, std::uint64_t seed, std::size_t index,
                                 bool inject = true);
Dataset gen_synthetic(const SyntheticConfig& config, std::uint64_t seed);

GeneratedSeries pendulum_series(const PendulumConfig& config, std::uint64_t seed, std::size_t index,
                                bool inject = true);
Dataset gen_pendulum(const PendulumConfig& config, std::uint64_t seed);

/// Euler-Maruyama path of dU = reversion (mean(t) - U) dt + volatility dW, U_0 = mean(0).
std::vector<double> ou_path(std::size_t steps, double dt, double reversion, double volatility,
                            const std::function<double(double)>& mean_fn, std::uint64_t seed);

struct PendulumState {
    double angle = 0.0;
    double velocity = 0.0;
};

/// theta'' = -(g / L) sin(theta) - damping * omega + u
struct PendulumDynamics {
    double gravity = 9.81;
    double chord_length = 1.0;
    double damping = 0.0;

    PendulumState operator()(const PendulumState& s, double control) const;
    double energy(const PendulumState& s) const;
};

using Dynamics = std::function<PendulumState(const PendulumState&, double)>;

/// Classical fourth-order Runge-Kutta step with the control held over the step.
PendulumState rk4_step(const PendulumState& state, const Dynamics& dynamics, double control, double dt);

/// Ambient columns become env rows, generator columns sys rows.
extern const std::vector<std::string> kTurbineEnvColumns;
extern const std::vector<std::string> kTurbineSysColumns;

/// Reads every *.csv export in `dir` (except labels.csv), groups rows by Turbine_ID and
/// cuts each turbine into windows of `window` rows (0 keeps one series per turbine).
Dataset load_turbine(const std::filesystem::path& dir, std::size_t window = 144);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace iad::datagen
