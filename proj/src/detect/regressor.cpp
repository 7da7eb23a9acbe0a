#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "iad/detect/detect.hpp"

namespace iad::detect {

namespace {

nn::TensorPtr vector_tensor(std::vector<double> v) {
    const std::size_t n = v.size();
    return std::make_shared<nn::Tensor>(nn::Shape{n}, std::move(v));
}

void moments(const std::vector<MultivariateSeries>& series, bool env, std::vector<double>& mean, std::vector<double>& scale) {
    const std::size_t rows = env ? series.front().n_env() : series.front().n_sys();
    std::vector<double> sum(rows, 0.0), sq(rows, 0.0);
    double count = 0.0;
    for (const auto& s : series) {
        const Matrix& m = env ? s.env() : s.sys();
        for (std::size_t r = 0; r < rows; ++r)
            for (double v : m.row(r)) {
                sum[r] += v;
                sq[r] += v * v;
            }
        count += static_cast<double>(s.length());
    }
    mean.resize(rows);
    scale.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        mean[r] = sum[r] / count;
        const double sd = std::sqrt(std::max(0.0, sq[r] / count - mean[r] * mean[r]));
        scale[r] = sd < 1e-12 ? 1.0 : 1.0 / sd;
    }
}

}  // namespace

Regressor::Regressor(std::size_t n_env, std::size_t n_sys, std::size_t hidden, std::uint64_t seed)
    : n_env_(n_env), n_sys_(n_sys), hidden_(hidden), mlp_({n_env, hidden, n_sys}, seed) {
    require(n_env >= 1 && n_sys >= 1 && hidden >= 1, ErrorCode::Config, "regressor: dimensions must be >= 1");
    in_mean_ = vector_tensor(std::vector<double>(n_env, 0.0));
    in_scale_ = vector_tensor(std::vector<double>(n_env, 1.0));
    out_mean_ = vector_tensor(std::vector<double>(n_sys, 0.0));
    out_scale_ = vector_tensor(std::vector<double>(n_sys, 1.0));
}

void Regressor::set_standardisation(std::vector<double> in_mean, std::vector<double> in_scale, std::vector<double> out_mean,
                                    std::vector<double> out_scale) {
    require(in_mean.size() == n_env_ && in_scale.size() == n_env_ && out_mean.size() == n_sys_ && out_scale.size() == n_sys_,
            ErrorCode::Shape, "regressor: standardisation vectors do not match dimensions");
    in_mean_->value.assign(in_mean.begin(), in_mean.end());
    in_scale_->value.assign(in_scale.begin(), in_scale.end());
    out_mean_->value.assign(out_mean.begin(), out_mean.end());
    out_scale_->value.assign(out_scale.begin(), out_scale.end());
}

std::vector<nn::NamedTensor> Regressor::parameters() const {
    auto out = mlp_.parameters("regressor");
    out.push_back({"regressor.in_mean", in_mean_});
    out.push_back({"regressor.in_scale", in_scale_});
    out.push_back({"regressor.out_mean", out_mean_});
    out.push_back({"regressor.out_scale", out_scale_});
    return out;
}

std::pair<Matrix, Matrix> Regressor::design(const std::vector<MultivariateSeries>& series) const {
    std::size_t total = 0;
    for (const auto& s : series) {
        require(s.n_env() == n_env_ && s.n_sys() == n_sys_, ErrorCode::Shape,
                "regressor: series '" + s.id() + "' has dimensions (" + std::to_string(s.n_env()) + ", " +
                    std::to_string(s.n_sys()) + "), expected (" + std::to_string(n_env_) + ", " + std::to_string(n_sys_) + ")");
        total += s.length();
    }
    Matrix x(total, n_env_), y(total, n_sys_);
    std::size_t p = 0;
    for (const auto& s : series)
        for (std::size_t t = 0; t < s.length(); ++t, ++p) {
            for (std::size_t n = 0; n < n_env_; ++n) x(p, n) = (s.env()(n, t) - in_mean_->value[n]) * in_scale_->value[n];
            for (std::size_t m = 0; m < n_sys_; ++m) y(p, m) = (s.sys()(m, t) - out_mean_->value[m]) * out_scale_->value[m];
        }
    return {std::move(x), std::move(y)};
}

Matrix Regressor::predict(const Matrix& env) const {
    require(env.rows() == n_env_, ErrorCode::Shape,
            "regressor: environment has " + std::to_string(env.rows()) + " rows, expected " + std::to_string(n_env_));
    const std::size_t T = env.cols();
    nn::Tensor x({T, n_env_});
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t n = 0; n < n_env_; ++n) x.value[t * n_env_ + n] = (env(n, t) - in_mean_->value[n]) * in_scale_->value[n];
    nn::Tape tape(false);
    nn::Var out = mlp_(tape, tape.constant(std::move(x)));
    const auto& v = out.tensor().value;
    Matrix y(n_sys_, T);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t m = 0; m < n_sys_; ++m) y(m, t) = out_mean_->value[m] + v[t * n_sys_ + m] / out_scale_->value[m];
    return y;
}

Regressor fit_regressor(const std::vector<MultivariateSeries>& train, std::uint64_t seed, const RegressorConfig& cfg) {
    require(!train.empty(), ErrorCode::Argument, "fit_regressor: no training series");
    require(cfg.epochs >= 1 && cfg.batch >= 1 && cfg.lr > 0.0, ErrorCode::Config, "fit_regressor: invalid configuration");
    Regressor reg(train.front().n_env(), train.front().n_sys(), cfg.hidden, seed);
    std::vector<double> im, is, om, os;
    moments(train, true, im, is);
    moments(train, false, om, os);
    reg.set_standardisation(im, is, om, os);
    const auto [x, y] = reg.design(train);
    const std::size_t P = x.rows(), N = reg.n_env(), M = reg.n_sys();

    auto params = reg.network().parameters("regressor");
    nn::Adam adam(nn::tensors_of(params), nn::AdamConfig{cfg.lr});
    std::mt19937_64 rng(seed ^ 0x5eedf00dULL);
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < P; start += cfg.batch) {
            const std::size_t b = std::min(cfg.batch, P - start);
            nn::Tensor xb({b, N});
            std::vector<double> yb(b * M);
            for (std::size_t i = 0; i < b; ++i) {
                const std::size_t r = order[start + i];
                std::copy_n(x.row(r).begin(), N, xb.value.begin() + static_cast<std::ptrdiff_t>(i * N));
                std::copy_n(y.row(r).begin(), M, yb.begin() + static_cast<std::ptrdiff_t>(i * M));
            }
            nn::Tape tape;
            nn::Var loss = nn::mse(reg.network()(tape, tape.constant(std::move(xb))), yb);
            if (!std::isfinite(loss.item()))
                fail(ErrorCode::Training, "fit_regressor: non-finite loss at epoch " + std::to_string(epoch + 1));
            tape.backward(loss);
            adam.step();
        }
    }
    return reg;
}

Regressor fit_regressor(const Dataset& dataset, std::span<const std::size_t> train_index, std::uint64_t seed,
                        const RegressorConfig& cfg) {
    std::vector<MultivariateSeries> chosen;
    for (std::size_t i : train_index) {
        require(i < dataset.series.size(), ErrorCode::Range, "fit_regressor: series index out of range");
        if (dataset.has_labels() && dataset.labels[i].klass != AnomalyClass::Normal) continue;
        chosen.push_back(dataset.series[i]);
    }
    require(!chosen.empty(), ErrorCode::Argument, "fit_regressor: no Normal-labelled series in the training split");
    return fit_regressor(chosen, seed, cfg);
}

Matrix residuals(const Regressor& regressor, const MultivariateSeries& series) {
    require(series.n_sys() == regressor.n_sys(), ErrorCode::Shape, "residuals: system dimension does not match regressor");
    Matrix delta = regressor.predict(series.env());
    const auto& y = series.sys().data();
    auto& d = delta.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= y[i];
    return delta;
}

double res_thresh_score(const Matrix& residual) {
    double best = 0.0;
    for (double v : residual.data()) best = std::max(best, std::abs(v));
    return best;
}

}  // namespace iad::detect
