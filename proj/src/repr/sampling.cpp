#include <cmath>
#include <sstream>

#include "iad/core/io.hpp"
#include "iad/repr/repr.hpp"

namespace iad::repr {

const char* train_mode_name(TrainMode m) noexcept {
    switch (m) {
        case TrainMode::EnvInv: return "envinv";
        case TrainMode::Basic: return "basic";
        case TrainMode::ResidualInput: return "residual";
    }
    return "unknown";
}

TrainMode parse_train_mode(const std::string& text) {
    if (text == "envinv") return TrainMode::EnvInv;
    if (text == "basic") return TrainMode::Basic;
    if (text == "residual") return TrainMode::ResidualInput;
    fail(ErrorCode::Argument, "unknown training mode '" + text + "' (expected envinv, basic or residual)");
}

void TrainConfig::validate() const {
    require(lambda >= 0.0 && std::isfinite(lambda), ErrorCode::Config, "train: lambda must be >= 0");
    require(window_frac > 0.0 && window_frac <= 1.0, ErrorCode::Config, "train: window_frac must be in (0, 1]");
    require(epochs >= 1, ErrorCode::Config, "train: epochs must be >= 1");
    require(batch >= 1, ErrorCode::Config, "train: batch must be >= 1");
    require(lr > 0.0 && std::isfinite(lr), ErrorCode::Config, "train: lr must be > 0");
    require(buckets >= 2, ErrorCode::Config, "train: buckets must be >= 2");
    require(triples_per_series >= 1, ErrorCode::Config, "train: triples_per_series must be >= 1");
    require(channels >= 1 && blocks >= 1 && kernel >= 1 && max_embed_dim >= 1, ErrorCode::Config,
            "train: encoder sizes must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"lambda", lambda},       {"epochs", epochs},           {"batch", batch},
            {"lr", lr},               {"window_frac", window_frac}, {"buckets", buckets},
            {"seed", seed},           {"mode", train_mode_name(mode)},
            {"triples_per_series", triples_per_series},
            {"adversary", adversary}, {"channels", channels},       {"blocks", blocks},
            {"kernel", kernel},       {"max_embed_dim", max_embed_dim}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    try {
        auto read = [&](const char* key, auto& field) {
            if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
        };
        read("lambda", c.lambda);
        read("epochs", c.epochs);
        read("batch", c.batch);
        read("lr", c.lr);
        read("window_frac", c.window_frac);
        read("buckets", c.buckets);
        read("seed", c.seed);
        if (j.contains("mode")) c.mode = parse_train_mode(j.at("mode").get<std::string>());
        read("triples_per_series", c.triples_per_series);
        read("adversary", c.adversary);
        read("channels", c.channels);
        read("blocks", c.blocks);
        read("kernel", c.kernel);
        read("max_embed_dim", c.max_embed_dim);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t window_length(double window_frac, std::size_t length) {
    const auto w = static_cast<std::size_t>(std::llround(window_frac * static_cast<double>(length)));
    require(w >= 2, ErrorCode::Sampling,
            "window length round(" + format_double(window_frac) + " * " + std::to_string(length) + ") = " + std::to_string(w) + " is below 2");
    require(length >= 2 * w, ErrorCode::Sampling,
            "series length " + std::to_string(length) + " is shorter than twice the window length " + std::to_string(w));
    return w;
}

Triple sample_triple(const MultivariateSeries& series, const MultivariateSeries& other, std::size_t window, std::mt19937_64& rng,
                     NegativeKind kind) {
    const std::size_t T = series.length();
    const std::size_t w = window;
    require(w >= 2, ErrorCode::Sampling, "sample_triple: window length must be >= 2");
    require(T >= 2 * w, ErrorCode::Sampling,
            "sample_triple: series '" + series.id() + "' of length " + std::to_string(T) + " is too short for window " + std::to_string(w));
    require(other.length() >= w, ErrorCode::Sampling, "sample_triple: series '" + other.id() + "' is shorter than the window");
    require(other.n_env() == series.n_env() && other.n_sys() == series.n_sys(), ErrorCode::Shape,
            "sample_triple: series dimensions differ");

    auto uniform = [&rng](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    const std::size_t ctx_len = uniform(w, T);
    const std::size_t ctx_start = uniform(0, T - ctx_len);
    const std::size_t pos_start = uniform(ctx_start, ctx_start + ctx_len - w);
    const SnippetRange ctx_range{ctx_start, ctx_len};
    const SnippetRange pos_range{pos_start, w};

    MultivariateSeries pos = slice(series, pos_range);
    Triple out{slice(series, ctx_range), pos, pos, ctx_range, pos_range, {}, false};

    if (kind == NegativeKind::OtherSeries) {
        out.neg_env_range = {uniform(0, other.length() - w), w};
        out.neg = slice(other, out.neg_env_range);
        return out;
    }

    // disjoint starts: s + w <= pos_start, or s >= pos_start + w
    const std::size_t before = pos_start >= w ? pos_start - w + 1 : 0;
    const std::size_t after = T - w >= pos_start + w ? T - w - (pos_start + w) + 1 : 0;
    const bool want_same = std::bernoulli_distribution(0.5)(rng);
    Matrix env;
    if (want_same && before + after > 0) {
        const std::size_t k = uniform(0, before + after - 1);
        const std::size_t s = k < before ? k : pos_start + w + (k - before);
        out.neg_env_range = {s, w};
        out.neg_same_series = true;
        env = series.env().columns(s, w);
    } else {
        out.neg_env_range = {uniform(0, other.length() - w), w};
        env = other.env().columns(out.neg_env_range.start, w);
    }
    out.neg = MultivariateSeries(series.id(), std::move(env), pos.sys());
    return out;
}

nn::Var contrastive_loss(const nn::Var& e_ctx, const nn::Var& e_pos, const nn::Var& e_neg) {
    if (e_ctx.shape() != e_pos.shape() || e_ctx.shape() != e_neg.shape())
        fail(ErrorCode::Shape, "contrastive_loss: embedding shapes " + nn::shape_str(e_ctx.shape()) + ", " +
                                   nn::shape_str(e_pos.shape()) + ", " + nn::shape_str(e_neg.shape()) + " differ");
    return nn::subtract(nn::distance(e_pos, e_ctx), nn::distance(e_neg, e_ctx));
}

std::vector<QuantileBins> fit_env_bins(const std::vector<MultivariateSeries>& series, std::size_t buckets) {
    require(!series.empty(), ErrorCode::Argument, "fit_env_bins: no series");
    const std::size_t N = series.front().n_env();
    std::vector<QuantileBins> bins;
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> values;
        for (const auto& s : series) {
            auto row = s.env().row(n);
            values.insert(values.end(), row.begin(), row.end());
        }
        bins.push_back(quantile_bins(values, buckets));
    }
    return bins;
}

std::vector<std::size_t> env_targets(const Matrix& env_window, const std::vector<QuantileBins>& bins) {
    require(!bins.empty(), ErrorCode::State, "env_targets: bins have not been fitted");
    require(bins.size() == env_window.rows(), ErrorCode::Shape,
            "env_targets: " + std::to_string(env_window.rows()) + " environment rows but " + std::to_string(bins.size()) + " fitted bins");
    require(env_window.cols() >= 1, ErrorCode::Shape, "env_targets: empty window");
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < env_window.rows(); ++n) {
        double s = 0.0;
        for (double v : env_window.row(n)) s += v;
        out.push_back(bins[n].digitize(s / static_cast<double>(env_window.cols())));
    }
    return out;
}

nn::Var adv_loss(nn::Tape& tape, const nn::Linear& predictor, const nn::Var& embedding, std::span<const std::size_t> targets,
                 std::size_t buckets) {
    require(embedding.shape() == nn::Shape{predictor.in_dim()}, ErrorCode::Shape,
            "adv_loss: embedding " + nn::shape_str(embedding.shape()) + " does not match predictor input " +
                std::to_string(predictor.in_dim()));
    require(predictor.out_dim() == targets.size() * buckets, ErrorCode::Shape,
            "adv_loss: predictor emits " + std::to_string(predictor.out_dim()) + " logits for " + std::to_string(targets.size()) +
                " dims x " + std::to_string(buckets) + " buckets");
    return nn::nll(nn::log_softmax(predictor(tape, embedding), buckets), targets, buckets);
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out << "epoch,contrastive,adversarial,total\n";
    for (const auto& e : log)
        out << e.epoch << ',' << format_double(e.contrastive) << ',' << format_double(e.adversarial) << ',' << format_double(e.total) << '\n';
    return out.str();
}

}  // namespace iad::repr
