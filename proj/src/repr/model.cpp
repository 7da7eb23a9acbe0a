#include <algorithm>
#include <cmath>
#include <numeric>

#include "iad/core/io.hpp"
#include "iad/datagen/generators.hpp"
#include "iad/repr/repr.hpp"

namespace iad::repr {

namespace {

constexpr const char* kFormat = "iad-model";

nn::TensorPtr vector_tensor(const std::vector<double>& v) { return std::make_shared<nn::Tensor>(nn::Shape{v.size()}, v); }

}  // namespace

MultivariateSeries Model::prepare(const MultivariateSeries& raw) const {
    if (raw.n_env() != n_env_ || raw.n_sys() != n_sys_)
        fail(ErrorCode::Shape, "series '" + raw.id() + "' has dimensions (" + std::to_string(raw.n_env()) + ", " +
                                   std::to_string(raw.n_sys()) + "), model expects (" + std::to_string(n_env_) + ", " +
                                   std::to_string(n_sys_) + ")");
    if (config_.mode == TrainMode::ResidualInput) {
        require(regressor_.has_value(), ErrorCode::State, "residual-input model has no regressor");
        Matrix delta = detect::residuals(*regressor_, raw);
        return MultivariateSeries(raw.id(), scaler_.apply(raw).env(), std::move(delta));
    }
    return scaler_.apply(raw);
}

Matrix Model::encoder_input(const MultivariateSeries& prepared) const {
    return config_.mode == TrainMode::ResidualInput ? prepared.sys() : prepared.stacked();
}

std::vector<double> Model::embed(const MultivariateSeries& raw) const { return encoder_.embed(encoder_input(prepare(raw))); }

Matrix Model::embed_dataset(const Dataset& dataset) const {
    const std::size_t d = embed_dim();
    Matrix out(dataset.series.size(), d);
    for (std::size_t i = 0; i < dataset.series.size(); ++i) {
        auto e = embed(dataset.series[i]);
        std::copy(e.begin(), e.end(), out.row(i).begin());
    }
    return out;
}

std::vector<nn::NamedTensor> Model::parameters() const {
    auto out = encoder_.parameters();
    predictor_.collect("predictor", out);
    out.push_back({"scaler.mean", vector_tensor(scaler_.mean())});
    out.push_back({"scaler.scale", vector_tensor(scaler_.scale())});
    for (std::size_t n = 0; n < bins_.size(); ++n) out.push_back({"bins." + std::to_string(n), vector_tensor(bins_[n].edges())});
    if (regressor_) {
        auto r = regressor_->parameters();
        out.insert(out.end(), r.begin(), r.end());
    }
    return out;
}

nlohmann::json Model::meta() const {
    nlohmann::json log = nlohmann::json::array();
    for (const auto& e : log_)
        log.push_back({{"epoch", e.epoch}, {"contrastive", e.contrastive}, {"adversarial", e.adversarial}, {"total", e.total}});
    return {{"format", kFormat},
            {"mode", train_mode_name(config_.mode)},
            {"config", config_.to_json()},
            {"window", window_},
            {"n_env", n_env_},
            {"n_sys", n_sys_},
            {"encoder", encoder_.spec().to_json()},
            {"bins", bins_.size()},
            {"regressor_hidden", regressor_ ? nlohmann::json(regressor_->hidden()) : nlohmann::json(nullptr)},
            {"log", log}};
}

std::string Model::checkpoint() const { return nn::checkpoint_bytes(meta(), parameters()); }

void Model::save(const std::filesystem::path& path) const { nn::write_checkpoint(path, meta(), parameters()); }

Model Model::load(const std::filesystem::path& path) { return from_checkpoint(nn::read_checkpoint(path)); }

Model Model::from_checkpoint(const nn::Checkpoint& ck) {
    const auto& m = ck.meta;
    if (!m.is_object() || m.value("format", "") != kFormat) fail(ErrorCode::Parse, "checkpoint is not an iad model");
    Model model;
    try {
        model.config_ = TrainConfig::from_json(m.at("config"));
        model.window_ = m.at("window").get<std::size_t>();
        model.n_env_ = m.at("n_env").get<std::size_t>();
        model.n_sys_ = m.at("n_sys").get<std::size_t>();
        model.encoder_ = nn::Encoder(nn::EncoderSpec::from_json(m.at("encoder")), 0);
        const std::size_t n_bins = m.at("bins").get<std::size_t>();
        for (std::size_t n = 0; n < n_bins; ++n) {
            const auto& edges = ck.get("bins." + std::to_string(n)).value;
            model.bins_.emplace_back(std::vector<double>(edges.begin(), edges.end()));
        }
        if (!m.at("regressor_hidden").is_null())
            model.regressor_ = detect::Regressor(model.n_env_, model.n_sys_, m.at("regressor_hidden").get<std::size_t>(), 0);
        for (const auto& e : m.at("log"))
            model.log_.push_back({e.at("epoch").get<std::size_t>(), e.at("contrastive").get<double>(), e.at("adversarial").get<double>(),
                                  e.at("total").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Parse, std::string("checkpoint meta: ") + e.what());
    }
    const auto& pw = ck.get("predictor.weight");
    require(pw.shape.size() == 2, ErrorCode::Parse, "checkpoint: predictor weight must be a matrix");
    std::mt19937_64 rng(0);
    model.predictor_ = nn::Linear(pw.shape[1], pw.shape[0], rng);
    const auto& mean = ck.get("scaler.mean").value;
    const auto& scale = ck.get("scaler.scale").value;
    model.scaler_ = ChannelScaler(model.n_env_, {mean.begin(), mean.end()}, {scale.begin(), scale.end()});
    auto params = model.encoder_.parameters();
    model.predictor_.collect("predictor", params);
    if (model.regressor_) {
        auto r = model.regressor_->parameters();
        params.insert(params.end(), r.begin(), r.end());
    }
    nn::load_parameters(ck, params);
    return model;
}

Model train(const Dataset& dataset, std::span<const std::size_t> train_index, const TrainConfig& config,
            const std::function<void(const EpochLog&)>& on_epoch) {
    config.validate();
    require(!dataset.series.empty(), ErrorCode::Argument, "train: empty dataset");
    std::vector<std::size_t> index(train_index.begin(), train_index.end());
    if (index.empty()) {
        index.resize(dataset.series.size());
        std::iota(index.begin(), index.end(), std::size_t{0});
    }
    require(index.size() >= 2, ErrorCode::Argument, "train: need at least 2 training series, got " + std::to_string(index.size()));
    std::vector<MultivariateSeries> raw;
    for (std::size_t i : index) {
        require(i < dataset.series.size(), ErrorCode::Range, "train: series index out of range");
        raw.push_back(dataset.series[i]);
    }

    Model model;
    model.config_ = config;
    model.n_env_ = raw.front().n_env();
    model.n_sys_ = raw.front().n_sys();
    std::size_t min_len = raw.front().length();
    for (const auto& s : raw) min_len = std::min(min_len, s.length());
    model.window_ = window_length(config.window_frac, min_len);
    model.scaler_ = ChannelScaler::fit(raw);
    if (config.mode == TrainMode::ResidualInput)
        model.regressor_ = detect::fit_regressor(dataset, index, datagen::derive_seed(config.seed, 4));

    std::vector<MultivariateSeries> prepared;
    prepared.reserve(raw.size());
    for (const auto& s : raw) prepared.push_back(model.prepare(s));
    model.bins_ = fit_env_bins(prepared, config.buckets);

    const std::size_t d = nn::embedding_dim(model.window_, model.n_env_, model.n_sys_, config.max_embed_dim);
    const std::size_t in_channels = config.mode == TrainMode::ResidualInput ? model.n_sys_ : model.n_env_ + model.n_sys_;
    model.encoder_ = nn::Encoder(nn::EncoderSpec{in_channels, config.channels, config.blocks, config.kernel, d},
                                 datagen::derive_seed(config.seed, 1));
    std::mt19937_64 init_rng(datagen::derive_seed(config.seed, 2));
    model.predictor_ = nn::Linear(d, model.n_env_ * config.buckets, init_rng);

    const bool adversarial = config.mode == TrainMode::EnvInv && config.adversary;
    const NegativeKind kind = config.mode == TrainMode::EnvInv ? NegativeKind::DependencyBreaking : NegativeKind::OtherSeries;
    auto encoder_params = model.encoder_.parameters();
    std::vector<nn::NamedTensor> predictor_params;
    model.predictor_.collect("predictor", predictor_params);
    // separate optimisers keep encoder updates independent of whether the predictor trains
    nn::Adam enc_opt(nn::tensors_of(encoder_params), nn::AdamConfig{config.lr});
    nn::Adam pred_opt(nn::tensors_of(predictor_params), nn::AdamConfig{config.lr});

    std::mt19937_64 rng(datagen::derive_seed(config.seed, 3));
    std::vector<std::size_t> order;
    for (std::size_t r = 0; r < config.triples_per_series; ++r)
        for (std::size_t i = 0; i < prepared.size(); ++i) order.push_back(i);

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double contr_sum = 0.0, adv_sum = 0.0, total_sum = 0.0;
        std::size_t batch_no = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch, ++batch_no) {
            const std::size_t b = std::min(config.batch, order.size() - start);
            const double inv_b = 1.0 / static_cast<double>(b);
            for (std::size_t j = 0; j < b; ++j) {
                const std::size_t i = order[start + j];
                std::size_t o = std::uniform_int_distribution<std::size_t>(0, prepared.size() - 2)(rng);
                if (o >= i) ++o;
                const Triple tr = sample_triple(prepared[i], prepared[o], model.window_, rng, kind);
                nn::Tape tape;
                nn::Var e_ctx = model.encoder_.encode(tape, model.encoder_input(tr.ctx));
                nn::Var e_pos = model.encoder_.encode(tape, model.encoder_input(tr.pos));
                nn::Var e_neg = model.encoder_.encode(tape, model.encoder_input(tr.neg));
                nn::Var loss = contrastive_loss(e_ctx, e_pos, e_neg);
                const double contr = loss.item();
                double adv = 0.0, total = contr;
                if (adversarial) {
                    // the encoder hides the environment of pos windows and exposes it for neg windows
                    const auto t_pos = env_targets(tr.pos.env(), model.bins_);
                    const auto t_neg = env_targets(tr.neg.env(), model.bins_);
                    nn::Var a_pos = adv_loss(tape, model.predictor_, nn::grad_reverse(e_pos, config.lambda), t_pos, config.buckets);
                    nn::Var a_neg = adv_loss(tape, model.predictor_, nn::grad_scale(e_neg, config.lambda), t_neg, config.buckets);
                    nn::Var a = nn::scale(nn::add(a_pos, a_neg), 0.5);
                    adv = a.item();
                    total = contr - 0.5 * config.lambda * (a_pos.item() - a_neg.item());
                    loss = nn::add(loss, a);
                }
                if (!std::isfinite(contr) || !std::isfinite(adv))
                    fail(ErrorCode::Training, "train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                                  std::to_string(batch_no + 1));
                tape.backward(nn::scale(loss, inv_b));
                contr_sum += contr;
                adv_sum += adv;
                total_sum += total;
            }
            enc_opt.step();
            if (adversarial) pred_opt.step();
        }
        nn::check_finite_parameters(encoder_params, "after epoch " + std::to_string(epoch));
        if (adversarial) nn::check_finite_parameters(predictor_params, "after epoch " + std::to_string(epoch));
        const double n = static_cast<double>(order.size());
        EpochLog entry{epoch, contr_sum / n, adv_sum / n, total_sum / n};
        model.log_.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    return model;
}

}  // namespace iad::repr
