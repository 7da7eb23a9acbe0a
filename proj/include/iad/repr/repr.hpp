#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iad/core/binning.hpp"
#include "iad/core/series.hpp"
#include "iad/detect/detect.hpp"
#include "iad/nn/layers.hpp"

namespace iad::repr {

enum class TrainMode { EnvInv, Basic, ResidualInput };

const char* train_mode_name(TrainMode m) noexcept;
TrainMode parse_train_mode(const std::string& text);

struct TrainConfig {
    double lambda = 1e-3;
    std::size_t epochs = 50;
    std::size_t batch = 16;
    double lr = 1.9e-3;
    double window_frac = 0.2;
    std::size_t buckets = 20;
    std::uint64_t seed = 0;
    TrainMode mode = TrainMode::EnvInv;
    /// Triples drawn per training series in each epoch.
    std::size_t triples_per_series = 1;
    /// EnvInv only: when false the predictor branch is skipped entirely.
    bool adversary = true;
    std::size_t channels = 32;
    std::size_t blocks = 10;
    std::size_t kernel = 3;
    std::size_t max_embed_dim = 256;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

/// w = round(window_frac * T), checked to be >= 2 and T >= 2 w.
std::size_t window_length(double window_frac, std::size_t length);

enum class NegativeKind { DependencyBreaking, OtherSeries };

struct Triple {
    MultivariateSeries ctx, pos, neg;
    SnippetRange ctx_range, pos_range;
    SnippetRange neg_env_range;  // in the source of the negative environment
    bool neg_same_series = false;
};

/// Draws (ctx, pos, neg). With DependencyBreaking the negative pairs a foreign
/// environment window with the positive system window; the environment comes,
/// with equal probability, from a disjoint location of `series` or from `other`.
/// If no disjoint location exists it is taken from `other`.
/// With OtherSeries the negative is a whole window of `other`.
Triple sample_triple(const MultivariateSeries& series, const MultivariateSeries& other, std::size_t window, std::mt19937_64& rng,
                     NegativeKind kind = NegativeKind::DependencyBreaking);

/// d(e_pos, e_ctx) - d(e_neg, e_ctx)
nn::Var contrastive_loss(const nn::Var& e_ctx, const nn::Var& e_pos, const nn::Var& e_neg);

/// Per-dimension bins fitted on per-step environment values.
std::vector<QuantileBins> fit_env_bins(const std::vector<MultivariateSeries>& series, std::size_t buckets);

/// Class of the window mean of each environment row.
std::vector<std::size_t> env_targets(const Matrix& env_window, const std::vector<QuantileBins>& bins);

/// Mean over environment dims of the NLL of the target class; logits come from `predictor`.
nn::Var adv_loss(nn::Tape& tape, const nn::Linear& predictor, const nn::Var& embedding, std::span<const std::size_t> targets,
                 std::size_t buckets);

struct EpochLog {
    std::size_t epoch = 0;
    double contrastive = 0.0;
    double adversarial = 0.0;
    double total = 0.0;  // contrastive - lambda/2 * (adv_pos - adv_neg), the objective the encoder sees
};

std::string training_log_csv(const std::vector<EpochLog>& log);

/// Everything needed to embed new series: scaling, encoder, adversary, bins
/// and, for residual input, the regressor.
class Model {
public:
    Model() = default;

    const TrainConfig& config() const noexcept { return config_; }
    std::size_t window() const noexcept { return window_; }
    std::size_t embed_dim() const noexcept { return encoder_.spec().embed_dim; }
    std::size_t n_env() const noexcept { return n_env_; }
    std::size_t n_sys() const noexcept { return n_sys_; }
    const nn::Encoder& encoder() const noexcept { return encoder_; }
    const nn::Linear& predictor() const noexcept { return predictor_; }
    const std::vector<QuantileBins>& bins() const noexcept { return bins_; }
    const std::optional<detect::Regressor>& regressor() const noexcept { return regressor_; }
    const ChannelScaler& scaler() const noexcept { return scaler_; }
    const std::vector<EpochLog>& log() const noexcept { return log_; }

    /// Series in the form the encoder sees: scaled, or (env, residual) for residual input.
    MultivariateSeries prepare(const MultivariateSeries& raw) const;
    /// Encoder input matrix of a prepared snippet.
    Matrix encoder_input(const MultivariateSeries& prepared) const;

    std::vector<double> embed(const MultivariateSeries& raw) const;
    /// One unit-norm row per series, in dataset order.
    Matrix embed_dataset(const Dataset& dataset) const;

    std::vector<nn::NamedTensor> parameters() const;
    nlohmann::json meta() const;
    std::string checkpoint() const;
    void save(const std::filesystem::path& path) const;
    static Model load(const std::filesystem::path& path);
    static Model from_checkpoint(const nn::Checkpoint& ckpt);

    friend Model train(const Dataset&, std::span<const std::size_t>, const TrainConfig&,
                       const std::function<void(const EpochLog&)>&);

private:
    TrainConfig config_;
    std::size_t window_ = 0;
    std::size_t n_env_ = 0, n_sys_ = 0;
    ChannelScaler scaler_;
    nn::Encoder encoder_;
    nn::Linear predictor_;
    std::vector<QuantileBins> bins_;
    std::optional<detect::Regressor> regressor_;
    std::vector<EpochLog> log_;
};

/// Trains on the listed series (all series when `train_index` is empty).
Model train(const Dataset& dataset, std::span<const std::size_t> train_index, const TrainConfig& config,
            const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace iad::repr
