#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "iad/core/matrix.hpp"
#include "iad/nn/autograd.hpp"
#include "json.hpp"

namespace iad::nn {

struct NamedTensor {
    std::string name;
    TensorPtr tensor;
};

/// Affine map y = W x + b with W initialised U(-1/sqrt(in), 1/sqrt(in)).
struct Linear {
    TensorPtr weight;  // [out, in]
    TensorPtr bias;    // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);

    std::size_t in_dim() const { return weight->shape[1]; }
    std::size_t out_dim() const { return weight->shape[0]; }
    Var operator()(Tape& tape, const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Two dilated causal convolutions with leaky ReLU, plus a residual path
/// (1x1 convolution when the channel count changes).
struct CausalConvBlock {
    TensorPtr conv1_w, conv1_b, conv2_w, conv2_b;
    TensorPtr skip_w, skip_b;  // null when in == out
    std::size_t dilation = 1;

    CausalConvBlock() = default;
    CausalConvBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t dilation, std::mt19937_64& rng);

    Var operator()(Tape& tape, const Var& x) const;
    void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct EncoderSpec {
    std::size_t input_channels = 0;
    std::size_t channels = 32;
    std::size_t blocks = 10;
    std::size_t kernel = 3;
    std::size_t embed_dim = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static EncoderSpec from_json(const nlohmann::json& j);
};

/// d = min(round(0.1 * window * N * M), 256), at least 1.
std::size_t embedding_dim(std::size_t window, std::size_t n_env, std::size_t n_sys, std::size_t cap = 256);

/// TCN encoder: conv blocks with dilation 2^b, mean over time, linear head,
/// projection onto the unit sphere.
class Encoder {
public:
    Encoder() = default;
    Encoder(const EncoderSpec& spec, std::uint64_t seed);

    const EncoderSpec& spec() const noexcept { return spec_; }
    /// input: [channels, T] matrix.
    Var encode(Tape& tape, const Matrix& input) const;
    /// Convenience inference without gradient recording.
    std::vector<double> embed(const Matrix& input) const;

    std::vector<NamedTensor> parameters() const;

private:
    EncoderSpec spec_;
    std::vector<CausalConvBlock> blocks_;
    Linear head_;
};

/// Multilayer perceptron with ReLU hidden layers.
class Mlp {
public:
    Mlp() = default;
    Mlp(const std::vector<std::size_t>& widths, std::uint64_t seed);

    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    /// x: [In] or [B, In]
    Var operator()(Tape& tape, const Var& x) const;
    std::vector<NamedTensor> parameters(const std::string& prefix) const;

private:
    std::vector<std::size_t> widths_;
    std::vector<Linear> layers_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam step on a flat parameter vector.
void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg);

class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamConfig cfg);
    /// Applies accumulated gradients (missing gradients count as zero) and clears them.
    void step();
    void zero_grad();

private:
    std::vector<TensorPtr> params_;
    std::vector<AdamState> states_;
    AdamConfig cfg_;
};

std::vector<TensorPtr> tensors_of(const std::vector<NamedTensor>& named);

/// Fails with a Training error if any parameter value is not finite.
void check_finite_parameters(const std::vector<NamedTensor>& params, const std::string& where);

// Checkpoint files:
//   "IADCKPT\0" | u32 version | u64 meta length | meta JSON |
//   u32 tensor count | per tensor: u32 name length, name, u32 ndim, u64 dims[ndim], f64 values
// All integers and floats little-endian.
struct Checkpoint {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
};

std::string checkpoint_bytes(const nlohmann::json& meta, const std::vector<NamedTensor>& tensors);
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const std::vector<NamedTensor>& tensors);
Checkpoint parse_checkpoint(const std::string& bytes);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint tensors into parameters by name, checking shapes.
void load_parameters(const Checkpoint& ckpt, const std::vector<NamedTensor>& params);

}  // namespace iad::nn
