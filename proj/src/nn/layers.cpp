#include "iad/nn/layers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace iad::nn {

namespace {

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.value) v = dist(rng);
}

TensorPtr uniform_parameter(Shape shape, double bound, std::mt19937_64& rng) {
    auto p = make_parameter(std::move(shape));
    fill_uniform(*p, bound, rng);
    return p;
}

}  // namespace

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    require(in >= 1 && out >= 1, ErrorCode::Shape, "linear layer needs positive dimensions");
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = uniform_parameter({out, in}, bound, rng);
    bias = uniform_parameter({out}, bound, rng);
}

Var Linear::operator()(Tape& tape, const Var& x) const { return linear(x, tape.param(weight), tape.param(bias)); }

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
}

CausalConvBlock::CausalConvBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t d, std::mt19937_64& rng)
    : dilation(d) {
    require(in >= 1 && out >= 1 && kernel >= 1, ErrorCode::Shape, "conv block needs positive dimensions");
    const double b1 = 1.0 / std::sqrt(static_cast<double>(in * kernel));
    const double b2 = 1.0 / std::sqrt(static_cast<double>(out * kernel));
    conv1_w = uniform_parameter({kernel, out, in}, b1, rng);
    conv1_b = uniform_parameter({out}, b1, rng);
    conv2_w = uniform_parameter({kernel, out, out}, b2, rng);
    conv2_b = uniform_parameter({out}, b2, rng);
    if (in != out) {
        const double bs = 1.0 / std::sqrt(static_cast<double>(in));
        skip_w = uniform_parameter({1, out, in}, bs, rng);
        skip_b = uniform_parameter({out}, bs, rng);
    }
}

Var CausalConvBlock::operator()(Tape& tape, const Var& x) const {
    Var h = leaky_relu(causal_conv1d(x, tape.param(conv1_w), tape.param(conv1_b), dilation));
    h = leaky_relu(causal_conv1d(h, tape.param(conv2_w), tape.param(conv2_b), dilation));
    Var skip = skip_w ? causal_conv1d(x, tape.param(skip_w), tape.param(skip_b), 1) : x;
    return add(h, skip);
}

void CausalConvBlock::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
    out.push_back({prefix + ".conv1.weight", conv1_w});
    out.push_back({prefix + ".conv1.bias", conv1_b});
    out.push_back({prefix + ".conv2.weight", conv2_w});
    out.push_back({prefix + ".conv2.bias", conv2_b});
    if (skip_w) {
        out.push_back({prefix + ".skip.weight", skip_w});
        out.push_back({prefix + ".skip.bias", skip_b});
    }
}

void EncoderSpec::validate() const {
    require(input_channels >= 1, ErrorCode::Config, "encoder: input channel count must be >= 1");
    require(channels >= 1 && blocks >= 1 && kernel >= 1, ErrorCode::Config, "encoder: channels, blocks and kernel must be >= 1");
    require(blocks <= 40, ErrorCode::Config, "encoder: too many blocks for 2^b dilation");
    require(embed_dim >= 1, ErrorCode::Config, "encoder: embedding dimension must be >= 1");
}

nlohmann::json EncoderSpec::to_json() const {
    return {{"input_channels", input_channels}, {"channels", channels}, {"blocks", blocks}, {"kernel", kernel}, {"embed_dim", embed_dim}};
}

EncoderSpec EncoderSpec::from_json(const nlohmann::json& j) {
    EncoderSpec s;
    try {
        s.input_channels = j.at("input_channels").get<std::size_t>();
        s.channels = j.at("channels").get<std::size_t>();
        s.blocks = j.at("blocks").get<std::size_t>();
        s.kernel = j.at("kernel").get<std::size_t>();
        s.embed_dim = j.at("embed_dim").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Parse, std::string("encoder spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::size_t embedding_dim(std::size_t window, std::size_t n_env, std::size_t n_sys, std::size_t cap) {
    const double raw = 0.1 * static_cast<double>(window) * static_cast<double>(n_env) * static_cast<double>(n_sys);
    const auto d = static_cast<std::size_t>(std::llround(raw));
    return std::clamp<std::size_t>(d, 1, cap);
}

Encoder::Encoder(const EncoderSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 rng(seed);
    std::size_t in = spec_.input_channels;
    for (std::size_t b = 0; b < spec_.blocks; ++b) {
        blocks_.emplace_back(in, spec_.channels, spec_.kernel, std::size_t{1} << b, rng);
        in = spec_.channels;
    }
    head_ = Linear(spec_.channels, spec_.embed_dim, rng);
}

Var Encoder::encode(Tape& tape, const Matrix& input) const {
    if (input.rows() != spec_.input_channels || input.cols() == 0)
        fail(ErrorCode::Shape, "encoder: input [" + std::to_string(input.rows()) + ", " + std::to_string(input.cols()) +
                                   "] incompatible with " + std::to_string(spec_.input_channels) + " input channels");
    Var h = tape.constant(Tensor({input.rows(), input.cols()}, input.data()));
    for (const auto& block : blocks_) h = block(tape, h);
    return normalize(head_(tape, mean_over_time(h)));
}

std::vector<double> Encoder::embed(const Matrix& input) const {
    Tape tape(false);
    Var e = encode(tape, input);
    return {e.tensor().value.begin(), e.tensor().value.end()};
}

std::vector<NamedTensor> Encoder::parameters() const {
    std::vector<NamedTensor> out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].collect("encoder.block" + std::to_string(b), out);
    head_.collect("encoder.head", out);
    return out;
}

Mlp::Mlp(const std::vector<std::size_t>& widths, std::uint64_t seed) : widths_(widths) {
    require(widths_.size() >= 2, ErrorCode::Config, "mlp: need at least input and output widths");
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i + 1 < widths_.size(); ++i) layers_.emplace_back(widths_[i], widths_[i + 1], rng);
}

Var Mlp::operator()(Tape& tape, const Var& x) const {
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = layers_[i](tape, h);
        if (i + 1 < layers_.size()) h = relu(h);
    }
    return h;
}

std::vector<NamedTensor> Mlp::parameters(const std::string& prefix) const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
    return out;
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size())
        fail(ErrorCode::Shape, "adam: " + std::to_string(params.size()) + " parameters vs " + std::to_string(grads.size()) + " gradients");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    require(state.m.size() == params.size(), ErrorCode::Shape, "adam: optimizer state does not match parameter count");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        params[i] -= cfg.lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + cfg.eps);
    }
}

Adam::Adam(std::vector<TensorPtr> params, AdamConfig cfg) : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

void Adam::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        p.ensure_grad();
        adam_update(p.value, p.grad, states_[i], cfg_);
        p.zero_grad();
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

std::vector<TensorPtr> tensors_of(const std::vector<NamedTensor>& named) {
    std::vector<TensorPtr> out;
    out.reserve(named.size());
    for (const auto& n : named) out.push_back(n.tensor);
    return out;
}

void check_finite_parameters(const std::vector<NamedTensor>& params, const std::string& where) {
    for (const auto& p : params)
        for (double v : p.tensor->value)
            if (!std::isfinite(v)) fail(ErrorCode::Training, "non-finite value in parameter " + p.name + " " + where);
}

namespace {

constexpr char kMagic[8] = {'I', 'A', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class U>
void put(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(const std::string& b) : bytes_(b) {}

    template <class U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) fail(ErrorCode::Parse, "checkpoint: truncated file");
    }
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    fail(ErrorCode::NotFound, "checkpoint: no tensor named " + name);
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

std::string checkpoint_bytes(const nlohmann::json& meta, const std::vector<NamedTensor>& tensors) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    const std::string m = meta.dump();
    put<std::uint64_t>(out, m.size());
    out += m;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape.size()));
        for (auto d : t->shape) put<std::uint64_t>(out, d);
        for (double v : t->value) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta, const std::vector<NamedTensor>& tensors) {
    const std::string bytes = checkpoint_bytes(meta, tensors);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "failed writing checkpoint '" + path.string() + "'");
}

Checkpoint parse_checkpoint(const std::string& bytes) {
    Reader r(bytes);
    if (r.take(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) fail(ErrorCode::Parse, "checkpoint: bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kVersion) fail(ErrorCode::Parse, "checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    const auto meta_len = r.get<std::uint64_t>();
    try {
        ck.meta = nlohmann::json::parse(r.take(meta_len));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Parse, std::string("checkpoint meta: ") + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.take(r.get<std::uint32_t>());
        const auto ndim = r.get<std::uint32_t>();
        if (ndim > 8) fail(ErrorCode::Parse, "checkpoint: tensor " + name + " has implausible rank");
        Shape shape(ndim);
        for (auto& d : shape) d = r.get<std::uint64_t>();
        const std::size_t n = shape_count(shape);
        if (n > bytes.size() / 8) fail(ErrorCode::Parse, "checkpoint: tensor " + name + " exceeds file size");
        std::vector<double> values(n);
        for (auto& v : values) v = std::bit_cast<double>(r.get<std::uint64_t>());
        ck.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!r.done()) fail(ErrorCode::Parse, "checkpoint: trailing bytes");
    return ck;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

void load_parameters(const Checkpoint& ckpt, const std::vector<NamedTensor>& params) {
    for (const auto& [name, t] : params) {
        const Tensor& src = ckpt.get(name);
        if (src.shape != t->shape)
            fail(ErrorCode::Shape, "checkpoint tensor " + name + " has shape " + shape_str(src.shape) + ", expected " + shape_str(t->shape));
        t->value = src.value;
        t->grad.clear();
    }
}

}  // namespace iad::nn
