#include "iad/nn/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include <Eigen/Dense>

namespace iad::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool needs(const Var& v) { return v.tensor().requires_grad; }

TensorPtr result(Shape shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>(std::move(shape));
    t->requires_grad = requires_grad;
    return t;
}

void same_shape(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape())
        fail(ErrorCode::Shape, std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

#ifndef NDEBUG
void check_finite(const std::vector<double>& v, const char* what) {
    for (double x : v)
        if (!std::isfinite(x)) fail(ErrorCode::Internal, std::string("non-finite ") + what);
}
#endif

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

std::size_t shape_count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

double Var::item() const {
    require(t_ && t_->value.size() == 1, ErrorCode::Shape, "item(): tensor is not a scalar");
    return t_->value[0];
}

Var Tape::constant(Tensor t) {
    t.requires_grad = false;
    return Var(this, std::make_shared<Tensor>(std::move(t)));
}

Var Tape::push(TensorPtr out, std::function<void()> backward) {
#ifndef NDEBUG
    check_finite(out->value, "forward value");
#endif
    if (record_ && out->requires_grad) nodes_.push_back({out, std::move(backward)});
    return Var(this, std::move(out));
}

void Tape::backward(const Var& root) {
    require(root.tensor().value.size() == 1, ErrorCode::Shape, "backward: root must be a scalar, got " + shape_str(root.shape()));
    require(record_, ErrorCode::State, "backward: tape is not recording");
    if (!root.tensor().requires_grad) return;
    root.ptr()->ensure_grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) continue;
        it->backward();
    }
#ifndef NDEBUG
    for (const auto& n : nodes_) check_finite(n.out->grad, "gradient");
#endif
}

Var causal_conv1d(const Var& x, const Var& weight, const Var& bias, std::size_t dilation) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    if (xs.size() != 2 || ws.size() != 3 || ws[2] != xs[0] || bias.shape() != Shape{ws[1]})
        fail(ErrorCode::Shape, "causal_conv1d: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws) +
                                   " and bias " + shape_str(bias.shape()));
    require(dilation >= 1, ErrorCode::Argument, "causal_conv1d: dilation must be >= 1");
    const std::size_t ci = xs[0], T = xs[1], K = ws[0], co = ws[1];
    require(T >= 1, ErrorCode::Shape, "causal_conv1d: zero-length input");
    const auto Ti = static_cast<Eigen::Index>(T);
    auto out = result({co, T}, needs(x) || needs(weight) || needs(bias));
    MapMat O(out->value.data(), static_cast<Eigen::Index>(co), Ti);
    CMapMat X(x.tensor().value.data(), static_cast<Eigen::Index>(ci), Ti);
    const double* b = bias.tensor().value.data();
    for (std::size_t r = 0; r < co; ++r) O.row(static_cast<Eigen::Index>(r)).setConstant(b[r]);
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t shift = k * dilation;
        if (shift >= T) break;
        const auto n = static_cast<Eigen::Index>(T - shift);
        CMapMat Wk(weight.tensor().value.data() + k * co * ci, static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci));
        O.rightCols(n).noalias() += Wk * X.leftCols(n);
    }
    auto xp = x.ptr(), wp = weight.ptr(), bp = bias.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, wp, bp, op, ci, co, K, T, dilation]() {
        auto o = op.lock();
        const auto Ti = static_cast<Eigen::Index>(T);
        CMapMat G(o->grad.data(), static_cast<Eigen::Index>(co), Ti);
        CMapMat X(xp->value.data(), static_cast<Eigen::Index>(ci), Ti);
        std::optional<MapMat> dX;
        if (xp->requires_grad) dX.emplace(xp->ensure_grad().data(), static_cast<Eigen::Index>(ci), Ti);
        if (wp->requires_grad) wp->ensure_grad();
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t shift = k * dilation;
            if (shift >= T) break;
            const auto n = static_cast<Eigen::Index>(T - shift);
            CMapMat Wk(wp->value.data() + k * co * ci, static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci));
            if (dX) dX->leftCols(n).noalias() += Wk.transpose() * G.rightCols(n);
            if (wp->requires_grad) {
                MapMat dW(wp->grad.data() + k * co * ci, static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(ci));
                dW.noalias() += G.rightCols(n) * X.leftCols(n).transpose();
            }
        }
        if (bp->requires_grad) {
            Eigen::Map<Eigen::VectorXd> db(bp->ensure_grad().data(), static_cast<Eigen::Index>(co));
            db += G.rowwise().sum();
        }
    });
}

namespace {

template <class Fwd, class Deriv>
Var unary(const Var& x, Fwd f, Deriv df) {
    auto out = result(x.shape(), needs(x));
    const auto& xv = x.tensor().value;
    for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = f(xv[i]);
    auto xp = x.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, op, df]() {
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i] * df(xp->value[i]);
    });
}

}  // namespace

Var leaky_relu(const Var& x, double slope) {
    return unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; },
                 [slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

Var relu(const Var& x) {
    return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var scale(const Var& x, double factor) {
    return unary(x, [factor](double v) { return factor * v; }, [factor](double) { return factor; });
}

namespace {

Var add_scaled(const Var& a, const Var& b, double sign, const char* name) {
    same_shape(name, a, b);
    auto out = result(a.shape(), needs(a) || needs(b));
    const auto& av = a.tensor().value;
    const auto& bv = b.tensor().value;
    for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = av[i] + sign * bv[i];
    auto ap = a.ptr(), bp = b.ptr();
    std::weak_ptr<Tensor> op = out;
    return a.tape().push(out, [ap, bp, op, sign]() {
        auto o = op.lock();
        if (ap->requires_grad) {
            auto& g = ap->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o->grad[i];
        }
        if (bp->requires_grad) {
            auto& g = bp->ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += sign * o->grad[i];
        }
    });
}

}  // namespace

Var add(const Var& a, const Var& b) { return add_scaled(a, b, 1.0, "add"); }
Var subtract(const Var& a, const Var& b) { return add_scaled(a, b, -1.0, "subtract"); }

Var linear(const Var& x, const Var& weight, const Var& bias) {
    const auto& xs = x.shape();
    const auto& ws = weight.shape();
    const bool batched = xs.size() == 2;
    if ((xs.size() != 1 && !batched) || ws.size() != 2 || xs.back() != ws[1] || bias.shape() != Shape{ws[0]})
        fail(ErrorCode::Shape, "linear: input " + shape_str(xs) + " incompatible with weight " + shape_str(ws) +
                                   " and bias " + shape_str(bias.shape()));
    const std::size_t rows = batched ? xs[0] : 1, in = ws[1], outn = ws[0];
    auto out = result(batched ? Shape{rows, outn} : Shape{outn}, needs(x) || needs(weight) || needs(bias));
    const auto R = static_cast<Eigen::Index>(rows), I = static_cast<Eigen::Index>(in), O = static_cast<Eigen::Index>(outn);
    CMapMat X(x.tensor().value.data(), R, I);
    CMapMat W(weight.tensor().value.data(), O, I);
    Eigen::Map<const Eigen::RowVectorXd> b(bias.tensor().value.data(), O);
    MapMat Y(out->value.data(), R, O);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += b;
    auto xp = x.ptr(), wp = weight.ptr(), bp = bias.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, wp, bp, op, R, I, O]() {
        auto o = op.lock();
        CMapMat G(o->grad.data(), R, O);
        if (xp->requires_grad) {
            MapMat dX(xp->ensure_grad().data(), R, I);
            dX.noalias() += G * CMapMat(wp->value.data(), O, I);
        }
        if (wp->requires_grad) {
            MapMat dW(wp->ensure_grad().data(), O, I);
            dW.noalias() += G.transpose() * CMapMat(xp->value.data(), R, I);
        }
        if (bp->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd> db(bp->ensure_grad().data(), O);
            db += G.colwise().sum();
        }
    });
}

Var mean_over_time(const Var& x) {
    const auto& xs = x.shape();
    if (xs.size() != 2 || xs[1] == 0) fail(ErrorCode::Shape, "mean_over_time: expected [C, T>0], got " + shape_str(xs));
    const std::size_t C = xs[0], T = xs[1];
    auto out = result({C}, needs(x));
    const auto& xv = x.tensor().value;
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (std::size_t t = 0; t < T; ++t) s += xv[c * T + t];
        out->value[c] = s / static_cast<double>(T);
    }
    auto xp = x.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, op, C, T]() {
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        const double inv = 1.0 / static_cast<double>(T);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) g[c * T + t] += o->grad[c] * inv;
    });
}

Var log_softmax(const Var& logits, std::size_t group) {
    const std::size_t n = logits.tensor().size();
    if (group == 0 || n % group != 0)
        fail(ErrorCode::Shape, "log_softmax: " + shape_str(logits.shape()) + " not divisible into groups of " + std::to_string(group));
    auto out = result(logits.shape(), needs(logits));
    const auto& x = logits.tensor().value;
    for (std::size_t g0 = 0; g0 < n; g0 += group) {
        const double mx = *std::max_element(x.begin() + static_cast<std::ptrdiff_t>(g0), x.begin() + static_cast<std::ptrdiff_t>(g0 + group));
        double s = 0.0;
        for (std::size_t i = 0; i < group; ++i) s += std::exp(x[g0 + i] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t i = 0; i < group; ++i) out->value[g0 + i] = x[g0 + i] - lse;
    }
    auto xp = logits.ptr();
    std::weak_ptr<Tensor> op = out;
    return logits.tape().push(out, [xp, op, n, group]() {
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        for (std::size_t g0 = 0; g0 < n; g0 += group) {
            double gs = 0.0;
            for (std::size_t i = 0; i < group; ++i) gs += o->grad[g0 + i];
            for (std::size_t i = 0; i < group; ++i) g[g0 + i] += o->grad[g0 + i] - std::exp(o->value[g0 + i]) * gs;
        }
    });
}

Var nll(const Var& log_probs, std::span<const std::size_t> targets, std::size_t group) {
    const std::size_t n = log_probs.tensor().size();
    if (group == 0 || n != targets.size() * group)
        fail(ErrorCode::Shape, "nll: " + shape_str(log_probs.shape()) + " does not hold " + std::to_string(targets.size()) +
                                   " groups of " + std::to_string(group));
    for (auto t : targets)
        require(t < group, ErrorCode::Argument, "nll: target " + std::to_string(t) + " >= class count " + std::to_string(group));
    auto out = result({1}, needs(log_probs));
    const auto& lp = log_probs.tensor().value;
    double s = 0.0;
    for (std::size_t g = 0; g < targets.size(); ++g) s -= lp[g * group + targets[g]];
    const double inv = 1.0 / static_cast<double>(targets.size());
    out->value[0] = s * inv;
    std::vector<std::size_t> tg(targets.begin(), targets.end());
    auto xp = log_probs.ptr();
    std::weak_ptr<Tensor> op = out;
    return log_probs.tape().push(out, [xp, op, tg = std::move(tg), group, inv]() {
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        for (std::size_t k = 0; k < tg.size(); ++k) g[k * group + tg[k]] -= o->grad[0] * inv;
    });
}

Var l2_norm(const Var& x) {
    auto out = result({1}, needs(x));
    const auto& xv = x.tensor().value;
    double s = 0.0;
    for (double v : xv) s += v * v;
    const double norm = std::sqrt(s);
    out->value[0] = norm;
    auto xp = x.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, op, norm]() {
        if (norm == 0.0) return;
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        const double k = o->grad[0] / norm;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * xp->value[i];
    });
}

Var normalize(const Var& x) {
    auto out = result(x.shape(), needs(x));
    const auto& xv = x.tensor().value;
    double s = 0.0;
    for (double v : xv) s += v * v;
    const double norm = std::max(std::sqrt(s), 1e-12);
    for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = xv[i] / norm;
    auto xp = x.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, op, norm]() {
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += o->value[i] * o->grad[i];
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (o->grad[i] - o->value[i] * dot) / norm;
    });
}

Var distance(const Var& a, const Var& b) {
    same_shape("distance", a, b);
    return l2_norm(subtract(a, b));
}

Var sum(const Var& x) {
    auto out = result({1}, needs(x));
    const auto& xv = x.tensor().value;
    out->value[0] = std::accumulate(xv.begin(), xv.end(), 0.0);
    auto xp = x.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, op]() {
        auto o = op.lock();
        for (double& g : xp->ensure_grad()) g += o->grad[0];
    });
}

Var mean(const Var& x) {
    require(x.tensor().size() > 0, ErrorCode::Shape, "mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.tensor().size()));
}

Var mse(const Var& prediction, std::span<const double> target) {
    const auto& pv = prediction.tensor().value;
    if (pv.size() != target.size() || pv.empty())
        fail(ErrorCode::Shape, "mse: prediction " + shape_str(prediction.shape()) + " vs target of " + std::to_string(target.size()) + " values");
    auto out = result({1}, needs(prediction));
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - target[i]) * (pv[i] - target[i]);
    const double inv = 1.0 / static_cast<double>(pv.size());
    out->value[0] = s * inv;
    std::vector<double> tg(target.begin(), target.end());
    auto xp = prediction.ptr();
    std::weak_ptr<Tensor> op = out;
    return prediction.tape().push(out, [xp, op, tg = std::move(tg), inv]() {
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * inv * o->grad[0] * (xp->value[i] - tg[i]);
    });
}

Var grad_scale(const Var& x, double factor) {
    require(std::isfinite(factor), ErrorCode::Argument, "grad_scale: factor must be finite");
    auto out = result(x.shape(), needs(x));
    out->value = x.tensor().value;
    auto xp = x.ptr();
    std::weak_ptr<Tensor> op = out;
    return x.tape().push(out, [xp, op, factor]() {
        auto o = op.lock();
        auto& g = xp->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * o->grad[i];
    });
}

Var grad_reverse(const Var& x, double lambda) {
    require(lambda >= 0.0, ErrorCode::Argument, "grad_reverse: lambda must be >= 0");
    return grad_scale(x, -lambda);
}

}  // namespace iad::nn
