#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "iad/datagen/generators.hpp"
#include "iad/repr/repr.hpp"

using namespace iad;
using namespace iad::repr;

namespace {

MultivariateSeries ramp(const std::string& id, std::size_t T, double offset) {
    Matrix env(2, T), sys(1, T);
    for (std::size_t t = 0; t < T; ++t) {
        env(0, t) = offset + t;
        env(1, t) = offset - t;
        sys(0, t) = offset + 0.5 * t;
    }
    return {id, env, sys};
}

bool inside(const SnippetRange& r, std::size_t T) { return r.end() <= T; }

bool contains(const SnippetRange& outer, const SnippetRange& inner) {
    return outer.start <= inner.start && inner.end() <= outer.end();
}

bool disjoint(const SnippetRange& a, const SnippetRange& b) { return a.end() <= b.start || b.end() <= a.start; }

TrainConfig small_config() {
    TrainConfig c;
    c.epochs = 3;
    c.channels = 8;
    c.blocks = 2;
    c.batch = 8;
    return c;
}

Dataset small_dataset(std::uint64_t seed) {
    datagen::SyntheticConfig cfg;
    cfg.n_series = 24;
    cfg.length = 100;
    return datagen::gen_synthetic(cfg, seed);
}

}  // namespace

TEST_CASE("window length rule") {
    CHECK(window_length(0.2, 720) == 144);
    CHECK(window_length(0.2, 10) == 2);
    CHECK_THROWS_AS(window_length(0.2, 5), Error);
    CHECK_THROWS_AS(window_length(0.6, 100), Error);
}

TEST_CASE("triples: positive inside its context, negative environment elsewhere") {
    const auto a = ramp("a", 100, 0.0), b = ramp("b", 100, 1000.0);
    std::mt19937_64 rng(3);
    std::size_t same = 0, covered = 0;
    const std::size_t draws = 10000, w = 20;
    std::vector<bool> seen(100, false);
    for (std::size_t i = 0; i < draws; ++i) {
        const auto tr = sample_triple(a, b, w, rng);
        REQUIRE(tr.ctx_range.length >= w);
        REQUIRE(tr.pos_range.length == w);
        REQUIRE(inside(tr.ctx_range, 100));
        REQUIRE(contains(tr.ctx_range, tr.pos_range));
        // the positive is the exact slice of the source
        REQUIRE(tr.pos == slice(a, tr.pos_range));
        REQUIRE(tr.ctx == slice(a, tr.ctx_range));
        // negative: positive system, foreign environment
        REQUIRE(tr.neg.sys() == tr.pos.sys());
        const auto& src = tr.neg_same_series ? a : b;
        REQUIRE(tr.neg.env() == slice(src, tr.neg_env_range).env());
        if (tr.neg_same_series) {
            ++same;
            REQUIRE(disjoint(tr.neg_env_range, tr.pos_range));
        }
        for (std::size_t t = tr.pos_range.start; t < tr.pos_range.end(); ++t) seen[t] = true;
    }
    covered = static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
    CHECK(covered >= 95);
    // the two sources are chosen with equal probability
    CHECK(std::abs(static_cast<double>(same) / draws - 0.5) < 0.03);
}

TEST_CASE("short series take the negative from the other series") {
    const auto a = ramp("a", 40, 0.0), b = ramp("b", 40, 1000.0);
    std::mt19937_64 rng(8);
    std::size_t middle = 0;
    for (int i = 0; i < 400; ++i) {
        const auto tr = sample_triple(a, b, 20, rng);
        if (tr.neg_same_series) CHECK(disjoint(tr.neg_env_range, tr.pos_range));
        // a positive strictly inside (0, 20) leaves no disjoint window of length 20
        if (tr.pos_range.start > 0 && tr.pos_range.start < 20) {
            ++middle;
            CHECK_FALSE(tr.neg_same_series);
        }
    }
    CHECK(middle > 100);
    const auto other = sample_triple(a, b, 10, rng, NegativeKind::OtherSeries);
    CHECK(other.neg.env() == slice(b, other.neg_env_range).env());
    CHECK(other.neg.sys() == slice(b, other.neg_env_range).sys());
}

TEST_CASE("contrastive loss values") {
    nn::Tape tape;
    const auto e1 = tape.constant(nn::Tensor({2}, std::vector<double>{1, 0}));
    const auto e2 = tape.constant(nn::Tensor({2}, std::vector<double>{0, 1}));
    CHECK(contrastive_loss(e1, e1, e2).item() == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-12));
    CHECK(contrastive_loss(e1, e2, e2).item() == doctest::Approx(0.0));
    CHECK(contrastive_loss(e1, e2, e1).item() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("adversarial loss of an uninformed predictor") {
    std::mt19937_64 rng(1);
    nn::Linear pred(4, 2 * 20, rng);
    for (double& v : pred.weight->value) v = 0.0;
    for (double& v : pred.bias->value) v = 0.0;
    nn::Tape tape;
    const auto e = tape.constant(nn::Tensor({4}, std::vector<double>{0.5, 0.5, 0.5, 0.5}));
    const std::vector<std::size_t> targets = {3, 17};
    CHECK(adv_loss(tape, pred, e, targets, 20).item() == doctest::Approx(std::log(20.0)).epsilon(1e-12));

    // a confident correct predictor drives the loss to zero
    for (std::size_t d = 0; d < 2; ++d) pred.bias->value[d * 20 + targets[d]] = 50.0;
    nn::Tape t2;
    CHECK(adv_loss(t2, pred, t2.constant(nn::Tensor({4}, 0.5)), targets, 20).item() < 1e-12);
    CHECK_THROWS_AS(adv_loss(t2, pred, t2.constant(nn::Tensor({4}, 0.5)), std::vector<std::size_t>{3}, 20), Error);
}

TEST_CASE("environment targets") {
    std::vector<MultivariateSeries> s;
    Matrix env(1, 100), sys(1, 100);
    for (std::size_t t = 0; t < 100; ++t) env(0, t) = static_cast<double>(t);
    s.emplace_back("x", env, sys);
    const auto bins = fit_env_bins(s, 20);
    REQUIRE(bins.size() == 1);

    auto target_of = [&](double v) { return env_targets(Matrix(1, 5, v), bins)[0]; };
    CHECK(target_of(-100.0) == 0);
    CHECK(target_of(1e6) == 19);
    // the median edge is 49.5; a value on an edge stays in the lower bucket
    CHECK(target_of(49.5) == 9);
    CHECK(target_of(49.6) == 10);
    std::size_t prev = 0;
    for (double v = -5; v < 105; v += 0.5) {
        const auto c = target_of(v);
        CHECK(c >= prev);
        prev = c;
    }
    Matrix mixed(1, 4, std::vector<double>{0, 0, 99, 99});
    CHECK(env_targets(mixed, bins)[0] == 9);
}

TEST_CASE("training config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.buckets = 1;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.epochs = 7;
    c.mode = TrainMode::Basic;
    CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
    CHECK(parse_train_mode(train_mode_name(TrainMode::ResidualInput)) == TrainMode::ResidualInput);
    try {
        TrainConfig::from_json({{"epochs", "many"}});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Config);
    }
}

TEST_CASE("training is deterministic and embeddings are unit norm") {
    const auto ds = small_dataset(4);
    const auto cfg = small_config();
    const auto a = train(ds, {}, cfg);
    const auto b = train(ds, {}, cfg);
    CHECK(a.checkpoint() == b.checkpoint());
    CHECK(a.log().size() == cfg.epochs);

    const auto emb = a.embed_dataset(ds);
    CHECK(emb.rows() == ds.series.size());
    CHECK(emb.cols() == a.embed_dim());
    for (std::size_t r = 0; r < emb.rows(); ++r) {
        double n = 0.0;
        for (double v : emb.row(r)) n += v * v;
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-12));
    }
    const auto one = a.embed(ds.series[3]);
    CHECK(std::equal(one.begin(), one.end(), emb.row(3).begin()));

    auto other = cfg;
    other.seed = 1;
    CHECK(train(ds, {}, other).checkpoint() != a.checkpoint());
}

TEST_CASE("zero weight matches training without the adversary") {
    const auto ds = small_dataset(6);
    auto cfg = small_config();
    cfg.lambda = 0.0;
    const auto with = train(ds, {}, cfg);
    cfg.adversary = false;
    const auto without = train(ds, {}, cfg);
    const auto pa = with.encoder().parameters(), pb = without.encoder().parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].tensor->value == pb[i].tensor->value);
}

TEST_CASE("training lowers the contrastive loss") {
    const auto ds = small_dataset(9);
    auto cfg = small_config();
    cfg.epochs = 15;
    const auto m = train(ds, {}, cfg);
    const auto& log = m.log();
    const double first = (log[0].contrastive + log[1].contrastive) / 2;
    const double last = (log[log.size() - 1].contrastive + log[log.size() - 2].contrastive) / 2;
    CHECK(last < first);
    for (const auto& e : log) {
        CHECK(std::isfinite(e.total));
        CHECK(std::abs(e.total - e.contrastive) <= cfg.lambda * 2 * std::log(20.0) + 1e-9);
    }
    CHECK(training_log_csv(log).rfind("epoch,contrastive,adversarial,total\n", 0) == 0);
}

TEST_CASE("model checkpoint round trip") {
    const auto ds = small_dataset(2);
    for (auto mode : {TrainMode::EnvInv, TrainMode::ResidualInput}) {
        auto cfg = small_config();
        cfg.epochs = 1;
        cfg.mode = mode;
        const auto m = train(ds, {}, cfg);
        const auto path = std::filesystem::temp_directory_path() / ("iad_repr_ckpt_" + std::string(train_mode_name(mode)) + ".bin");
        m.save(path);
        const auto back = Model::load(path);
        std::filesystem::remove(path);
        CHECK(back.checkpoint() == m.checkpoint());
        CHECK(back.embed_dataset(ds) == m.embed_dataset(ds));
        CHECK(back.regressor().has_value() == (mode == TrainMode::ResidualInput));
    }
    const auto bad = std::filesystem::temp_directory_path() / "iad_repr_bad.bin";
    {
        std::ofstream(bad) << "not a checkpoint";
    }
    CHECK_THROWS_AS(Model::load(bad), Error);
    std::filesystem::remove(bad);
}
