#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "doctest.h"
#include "iad/core/binning.hpp"
#include "iad/core/io.hpp"
#include "iad/datagen/generators.hpp"

using namespace iad;

namespace {

MultivariateSeries ramp(std::size_t T, std::size_t n_env = 1, std::size_t n_sys = 1) {
    Matrix env(n_env, T), sys(n_sys, T);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t r = 0; r < n_env; ++r) env(r, t) = static_cast<double>(t) + 10.0 * r;
        for (std::size_t r = 0; r < n_sys; ++r) sys(r, t) = -0.5 * static_cast<double>(t) + r;
    }
    return {"s", env, sys};
}

fs::path scratch(const std::string& name) {
    auto d = fs::temp_directory_path() / "iad_core_test" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::Internal;
}

// numpy-style "midpoint" i/B quantile with the position in exact integer arithmetic
double midpoint_quantile(std::vector<double> v, std::size_t i, std::size_t B) {
    std::sort(v.begin(), v.end());
    const std::size_t num = (v.size() - 1) * i;
    const std::size_t lo = num / B, hi = lo + (num % B != 0);
    return 0.5 * (v[lo] + v[hi]);
}

}  // namespace

TEST_CASE("slice") {
    const auto s = ramp(10);
    CHECK(slice(s, {0, 10}) == s);
    const auto part = slice(s, {3, 2});
    CHECK(part.length() == 2);
    CHECK(part.env()(0, 0) == 3.0);
    CHECK(part.env()(0, 1) == 4.0);
    CHECK(part.sys()(0, 1) == s.sys()(0, 4));
    CHECK(code_of([&] { slice(s, {9, 2}); }) == ErrorCode::Range);

    const auto big = ramp(40, 2, 3);
    for (std::size_t a = 0; a < 10; ++a)
        for (std::size_t b = 0; b < 5; ++b) {
            const SnippetRange outer{a, 20}, inner{b, 7};
            CHECK(slice(slice(big, outer), inner) == slice(big, {a + b, 7}));
        }
}

TEST_CASE("series invariants") {
    CHECK(code_of([] { MultivariateSeries("x", Matrix(1, 1), Matrix(1, 1)); }) == ErrorCode::Shape);
    CHECK(code_of([] { MultivariateSeries("x", Matrix(0, 4), Matrix(1, 4)); }) == ErrorCode::Shape);
    CHECK(code_of([] { MultivariateSeries("x", Matrix(1, 4), Matrix(1, 5)); }) == ErrorCode::Shape);
    Matrix bad(1, 3);
    bad(0, 1) = std::nan("");
    CHECK(code_of([&] { MultivariateSeries("x", bad, Matrix(1, 3)); }) == ErrorCode::Argument);
}

TEST_CASE("znormalize") {
    Matrix env(2, 3, std::vector<double>{1, 2, 3, 5, 5, 5});
    Matrix sys(1, 3, std::vector<double>{-1, 0, 4});
    const auto z = znormalize(MultivariateSeries("z", env, sys));
    CHECK(z.env()(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
    CHECK(z.env()(0, 1) == doctest::Approx(0.0));
    CHECK(z.env()(0, 2) == doctest::Approx(1.2247).epsilon(1e-4));
    for (std::size_t t = 0; t < 3; ++t) CHECK(z.env()(1, t) == 0.0);
    double mean = 0, var = 0;
    for (double v : z.sys().row(0)) mean += v / 3;
    for (double v : z.sys().row(0)) var += (v - mean) * (v - mean) / 3;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-12));
    const auto again = znormalize(z);
    for (std::size_t i = 0; i < z.sys().data().size(); ++i) CHECK(std::abs(again.sys().data()[i] - z.sys().data()[i]) < 1e-9);
}

TEST_CASE("quantile bins") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[i] = i;
    const auto bins = quantile_bins(v, 20);
    CHECK(bins.bucket_count() == 20);
    CHECK(bins.digitize(0) == 0);
    CHECK(bins.digitize(99) == 19);
    CHECK(bins.digitize(50) == 10);

    const std::vector<double> same(17, 3.0);
    const auto flat = quantile_bins(same, 20);
    CHECK(flat.digitize(3.0) == 0);
    CHECK(flat.digitize(-1.0) == 0);

    const std::vector<double> four{1, 2, 3, 4};
    const auto two = quantile_bins(four, 2);
    REQUIRE(two.edges().size() == 1);
    CHECK(two.edges()[0] == 2.5);
    CHECK(two.digitize(2) == 0);
    CHECK(two.digitize(3) == 1);

    CHECK(code_of([] { quantile_bins(std::vector<double>{}, 4); }) == ErrorCode::Argument);
    CHECK(code_of([] { quantile_bins(std::vector<double>{1.0}, 1); }) == ErrorCode::Argument);

    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(37 + trial * 11);
        for (double& xi : x) xi = nd(rng);
        const std::size_t B = 2 + trial % 19;
        const auto qb = quantile_bins(x, B);
        REQUIRE(qb.edges().size() == B - 1);
        for (std::size_t i = 1; i < B; ++i)
            CHECK(qb.edges()[i - 1] == doctest::Approx(midpoint_quantile(x, i, B)).epsilon(1e-12));
        std::size_t prev = 0;
        for (double probe = -4.0; probe <= 4.0; probe += 0.01) {
            const std::size_t k = qb.digitize(probe);
            CHECK(k < B);
            CHECK(k >= prev);
            prev = k;
            const auto below = std::count_if(qb.edges().begin(), qb.edges().end(), [&](double e) { return e < probe; });
            CHECK(k == static_cast<std::size_t>(below));
        }
    }
}

TEST_CASE("series csv round trip and errors") {
    const auto dir = scratch("csv");
    datagen::SyntheticConfig cfg;
    cfg.n_series = 3;
    cfg.length = 50;
    const auto ds = datagen::gen_synthetic(cfg, 11);
    for (const auto& s : ds.series) {
        write_series_csv(s, dir / "s.csv");
        const auto back = read_series_csv(dir / "s.csv", s.id());
        REQUIRE(back.length() == s.length());
        for (std::size_t i = 0; i < s.env().data().size(); ++i) CHECK(back.env().data()[i] == s.env().data()[i]);
        for (std::size_t i = 0; i < s.sys().data().size(); ++i) CHECK(back.sys().data()[i] == s.sys().data()[i]);
    }

    write_text_file(dir / "dims.csv", "x,env_0,env_1,sys_0\n0,1,2,3\n1,4,5,6\n");
    CHECK(code_of([&] { read_series_csv(dir / "dims.csv", "d", 1, 1); }) == ErrorCode::Consistency);
    CHECK(read_series_csv(dir / "dims.csv", "d", 2, 1).n_env() == 2);

    write_text_file(dir / "nan.csv", "x,env_0,sys_0\n0,1,2\n1,NaN,3\n2,1,1\n");
    try {
        read_series_csv(dir / "nan.csv", "n");
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Parse);
        CHECK(std::string(e.what()).find("nan.csv:3") != std::string::npos);
    }
    write_text_file(dir / "ragged.csv", "x,env_0,sys_0\n0,1,2\n1,3\n");
    CHECK(code_of([&] { read_series_csv(dir / "ragged.csv", "r"); }) == ErrorCode::Parse);
    write_text_file(dir / "header.csv", "t,env_0,sys_0\n0,1,2\n1,3,4\n");
    CHECK(code_of([&] { read_series_csv(dir / "header.csv", "h"); }) == ErrorCode::Parse);
}

TEST_CASE("format_double is exact") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng) * std::pow(10.0, static_cast<int>(rng() % 20) - 10);
        CHECK(std::stod(format_double(v)) == v);
    }
}

TEST_CASE("labels csv and ranges") {
    CHECK(format_ranges({{3, 4}, {10, 2}}) == "3:4;10:2");
    CHECK(parse_ranges("3:4;10:2") == std::vector<SnippetRange>{{3, 4}, {10, 2}});
    CHECK(parse_ranges("").empty());
    CHECK(code_of([] { parse_ranges("3-4"); }) == ErrorCode::Parse);

    std::vector<LabelRecord> labels = {
        {"a", AnomalyClass::Normal, {}, LabelSource::Generator, parse_utc("2024-01-01T00:00:00Z")},
        {"b", AnomalyClass::Intrinsic, {{2, 3}}, LabelSource::Human, parse_utc("2024-02-03T04:05:06Z")},
    };
    const auto dir = scratch("labels");
    write_labels_csv(labels, dir / "labels.csv");
    CHECK(read_labels_csv(dir / "labels.csv") == labels);
    CHECK(format_utc(labels[1].timestamp) == "2024-02-03T04:05:06Z");

    LabelRecord r{"c", AnomalyClass::Normal, {{0, 1}}, LabelSource::File, {}};
    CHECK(code_of([&] { r.validate(10); }) == ErrorCode::Consistency);
    r.klass = AnomalyClass::Extrinsic;
    r.validate(10);
    r.ranges = {{5, 6}};
    CHECK(code_of([&] { r.validate(10); }) == ErrorCode::Range);
    r.ranges = {{4, 3}, {2, 1}};
    CHECK(code_of([&] { r.validate(10); }) == ErrorCode::Consistency);
}

TEST_CASE("dataset directory round trip and manifest consistency") {
    datagen::PendulumConfig cfg;
    cfg.n_series = 6;
    const auto ds = datagen::gen_pendulum(cfg, 4);
    const auto dir = scratch("dataset");
    write_dataset(ds, dir);
    const auto back = read_dataset(dir);
    CHECK(back.series == ds.series);
    CHECK(back.labels == ds.labels);
    CHECK(back.manifest.n_series == 6);
    CHECK(back.manifest.n_env == 1);
    CHECK(back.manifest.n_sys == 2);

    auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    manifest["N"] = 2;
    write_text_file(dir / "manifest.json", manifest.dump(2));
    CHECK(code_of([&] { read_dataset(dir); }) == ErrorCode::Consistency);

    auto broken = ds;
    broken.manifest.n_series = 5;
    CHECK(code_of([&] { broken.validate(); }) == ErrorCode::Consistency);
}

TEST_CASE("generated datasets satisfy series invariants") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        datagen::SyntheticConfig sc;
        sc.n_series = 20;
        sc.length = 80;
        const auto syn = datagen::gen_synthetic(sc, seed);
        syn.validate();
        datagen::PendulumConfig pc;
        pc.n_series = 20;
        const auto pend = datagen::gen_pendulum(pc, seed);
        pend.validate();
        for (const auto* ds : {&syn, &pend})
            for (std::size_t i = 0; i < ds->series.size(); ++i) {
                const auto& s = ds->series[i];
                CHECK(s.length() >= 2);
                for (double v : s.env().data()) CHECK(std::isfinite(v));
                for (double v : s.sys().data()) CHECK(std::isfinite(v));
                ds->labels[i].validate(s.length());
            }
    }
}

TEST_CASE("channel scaler") {
    std::vector<MultivariateSeries> series{ramp(10), ramp(20)};
    const auto scaler = ChannelScaler::fit(series);
    const auto a = scaler.apply(series[0]), b = scaler.apply(series[1]);
    double sum = 0, sq = 0;
    for (const auto* s : {&a, &b})
        for (double v : s->env().row(0)) {
            sum += v;
            sq += v * v;
        }
    CHECK(std::abs(sum / 30) < 1e-12);
    CHECK(sq / 30 == doctest::Approx(1.0).epsilon(1e-12));
}
