#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "iad/datagen/generators.hpp"
#include "iad/detect/detect.hpp"
#include "iad/eval/eval.hpp"

using namespace iad;
using namespace iad::detect;

namespace {

datagen::SyntheticConfig noiseless(std::size_t n, std::size_t T) {
    datagen::SyntheticConfig c;
    c.n_series = n;
    c.length = T;
    for (double& s : c.noise_std) s = 0.0;
    return c;
}

double heldout_mse(const Regressor& reg, const std::vector<MultivariateSeries>& series) {
    double se = 0.0;
    std::size_t n = 0;
    for (const auto& s : series) {
        const auto pred = reg.predict(s.env());
        for (std::size_t i = 0; i < pred.data().size(); ++i) {
            const double d = pred.data()[i] - s.sys().data()[i];
            se += d * d;
            ++n;
        }
    }
    return se / static_cast<double>(n);
}

Matrix random_points(std::size_t n, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Matrix m(n, d);
    for (double& v : m.data()) v = g(rng);
    return m;
}

}  // namespace

TEST_CASE("regressor fits the noiseless synthetic map") {
    auto cfg = noiseless(24, 720);
    cfg.p_extrinsic = cfg.p_intrinsic = 0.0;
    const auto ds = datagen::gen_synthetic(cfg, 1);
    std::vector<MultivariateSeries> train(ds.series.begin(), ds.series.begin() + 20);
    std::vector<MultivariateSeries> test(ds.series.begin() + 20, ds.series.end());
    const auto reg = fit_regressor(train, 0);
    CHECK(heldout_mse(reg, test) < 1e-3);

    const auto res = residuals(reg, test[0]);
    CHECK(res.rows() == 2);
    CHECK(res.cols() == 720);
    // identical seed, identical fit
    CHECK(fit_regressor(train, 0).predict(test[0].env()) == reg.predict(test[0].env()));
}

TEST_CASE("regressor learns the identity") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::vector<MultivariateSeries> train;
    for (int i = 0; i < 4; ++i) {
        Matrix x(1, 200);
        for (double& v : x.data()) v = u(rng);
        train.emplace_back("id" + std::to_string(i), x, x);
    }
    const auto reg = fit_regressor(train, 3);
    Matrix probe(1, 50);
    for (std::size_t t = 0; t < 50; ++t) probe(0, t) = -1.9 + 0.076 * t;
    const auto pred = reg.predict(probe);
    double se = 0.0;
    for (std::size_t t = 0; t < 50; ++t) se += (pred(0, t) - probe(0, t)) * (pred(0, t) - probe(0, t));
    CHECK(se / 50 < 1e-3);
}

TEST_CASE("residuals track injected anomalies") {
    auto cfg = noiseless(40, 400);
    cfg.p_extrinsic = 0.3;
    cfg.p_intrinsic = 0.3;
    const auto ds = datagen::gen_synthetic(cfg, 5);
    const std::vector<std::size_t> all = [&] {
        std::vector<std::size_t> v(ds.series.size());
        std::iota(v.begin(), v.end(), 0);
        return v;
    }();
    // fitted on Normal-labelled series only
    const auto reg = fit_regressor(ds, all, 0);
    std::vector<double> scores;
    std::vector<std::size_t> intrinsic;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < ds.series.size(); ++i) {
        const auto res = residuals(reg, ds.series[i]);
        scores.push_back(res_thresh_score(res));
        intrinsic.push_back(ds.labels[i].klass == AnomalyClass::Intrinsic);
        if (ds.labels[i].klass != AnomalyClass::Intrinsic) continue;
        const auto clean = datagen::synthetic_series(cfg, 5, i, false).series;
        std::size_t row = 0;
        for (std::size_t r = 0; r < 2; ++r)
            if (ds.series[i].sys()(r, ds.labels[i].ranges[0].start) != clean.sys()(r, ds.labels[i].ranges[0].start)) row = r;
        const auto range = ds.labels[i].ranges[0];
        double in = 0.0;
        for (std::size_t t = range.start; t < range.end(); ++t) in += std::abs(res(row, t));
        CHECK(in / range.length == doctest::Approx(cfg.anomaly_amplitude).epsilon(0.05));
        ++checked;
    }
    CHECK(checked > 5);
    CHECK(eval::auroc(scores, intrinsic) == 1.0);
}

TEST_CASE("extrinsic anomalies leave residuals statistically unchanged") {
    datagen::SyntheticConfig cfg;
    cfg.n_series = 120;
    cfg.length = 500;
    cfg.p_extrinsic = 0.5;
    cfg.p_intrinsic = 0.0;
    const auto ds = datagen::gen_synthetic(cfg, 8);
    std::vector<std::size_t> all(ds.series.size());
    std::iota(all.begin(), all.end(), 0);
    const auto reg = fit_regressor(ds, all, 0);
    std::vector<double> normal, extrinsic;
    for (std::size_t i = 0; i < ds.series.size(); ++i) {
        const auto res = residuals(reg, ds.series[i]);
        double mean_abs = 0.0;
        for (double v : res.data()) mean_abs += std::abs(v);
        mean_abs /= static_cast<double>(res.data().size());
        (ds.labels[i].klass == AnomalyClass::Normal ? normal : extrinsic).push_back(mean_abs);
    }
    auto stats = [](const std::vector<double>& v) {
        const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        return std::pair{m, var / (v.size() - 1)};
    };
    const auto [mn, vn] = stats(normal);
    const auto [me, ve] = stats(extrinsic);
    const double welch_t = (me - mn) / std::sqrt(vn / normal.size() + ve / extrinsic.size());
    CHECK(std::abs(welch_t) < 3.0);
}

TEST_CASE("res_thresh score and aggregation") {
    CHECK(res_thresh_score(Matrix(2, 5)) == 0.0);
    Matrix spike(2, 5);
    spike(1, 3) = -3.5;
    CHECK(res_thresh_score(spike) == 3.5);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> steps(20);
        for (double& s : steps) s = u(rng);
        const double base = max_aggregate(steps);
        auto shuffled = steps;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(max_aggregate(shuffled) == base);
        steps[trial % 20] += 0.1;
        CHECK(max_aggregate(steps) >= base);
    }
    CHECK_THROWS_AS(max_aggregate(std::vector<double>{}), Error);

    Matrix ch(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
    const auto rows = time_rows(ch);
    CHECK(rows.rows() == 3);
    CHECK(rows(2, 0) == 3.0);
    CHECK(rows(2, 1) == 6.0);
}

TEST_CASE("isolation forest") {
    CHECK(average_path_length(1) == 0.0);
    CHECK(average_path_length(2) == 1.0);
    // 2 H(255) - 2 * 255 / 256
    double h = 0.0;
    for (int i = 1; i <= 255; ++i) h += 1.0 / i;
    CHECK(average_path_length(256) == doctest::Approx(2 * h - 2.0 * 255 / 256).epsilon(1e-12));

    std::mt19937_64 rng(2);
    Matrix pts = random_points(501, 3, rng);
    for (std::size_t d = 0; d < 3; ++d) pts(500, d) = 12.0;
    const auto forest = IsolationForest::fit(pts, {100, 256, 7});
    const auto scores = forest.score(pts);
    CHECK(std::max_element(scores.begin(), scores.end()) - scores.begin() == 500);
    for (double s : scores) CHECK((s > 0.0 && s < 1.0));

    Matrix twice(1002, 3);
    for (std::size_t r = 0; r < 501; ++r)
        for (std::size_t d = 0; d < 3; ++d) twice(r, d) = twice(r + 501, d) = pts(r, d);
    const auto dup = IsolationForest::fit(twice, {100, 256, 7}).score(twice);
    for (std::size_t r = 0; r < 501; ++r) CHECK(dup[r] == dup[r + 501]);
    CHECK(IsolationForest::fit(pts, {100, 256, 7}).score(pts) == scores);
    CHECK_THROWS_AS(IsolationForest::fit(Matrix(1, 3), {}), Error);
}

TEST_CASE("local outlier factor") {
    Matrix grid(121, 2);
    for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 11; ++j) {
            grid(i * 11 + j, 0) = static_cast<double>(i);
            grid(i * 11 + j, 1) = static_cast<double>(j);
        }
    const auto scores = lof_scores(grid, 8);
    CHECK(scores[5 * 11 + 5] == doctest::Approx(1.0).epsilon(0.2));

    Matrix with_outlier(122, 2);
    std::copy(grid.data().begin(), grid.data().end(), with_outlier.data().begin());
    with_outlier(121, 0) = 30.0;
    with_outlier(121, 1) = 30.0;
    const auto lof = lof_scores(with_outlier, 8);
    CHECK(lof[121] > 1.5);
    CHECK(std::max_element(lof.begin(), lof.end()) - lof.begin() == 121);

    // novelty scoring against the fitted reference agrees with in-sample scores
    const auto model = LocalOutlierFactor::fit(grid, 8);
    CHECK(model.training_scores() == scores);
    const std::vector<double> far{30.0, 30.0};
    CHECK(model.score(far) > 1.5);

    CHECK_THROWS_AS(lof_scores(grid, 121), Error);
    CHECK_THROWS_AS(lof_scores(grid, 200), Error);
}

TEST_CASE("nearest neighbours and knn agree with an exhaustive scan") {
    std::mt19937_64 rng(9);
    const Matrix train = random_points(300, 6, rng);
    std::vector<std::size_t> labels(300);
    for (auto& l : labels) l = rng() % 3;
    const Matrix queries = random_points(200, 6, rng);
    for (std::size_t q = 0; q < queries.rows(); ++q) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t i = 0; i < train.rows(); ++i) {
            double d = 0.0;
            for (std::size_t k = 0; k < 6; ++k) d += (train(i, k) - queries(q, k)) * (train(i, k) - queries(q, k));
            all.emplace_back(std::sqrt(d), i);
        }
        std::sort(all.begin(), all.end());
        const auto nn = nearest_neighbors(train, queries.row(q), 5);
        REQUIRE(nn.size() == 5);
        std::size_t votes[3] = {0, 0, 0};
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(nn[j].index == all[j].second);
            CHECK(nn[j].distance == doctest::Approx(all[j].first).epsilon(1e-12));
            ++votes[labels[all[j].second]];
        }
        const std::size_t expected = std::max_element(votes, votes + 3) - votes;
        const auto r = knn_classify(train, labels, queries.row(q), 5, 1);
        CHECK(r.predicted == expected);
        CHECK(r.score == doctest::Approx(votes[1] / 5.0));
        CHECK(knn_classify(train, labels, queries.row(q), 1).predicted == labels[all[0].second]);
    }

    Matrix copies(6, 2);
    for (std::size_t r = 0; r < 5; ++r) copies(r, 0) = 1.0;
    copies(5, 0) = 9.0;
    const std::vector<std::size_t> copy_labels{1, 1, 1, 1, 1, 0};
    const std::vector<double> query{1.0, 0.0};
    const auto r = knn_classify(copies, copy_labels, query, 5, 1);
    CHECK(r.predicted == 1);
    CHECK(r.score == 1.0);
    CHECK(nearest_neighbors(copies, query, 3, 0)[0].index == 1);
    CHECK_THROWS_AS(knn_classify(copies, copy_labels, query, 7), Error);

    // ties go to the smallest class
    Matrix tie(2, 1, std::vector<double>{-1.0, 1.0});
    const std::vector<std::size_t> tie_labels{2, 0};
    CHECK(knn_classify(tie, tie_labels, std::vector<double>{0.0}, 2).predicted == 0);
}
