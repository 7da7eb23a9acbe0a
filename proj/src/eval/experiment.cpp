#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "iad/core/io.hpp"
#include "iad/datagen/generators.hpp"
#include "iad/eval/eval.hpp"

namespace iad::eval {

namespace {

struct MethodInfo {
    Method method;
    const char* name;
};

constexpr MethodInfo kMethods[] = {
    {Method::EnvInv, "envinv"},         {Method::Basic, "basic"},   {Method::ResEmb, "residual"},
    {Method::ResThresh, "resthresh"},   {Method::IForest, "iforest"}, {Method::Lof, "lof"},
    {Method::IForestRes, "iforest-res"}, {Method::LofRes, "lof-res"},
};

std::vector<MultivariateSeries> pick(const Dataset& ds, std::span<const std::size_t> idx) {
    std::vector<MultivariateSeries> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(ds.series[i]);
    return out;
}

std::vector<std::size_t> pick_labels(const std::vector<std::size_t>& labels, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out;
    for (std::size_t i : idx) out.push_back(labels[i]);
    return out;
}

Matrix pick_rows(const Matrix& m, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) std::copy(m.row(idx[r]).begin(), m.row(idx[r]).end(), out.row(r).begin());
    return out;
}

Matrix concat_rows(const std::vector<Matrix>& parts) {
    std::size_t rows = 0;
    for (const auto& p : parts) rows += p.rows();
    Matrix out(rows, parts.front().cols());
    std::size_t r = 0;
    for (const auto& p : parts)
        for (std::size_t i = 0; i < p.rows(); ++i, ++r) std::copy(p.row(i).begin(), p.row(i).end(), out.row(r).begin());
    return out;
}

using Metrics = std::vector<std::pair<std::string, double>>;

Metrics run_embedding(const Dataset& ds, Method method, std::uint64_t seed, const Split& split, const ExperimentOptions& opt) {
    repr::TrainConfig cfg = opt.train;
    cfg.seed = seed;
    cfg.mode = method == Method::EnvInv ? repr::TrainMode::EnvInv
               : method == Method::Basic ? repr::TrainMode::Basic
                                         : repr::TrainMode::ResidualInput;
    const repr::Model model = repr::train(ds, split.train, cfg);
    const Matrix emb = model.embed_dataset(ds);
    const auto two = map_labels(ds.labels, LabelScheme::TwoClass);
    const auto three = map_labels(ds.labels, LabelScheme::ThreeClass);
    const Matrix train_emb = pick_rows(emb, split.train);
    const auto train2 = pick_labels(two, split.train), train3 = pick_labels(three, split.train);
    std::vector<double> scores;
    std::vector<std::size_t> pred2, pred3;
    for (std::size_t i : split.test) {
        const auto r2 = detect::knn_classify(train_emb, train2, emb.row(i), opt.knn_k, 1);
        const auto r3 = detect::knn_classify(train_emb, train3, emb.row(i), opt.knn_k, 2);
        scores.push_back(r2.score);
        pred2.push_back(r2.predicted);
        pred3.push_back(r3.predicted);
    }
    const auto test2 = pick_labels(two, split.test), test3 = pick_labels(three, split.test);
    const auto gap = distance_gap(train_emb, train2, pick_rows(emb, split.test), test2);
    return {{"auroc", auroc(scores, test2)},      {"f1_2", weighted_f1(pred2, test2, 2)},
            {"f1_3", weighted_f1(pred3, test3, 3)}, {"gap", gap.gap},
            {"gap_corr", gap.mean_corr},            {"gap_incorr", gap.mean_incorr}};
}

Metrics run_step_detector(const Dataset& ds, Method method, std::uint64_t seed, const Split& split, const ExperimentOptions& opt) {
    const auto scores = detector_scores(ds, method, split.train, split.test, seed, opt);
    const auto two = map_labels(ds.labels, LabelScheme::TwoClass);
    return {{"auroc", auroc(scores, pick_labels(two, split.test))}};
}

std::string params_label(const nlohmann::json& params) {
    std::string out;
    for (const auto& [k, v] : params.items()) {
        if (!out.empty()) out += ';';
        out += k + "=" + (v.is_number_float() ? format_double(v.get<double>()) : v.dump());
    }
    return out;
}

std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

}  // namespace

std::vector<double> detector_scores(const Dataset& ds, Method method, std::span<const std::size_t> train_index,
                                    std::span<const std::size_t> score_index, std::uint64_t seed, const ExperimentOptions& opt) {
    require(!is_embedding_method(method), ErrorCode::Argument, std::string("detector_scores: ") + method_name(method) + " is an embedding method");
    require(!train_index.empty(), ErrorCode::Argument, "detector_scores: no training series");
    for (std::size_t i : train_index) require(i < ds.series.size(), ErrorCode::Range, "detector_scores: training index out of range");
    for (std::size_t i : score_index) require(i < ds.series.size(), ErrorCode::Range, "detector_scores: score index out of range");
    const bool on_residuals = method == Method::IForestRes || method == Method::LofRes || method == Method::ResThresh;
    std::optional<detect::Regressor> reg;
    if (on_residuals) reg = detect::fit_regressor(ds, train_index, datagen::derive_seed(seed, 4), opt.regressor);
    const auto train = pick(ds, train_index);
    const ChannelScaler scaler = ChannelScaler::fit(train);
    auto features = [&](const MultivariateSeries& s) {
        return on_residuals ? detect::time_rows(detect::residuals(*reg, s)) : detect::time_rows(scaler.apply(s).stacked());
    };

    std::vector<double> scores;
    if (method == Method::ResThresh) {
        for (std::size_t i : score_index) scores.push_back(detect::res_thresh_score(detect::residuals(*reg, ds.series[i])));
        return scores;
    }
    std::vector<Matrix> parts;
    for (const auto& s : train) parts.push_back(features(s));
    const Matrix points = concat_rows(parts);
    std::optional<detect::IsolationForest> forest;
    std::optional<detect::LocalOutlierFactor> lof;
    if (method == Method::IForest || method == Method::IForestRes) {
        auto fc = opt.forest;
        fc.seed = datagen::derive_seed(seed, 5);
        forest = detect::IsolationForest::fit(points, fc);
    } else {
        // novelty-mode LOF against a random subsample of training steps
        std::mt19937_64 rng(datagen::derive_seed(seed, 6));
        std::vector<std::size_t> idx(points.rows());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min(idx.size(), opt.lof_reference));
        std::sort(idx.begin(), idx.end());
        lof = detect::LocalOutlierFactor::fit(pick_rows(points, idx), opt.lof_k);
    }
    for (std::size_t i : score_index) {
        const Matrix f = features(ds.series[i]);
        const auto steps = forest ? forest->score(f) : lof->score(f);
        scores.push_back(detect::max_aggregate(steps));
    }
    return scores;
}

const char* method_name(Method m) noexcept {
    for (const auto& info : kMethods)
        if (info.method == m) return info.name;
    return "unknown";
}

Method parse_method(const std::string& name) {
    for (const auto& info : kMethods)
        if (name == info.name) return info.method;
    fail(ErrorCode::Argument, "unknown method '" + name + "'");
}

const std::vector<std::string>& method_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& info : kMethods) v.emplace_back(info.name);
        return v;
    }();
    return names;
}

bool is_embedding_method(Method m) noexcept { return m == Method::EnvInv || m == Method::Basic || m == Method::ResEmb; }

const MetricSummary& ExperimentReport::metric(const std::string& name) const {
    for (const auto& m : metrics)
        if (m.metric == name) return m;
    fail(ErrorCode::NotFound, "report " + dataset + "/" + method + " has no metric '" + name + "'");
}

nlohmann::json ExperimentReport::to_json() const {
    nlohmann::json ms = nlohmann::json::object();
    for (const auto& m : metrics) ms[m.metric] = {{"values", m.values}, {"mean", m.mean}, {"std", m.std}};
    return {{"dataset", dataset}, {"method", method}, {"params", params}, {"seeds", seeds}, {"metrics", ms}};
}

ExperimentReport ExperimentReport::from_json(const nlohmann::json& j) {
    ExperimentReport r;
    try {
        r.dataset = j.at("dataset").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.params = j.value("params", nlohmann::json::object());
        r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        for (const auto& [name, m] : j.at("metrics").items())
            r.metrics.push_back({name, m.at("values").get<std::vector<double>>(), m.at("mean").get<double>(), m.at("std").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Parse, std::string("report: ") + e.what());
    }
    return r;
}

std::vector<std::pair<std::string, double>> run_seed(const Dataset& dataset, Method method, std::uint64_t seed,
                                                     const ExperimentOptions& options) {
    require(dataset.has_labels(), ErrorCode::State, "eval: dataset '" + dataset.manifest.name + "' has no labels");
    const Split split = stratified_split(dataset.labels, seed, options.train_frac);
    try {
        return is_embedding_method(method) ? run_embedding(dataset, method, seed, split, options)
                                           : run_step_detector(dataset, method, seed, split, options);
    } catch (const Error& e) {
        fail(e.code(), std::string(method_name(method)) + " seed " + std::to_string(seed) + ": " + e.what());
    }
}

ExperimentReport run_experiment(const Dataset& dataset, Method method, const std::vector<std::uint64_t>& seeds,
                                const ExperimentOptions& options, const Progress& progress) {
    require(!seeds.empty(), ErrorCode::Argument, "run_experiment: no seeds");
    ExperimentReport report;
    report.dataset = dataset.manifest.name;
    report.method = method_name(method);
    report.seeds = seeds;

    std::vector<Metrics> results(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    std::mutex progress_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t k = next++; k < seeds.size(); k = next++) {
            try {
                results[k] = run_seed(dataset, method, seeds[k], options);
                if (progress) {
                    std::lock_guard lock(progress_mutex);
                    progress(report.dataset + " " + report.method + " seed " + std::to_string(seeds[k]) +
                             ": auroc=" + format_double(results[k].front().second));
                }
            } catch (...) {
                errors[k] = std::current_exception();
            }
        }
    };
    const std::size_t jobs = std::clamp<std::size_t>(options.jobs, 1, seeds.size());
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    for (std::size_t m = 0; m < results.front().size(); ++m) {
        std::vector<double> values;
        for (const auto& r : results) values.push_back(r[m].second);
        report.metrics.push_back(summarize(results.front()[m].first, std::move(values)));
    }
    return report;
}

ExperimentOptions ExperimentOptions::from_json(const nlohmann::json& j) {
    ExperimentOptions o;
    if (j.is_null()) return o;
    if (!j.is_object()) fail(ErrorCode::Config, "experiment options must be a JSON object");
    const nlohmann::json train_keys = repr::TrainConfig{}.to_json();
    nlohmann::json train = nlohmann::json::object();
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "knn_k") o.knn_k = v.get<std::size_t>();
            else if (k == "lof_k") o.lof_k = v.get<std::size_t>();
            else if (k == "lof_reference") o.lof_reference = v.get<std::size_t>();
            else if (k == "trees") o.forest.trees = v.get<std::size_t>();
            else if (k == "subsample") o.forest.subsample = v.get<std::size_t>();
            else if (k == "regressor_hidden") o.regressor.hidden = v.get<std::size_t>();
            else if (k == "regressor_epochs") o.regressor.epochs = v.get<std::size_t>();
            else if (k == "train_frac") o.train_frac = v.get<double>();
            else if (k == "jobs") o.jobs = v.get<std::size_t>();
            else if (train_keys.contains(k)) train[k] = v;
            else fail(ErrorCode::Config, "unknown experiment option '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Config, std::string("experiment options: ") + e.what());
    }
    o.train = repr::TrainConfig::from_json(train);
    require(o.knn_k >= 1 && o.lof_k >= 1 && o.lof_reference >= 2 && o.forest.trees >= 1 && o.forest.subsample >= 2,
            ErrorCode::Config, "experiment options: counts out of range");
    require(o.train_frac > 0.0 && o.train_frac < 1.0, ErrorCode::Config, "experiment options: train_frac must be in (0, 1)");
    return o;
}

nlohmann::json ExperimentOptions::to_json() const {
    nlohmann::json j = train.to_json();
    j.erase("seed");
    j["knn_k"] = knn_k;
    j["lof_k"] = lof_k;
    j["lof_reference"] = lof_reference;
    j["trees"] = forest.trees;
    j["subsample"] = forest.subsample;
    j["regressor_hidden"] = regressor.hidden;
    j["regressor_epochs"] = regressor.epochs;
    j["train_frac"] = train_frac;
    return j;
}

nlohmann::json reports_json(const std::vector<ExperimentReport>& reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : reports) arr.push_back(r.to_json());
    return {{"reports", arr}};
}

std::vector<ExperimentReport> reports_from_json(const nlohmann::json& j) {
    std::vector<ExperimentReport> out;
    if (!j.is_object() || !j.contains("reports") || !j.at("reports").is_array()) fail(ErrorCode::Parse, "report file has no 'reports' array");
    for (const auto& r : j.at("reports")) out.push_back(ExperimentReport::from_json(r));
    return out;
}

std::string reports_csv(const std::vector<ExperimentReport>& reports) {
    std::ostringstream out;
    out << "dataset,method,params,metric,seed,value\n";
    for (const auto& r : reports) {
        const std::string head = r.dataset + "," + r.method + "," + params_label(r.params) + ",";
        for (const auto& m : r.metrics) {
            for (std::size_t k = 0; k < m.values.size(); ++k) out << head << m.metric << ',' << r.seeds[k] << ',' << format_double(m.values[k]) << '\n';
            out << head << m.metric << ",mean," << format_double(m.mean) << '\n';
            out << head << m.metric << ",std," << format_double(m.std) << '\n';
        }
    }
    return out.str();
}

std::string render_table(const std::vector<ExperimentReport>& reports, const std::string& metric) {
    std::vector<std::string> rows, cols;
    auto row_label = [](const ExperimentReport& r) {
        const std::string p = params_label(r.params);
        return p.empty() ? r.method : r.method + " (" + p + ")";
    };
    for (const auto& r : reports) {
        if (std::find(rows.begin(), rows.end(), row_label(r)) == rows.end()) rows.push_back(row_label(r));
        if (std::find(cols.begin(), cols.end(), r.dataset) == cols.end()) cols.push_back(r.dataset);
    }
    std::ostringstream out;
    out << "method";
    for (const auto& c : cols) out << ',' << c;
    out << '\n';
    for (const auto& row : rows) {
        out << row;
        for (const auto& c : cols) {
            out << ',';
            for (const auto& r : reports)
                if (row_label(r) == row && r.dataset == c) {
                    for (const auto& m : r.metrics)
                        if (m.metric == metric) out << fixed3(m.mean) << " (± " << fixed3(m.std) << ')';
                    break;
                }
        }
        out << '\n';
    }
    return out.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    auto parse_one = [&](std::string_view s) {
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || s.empty()) fail(ErrorCode::Argument, "invalid seed list '" + text + "'");
        return v;
    };
    std::vector<std::uint64_t> out;
    if (auto dots = text.find(".."); dots != std::string::npos) {
        const auto lo = parse_one(std::string_view(text).substr(0, dots));
        const auto hi = parse_one(std::string_view(text).substr(dots + 2));
        require(lo <= hi && hi - lo < 100000, ErrorCode::Argument, "invalid seed range '" + text + "'");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
        return out;
    }
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(parse_one(tok));
    require(!out.empty(), ErrorCode::Argument, "empty seed list");
    return out;
}

std::vector<double> parse_real_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        double v = 0.0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc() || p != tok.data() + tok.size() || tok.empty()) fail(ErrorCode::Argument, "invalid number '" + tok + "' in list");
        out.push_back(v);
    }
    require(!out.empty(), ErrorCode::Argument, "empty list");
    return out;
}

}  // namespace iad::eval
