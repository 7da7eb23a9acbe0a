#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "iad/core/series.hpp"
#include "iad/detect/detect.hpp"
#include "iad/repr/repr.hpp"
#include "json.hpp"

namespace iad::eval {

/// Mann-Whitney statistic P(s+ > s-) + P(s+ = s-) / 2 via midranks. Labels are 0/1.
double auroc(std::span<const double> scores, std::span<const std::size_t> labels);

/// Per-class F1 weighted by true-class support.
double weighted_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> truth, std::size_t n_classes);

enum class LabelScheme { TwoClass, ThreeClass };

std::size_t map_label(AnomalyClass klass, LabelScheme scheme) noexcept;
std::vector<std::size_t> map_labels(const std::vector<LabelRecord>& records, LabelScheme scheme);

struct DistanceGap {
    double mean_corr = 0.0;
    double mean_incorr = 0.0;
    double gap = 0.0;
};

/// Centroids of classes 0 and 1 from the reference rows; distances of the query rows.
DistanceGap distance_gap(const Matrix& reference, std::span<const std::size_t> reference_labels, const Matrix& queries,
                         std::span<const std::size_t> query_labels);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Stratified by the three-class label; both parts sorted ascending.
Split stratified_split(const std::vector<LabelRecord>& labels, std::uint64_t seed, double train_frac = 0.7);

enum class Method { EnvInv, Basic, ResEmb, ResThresh, IForest, Lof, IForestRes, LofRes };

const char* method_name(Method m) noexcept;
/// Unknown names are an Argument error naming the method.
Method parse_method(const std::string& name);
const std::vector<std::string>& method_names();
bool is_embedding_method(Method m) noexcept;

struct ExperimentOptions {
    repr::TrainConfig train;  // seed and mode are set per run
    detect::RegressorConfig regressor;
    detect::IsolationForestConfig forest;
    std::size_t lof_k = 20;
    std::size_t lof_reference = 2000;
    std::size_t knn_k = 5;
    double train_frac = 0.7;
    std::size_t jobs = 1;  // seeds evaluated concurrently

    /// Flat object: training fields plus knn_k, lof_k, lof_reference, trees, subsample,
    /// regressor_hidden, regressor_epochs, train_frac and jobs. Unknown keys are a Config error.
    static ExperimentOptions from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct MetricSummary {
    std::string metric;
    std::vector<double> values;  // one per seed
    double mean = 0.0;
    double std = 0.0;  // population
};

struct ExperimentReport {
    std::string dataset;
    std::string method;
    nlohmann::json params = nlohmann::json::object();
    std::vector<std::uint64_t> seeds;
    std::vector<MetricSummary> metrics;

    const MetricSummary& metric(const std::string& name) const;
    nlohmann::json to_json() const;
    static ExperimentReport from_json(const nlohmann::json& j);
};

/// Mean and population std of the values.
MetricSummary summarize(std::string metric, std::vector<double> values);

/// Metric values of one seed for one method.
std::vector<std::pair<std::string, double>> run_seed(const Dataset& dataset, Method method, std::uint64_t seed,
                                                     const ExperimentOptions& options);

/// Step-detector or ResThresh scores for `score_index`, fitted on `train_index`.
std::vector<double> detector_scores(const Dataset& dataset, Method method, std::span<const std::size_t> train_index,
                                    std::span<const std::size_t> score_index, std::uint64_t seed, const ExperimentOptions& options);

using Progress = std::function<void(const std::string&)>;

ExperimentReport run_experiment(const Dataset& dataset, Method method, const std::vector<std::uint64_t>& seeds,
                                const ExperimentOptions& options, const Progress& progress = {});

nlohmann::json reports_json(const std::vector<ExperimentReport>& reports);
std::vector<ExperimentReport> reports_from_json(const nlohmann::json& j);
/// dataset,method,params,metric,seed,value rows followed by mean/std rows.
std::string reports_csv(const std::vector<ExperimentReport>& reports);
/// Methods as rows, datasets as columns, cells "mean (± std)" of `metric`.
std::string render_table(const std::vector<ExperimentReport>& reports, const std::string& metric = "auroc");

/// Parses "0..4" or "0,1,5".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
/// Parses "0,1e-5,1e-3".
std::vector<double> parse_real_list(const std::string& text);

}  // namespace iad::eval
