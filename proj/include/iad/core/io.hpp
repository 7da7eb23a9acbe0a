#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iad/core/series.hpp"

namespace iad {

namespace fs = std::filesystem;

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

/// Series CSV: header `x,env_0..env_{N-1},sys_0..sys_{M-1}`, one row per time step.
/// When `expected` dims are given they must match the header (Consistency error).
MultivariateSeries read_series_csv(const fs::path& path, std::string id,
                                   std::optional<std::size_t> expected_env = std::nullopt,
                                   std::optional<std::size_t> expected_sys = std::nullopt);
void write_series_csv(const MultivariateSeries& series, const fs::path& path);

/// Labels CSV: `series_id,class,ranges,source,timestamp`, ranges as `start:len;...`.
std::vector<LabelRecord> read_labels_csv(const fs::path& path);
std::string labels_csv_text(const std::vector<LabelRecord>& labels);
void write_labels_csv(const std::vector<LabelRecord>& labels, const fs::path& path);

std::string format_ranges(const std::vector<SnippetRange>& ranges);
std::vector<SnippetRange> parse_ranges(const std::string& text);

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

/// Directory layout: manifest.json, series/<id>.csv, labels.csv (optional).
Dataset read_dataset(const fs::path& dir);
void write_dataset(const Dataset& dataset, const fs::path& dir);

/// Writes text to a file, creating parent directories.
void write_text_file(const fs::path& path, const std::string& text);
std::string read_text_file(const fs::path& path);

}  // namespace iad
