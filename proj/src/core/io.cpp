#include "iad/core/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace iad {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(std::move(cur));
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

std::string where(const fs::path& path, std::size_t line) {
    return path.string() + ":" + std::to_string(line);
}

double parse_finite(const std::string& token, const fs::path& path, std::size_t line) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    while (first < last && *first == ' ') ++first;
    if (first < last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        fail(ErrorCode::Parse, where(path, line) + ": cannot parse number '" + token + "'");
    if (!std::isfinite(v)) fail(ErrorCode::Parse, where(path, line) + ": non-finite value '" + token + "'");
    return v;
}

std::size_t parse_index(const std::string& token, const std::string& context) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
        fail(ErrorCode::Parse, context + ": bad integer '" + token + "'");
    return v;
}

}  // namespace

std::string format_double(double value) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
    if (ec != std::errc()) fail(ErrorCode::Internal, "format_double overflow");
    return std::string(buf, ptr);
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) fail(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

MultivariateSeries read_series_csv(const fs::path& path, std::string id, std::optional<std::size_t> expected_env,
                                   std::optional<std::size_t> expected_sys) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::Parse, where(path, 1) + ": missing header");
    const auto header = split(line, ',');
    if (header.empty() || header[0] != "x") fail(ErrorCode::Parse, where(path, 1) + ": header must start with 'x'");
    std::size_t n_env = 0, n_sys = 0;
    for (std::size_t i = 1; i < header.size(); ++i) {
        const std::string expect_env = "env_" + std::to_string(n_env);
        const std::string expect_sys = "sys_" + std::to_string(n_sys);
        if (n_sys == 0 && header[i] == expect_env) {
            ++n_env;
        } else if (header[i] == expect_sys) {
            ++n_sys;
        } else {
            fail(ErrorCode::Parse, where(path, 1) + ": unexpected column '" + header[i] + "'");
        }
    }
    if (n_env == 0 || n_sys == 0) fail(ErrorCode::Parse, where(path, 1) + ": need env_* and sys_* columns");
    if ((expected_env && *expected_env != n_env) || (expected_sys && *expected_sys != n_sys))
        fail(ErrorCode::Consistency, path.string() + ": header has N=" + std::to_string(n_env) +
                                         ", M=" + std::to_string(n_sys) + " but the manifest declares N=" +
                                         std::to_string(expected_env.value_or(n_env)) +
                                         ", M=" + std::to_string(expected_sys.value_or(n_sys)));
    std::vector<std::vector<double>> env(n_env), sys(n_sys);
    std::size_t lineno = 1;
    std::size_t t = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line, ',');
        if (cells.size() != header.size())
            fail(ErrorCode::Parse, where(path, lineno) + ": expected " + std::to_string(header.size()) +
                                       " fields, got " + std::to_string(cells.size()));
        if (parse_index(cells[0], where(path, lineno)) != t)
            fail(ErrorCode::Parse, where(path, lineno) + ": time index must be " + std::to_string(t));
        for (std::size_t i = 0; i < n_env; ++i) env[i].push_back(parse_finite(cells[1 + i], path, lineno));
        for (std::size_t i = 0; i < n_sys; ++i) sys[i].push_back(parse_finite(cells[1 + n_env + i], path, lineno));
        ++t;
    }
    auto to_matrix = [t](std::vector<std::vector<double>>& rows) {
        std::vector<double> data;
        data.reserve(rows.size() * t);
        for (auto& r : rows) data.insert(data.end(), r.begin(), r.end());
        return Matrix(rows.size(), t, std::move(data));
    };
    return MultivariateSeries(std::move(id), to_matrix(env), to_matrix(sys));
}

void write_series_csv(const MultivariateSeries& series, const fs::path& path) {
    std::string out = "x";
    for (std::size_t i = 0; i < series.n_env(); ++i) out += ",env_" + std::to_string(i);
    for (std::size_t i = 0; i < series.n_sys(); ++i) out += ",sys_" + std::to_string(i);
    out += '\n';
    for (std::size_t t = 0; t < series.length(); ++t) {
        out += std::to_string(t);
        for (std::size_t i = 0; i < series.n_env(); ++i) (out += ',') += format_double(series.env()(i, t));
        for (std::size_t i = 0; i < series.n_sys(); ++i) (out += ',') += format_double(series.sys()(i, t));
        out += '\n';
    }
    write_text_file(path, out);
}

std::string format_ranges(const std::vector<SnippetRange>& ranges) {
    std::string out;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ranges[i].start) + ":" + std::to_string(ranges[i].length);
    }
    return out;
}

std::vector<SnippetRange> parse_ranges(const std::string& text) {
    std::vector<SnippetRange> out;
    if (text.empty()) return out;
    for (const auto& part : split(text, ';')) {
        const auto colon = part.find(':');
        if (colon == std::string::npos) fail(ErrorCode::Parse, "bad range '" + part + "'");
        out.push_back({parse_index(part.substr(0, colon), "range"), parse_index(part.substr(colon + 1), "range")});
    }
    return out;
}

std::vector<LabelRecord> read_labels_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || split(line, ',') != std::vector<std::string>{"series_id", "class", "ranges", "source", "timestamp"})
        fail(ErrorCode::Parse, where(path, 1) + ": expected header series_id,class,ranges,source,timestamp");
    std::vector<LabelRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto cells = split(line, ',');
        if (cells.size() != 5) fail(ErrorCode::Parse, where(path, lineno) + ": expected 5 fields");
        LabelRecord rec;
        rec.series_id = cells[0];
        const auto k = parse_index(cells[1], where(path, lineno));
        if (k > 2) fail(ErrorCode::Parse, where(path, lineno) + ": class must be 0, 1 or 2");
        rec.klass = static_cast<AnomalyClass>(k);
        rec.ranges = parse_ranges(cells[2]);
        rec.source = parse_label_source(cells[3]);
        rec.timestamp = parse_utc(cells[4]);
        out.push_back(std::move(rec));
    }
    return out;
}

std::string labels_csv_text(const std::vector<LabelRecord>& labels) {
    std::string out = "series_id,class,ranges,source,timestamp\n";
    for (const auto& l : labels) {
        out += l.series_id + "," + std::to_string(static_cast<int>(l.klass)) + "," + format_ranges(l.ranges) + "," +
               label_source_name(l.source) + "," + format_utc(l.timestamp) + "\n";
    }
    return out;
}

void write_labels_csv(const std::vector<LabelRecord>& labels, const fs::path& path) {
    write_text_file(path, labels_csv_text(labels));
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
    return nlohmann::json{{"name", m.name},   {"n_series", m.n_series},
                          {"T", m.length},    {"N", m.n_env},
                          {"M", m.n_sys},     {"seed", m.seed},
                          {"generator_config", m.generator_config}, {"series", m.series_paths}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
    try {
        DatasetManifest m;
        m.name = j.at("name").get<std::string>();
        m.n_series = j.at("n_series").get<std::size_t>();
        m.length = j.at("T").get<std::size_t>();
        m.n_env = j.at("N").get<std::size_t>();
        m.n_sys = j.at("M").get<std::size_t>();
        m.seed = j.value("seed", std::int64_t{0});
        m.generator_config = j.value("generator_config", nlohmann::json::object());
        m.series_paths = j.at("series").get<std::vector<std::string>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::Parse, std::string("manifest: ") + e.what());
    }
}

Dataset read_dataset(const fs::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::Parse, manifest_path.string() + ": " + e.what());
    }
    Dataset ds;
    ds.manifest = manifest_from_json(j);
    for (const auto& rel : ds.manifest.series_paths) {
        const auto id = fs::path(rel).stem().string();
        ds.series.push_back(read_series_csv(dir / rel, id, ds.manifest.n_env, ds.manifest.n_sys));
    }
    if (fs::exists(dir / "labels.csv")) {
        auto labels = read_labels_csv(dir / "labels.csv");
        // align with manifest order; unlabeled series are an error
        std::vector<LabelRecord> aligned;
        aligned.reserve(ds.series.size());
        for (const auto& s : ds.series) {
            auto it = std::find_if(labels.begin(), labels.end(), [&](const LabelRecord& l) { return l.series_id == s.id(); });
            if (it == labels.end()) fail(ErrorCode::Consistency, "labels.csv has no entry for series '" + s.id() + "'");
            aligned.push_back(*it);
        }
        ds.labels = std::move(aligned);
    }
    ds.validate();
    return ds;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
    dataset.validate();
    fs::create_directories(dir / "series");
    DatasetManifest m = dataset.manifest;
    m.series_paths.clear();
    for (const auto& s : dataset.series) {
        const std::string rel = "series/" + s.id() + ".csv";
        write_series_csv(s, dir / rel);
        m.series_paths.push_back(rel);
    }
    write_text_file(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
    if (dataset.has_labels()) write_labels_csv(dataset.labels, dir / "labels.csv");
}

}  // namespace iad
