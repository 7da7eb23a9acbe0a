#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "iad/core/io.hpp"
#include "iad/datagen/generators.hpp"

namespace iad::datagen {

const std::vector<std::string> kTurbineEnvColumns = {
    "Amb_WindSpeed_Avg", "Amb_WindSpeed_Est_Avg", "Amb_WindDir_Relative_Avg", "Amb_WindDir_Abs_Avg", "Amb_Temp_Avg",
};
const std::vector<std::string> kTurbineSysColumns = {
    "Gen_RPM_Avg", "Prod_LatestAvg_TotActPwr", "Gear_Bear_Temp_Avg", "Hyd_Oil_Temp_Avg",
};

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
    std::vector<std::string> out(1);
    for (char c : line) {
        if (c == sep) {
            out.emplace_back();
        } else if (c != '\r' && c != '"') {
            out.back().push_back(c);
        }
    }
    return out;
}

bool parse_value(const std::string& token, double& v) {
    if (token.empty()) return false;
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    return ec == std::errc() && ptr == token.data() + token.size() && std::isfinite(v);
}

struct Row {
    std::string timestamp;
    std::vector<double> values;  // env columns then sys columns
};

}  // namespace

Dataset load_turbine(const std::filesystem::path& dir, std::size_t window) {
    if (!std::filesystem::is_directory(dir)) fail(ErrorCode::Ingest, "turbine: '" + dir.string() + "' is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".csv" && e.path().filename() != "labels.csv")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) fail(ErrorCode::Ingest, "turbine: no CSV export found in '" + dir.string() + "'");

    std::vector<std::string> selected = kTurbineEnvColumns;
    selected.insert(selected.end(), kTurbineSysColumns.begin(), kTurbineSysColumns.end());

    std::vector<std::string> turbine_order;
    std::map<std::string, std::vector<Row>> rows;
    for (const auto& file : files) {
        std::ifstream in(file);
        std::string line;
        if (!std::getline(in, line)) fail(ErrorCode::Ingest, "turbine: empty file '" + file.string() + "'");
        const char sep = line.find(';') != std::string::npos ? ';' : ',';
        const auto header = split(line, sep);
        auto column = [&](const std::string& name) -> std::size_t {
            auto it = std::find(header.begin(), header.end(), name);
            if (it == header.end())
                fail(ErrorCode::Ingest, "turbine: " + file.filename().string() + " is missing required column " + name);
            return static_cast<std::size_t>(it - header.begin());
        };
        const std::size_t id_col = column("Turbine_ID");
        const std::size_t ts_col = column("Timestamp");
        std::vector<std::size_t> cols;
        for (const auto& name : selected) cols.push_back(column(name));

        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            const auto cells = split(line, sep);
            if (cells.size() < header.size()) continue;
            Row row{cells[ts_col], {}};
            bool complete = true;
            for (std::size_t c : cols) {
                double v = 0.0;
                if (!parse_value(cells[c], v)) {
                    complete = false;
                    break;
                }
                row.values.push_back(v);
            }
            if (!complete) continue;
            const auto& id = cells[id_col];
            if (!rows.count(id)) turbine_order.push_back(id);
            rows[id].push_back(std::move(row));
        }
    }

    Dataset ds;
    ds.manifest.name = "turbine";
    ds.manifest.n_env = kTurbineEnvColumns.size();
    ds.manifest.n_sys = kTurbineSysColumns.size();
    ds.manifest.generator_config = {{"kind", "turbine"}, {"window", window}};
    const std::size_t n_env = kTurbineEnvColumns.size();
    const std::size_t n_sys = kTurbineSysColumns.size();
    for (const auto& id : turbine_order) {
        auto& trows = rows[id];
        std::stable_sort(trows.begin(), trows.end(), [](const Row& a, const Row& b) { return a.timestamp < b.timestamp; });
        const std::size_t w = window == 0 ? trows.size() : window;
        if (w < 2) continue;
        for (std::size_t start = 0, k = 0; start + w <= trows.size(); start += w, ++k) {
            Matrix env(n_env, w), sys(n_sys, w);
            for (std::size_t t = 0; t < w; ++t) {
                const auto& v = trows[start + t].values;
                for (std::size_t i = 0; i < n_env; ++i) env(i, t) = v[i];
                for (std::size_t i = 0; i < n_sys; ++i) sys(i, t) = v[n_env + i];
            }
            std::string sid = id + "_" + std::to_string(k);
            ds.manifest.series_paths.push_back("series/" + sid + ".csv");
            ds.series.emplace_back(std::move(sid), std::move(env), std::move(sys));
        }
    }
    ds.manifest.n_series = ds.series.size();
    ds.manifest.length = 0;
    if (!ds.series.empty()) {
        const std::size_t T = ds.series.front().length();
        const bool uniform = std::all_of(ds.series.begin(), ds.series.end(), [T](const auto& s) { return s.length() == T; });
        if (uniform) ds.manifest.length = T;
    }

    if (std::filesystem::exists(dir / "labels.csv")) {
        auto labels = read_labels_csv(dir / "labels.csv");
        std::vector<LabelRecord> aligned;
        for (const auto& s : ds.series) {
            auto it = std::find_if(labels.begin(), labels.end(), [&](const LabelRecord& l) { return l.series_id == s.id(); });
            if (it == labels.end())
                fail(ErrorCode::Ingest, "turbine: labels.csv has no entry for series '" + s.id() + "'");
            aligned.push_back(*it);
        }
        ds.labels = std::move(aligned);
    }
    ds.validate();
    return ds;
}

}  // namespace iad::datagen
