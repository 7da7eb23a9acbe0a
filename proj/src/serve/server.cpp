#include <charconv>
#include <sstream>

#include "httplib.h"

#include "iad/core/io.hpp"
#include "iad/detect/detect.hpp"
#include "iad/serve/serve.hpp"

namespace iad::serve {

namespace {

using nlohmann::json;

json matrix_rows(const Matrix& m) {
    json rows = json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
    return rows;
}

json label_json(const LabelRecord& r) {
    json ranges = json::array();
    for (const auto& g : r.ranges) ranges.push_back({{"start", g.start}, {"length", g.length}});
    return {{"class", static_cast<int>(r.klass)},
            {"ranges", ranges},
            {"source", label_source_name(r.source)},
            {"timestamp", format_utc(r.timestamp)}};
}

Response json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

Response error_response(int status, const std::string& message) { return json_response(status, {{"error", message}}); }

int status_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::NotFound: return 404;
        case ErrorCode::Conflict: return 409;
        case ErrorCode::Argument:
        case ErrorCode::Parse:
        case ErrorCode::Range: return 400;
        default: return 500;
    }
}

std::size_t parse_k(const std::map<std::string, std::string>& query) {
    auto it = query.find("k");
    if (it == query.end()) return 5;
    std::size_t k = 0;
    const auto& s = it->second;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), k);
    if (ec != std::errc() || p != s.data() + s.size() || k == 0) fail(ErrorCode::Argument, "k must be a positive integer, got '" + s + "'");
    return k;
}

Response get_datasets(const ServiceState& state) {
    const auto& m = state.dataset().manifest;
    json ids = json::array();
    for (const auto& s : state.dataset().series) ids.push_back(s.id());
    json d = {{"name", m.name},   {"n_series", state.dataset().series.size()}, {"length", m.length},
              {"n_env", m.n_env}, {"n_sys", m.n_sys},                          {"embed_dim", state.embeddings().cols()},
              {"series", ids}};
    return json_response(200, json::array({d}));
}

Response get_series(const ServiceState& state, const std::string& id) {
    const auto i = state.dataset().index_of(id);
    if (!i) return error_response(404, "unknown series '" + id + "'");
    const auto& s = state.dataset().series[*i];
    return json_response(200, {{"id", s.id()},
                               {"length", s.length()},
                               {"env", matrix_rows(s.env())},
                               {"sys", matrix_rows(s.sys())},
                               {"label", label_json(state.store().label(id))}});
}

Response get_neighbors(const ServiceState& state, const std::string& id, const std::map<std::string, std::string>& query) {
    if (!state.dataset().index_of(id)) return error_response(404, "unknown series '" + id + "'");
    const std::size_t k = parse_k(query);
    json out = json::array();
    for (const auto& n : state.neighbors(id, k))
        out.push_back({{"series_id", n.series_id}, {"distance", n.distance}, {"class", static_cast<int>(n.klass)}});
    return json_response(200, {{"series_id", id}, {"k", k}, {"neighbors", out}});
}

Response post_label(ServiceState& state, const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        return error_response(400, std::string("malformed JSON body: ") + e.what());
    }
    if (!j.is_object()) return error_response(400, "body must be a JSON object");
    if (!j.contains("series_id") || !j["series_id"].is_string()) return error_response(400, "series_id must be a string");
    if (!j.contains("new_class") || !j["new_class"].is_number_integer()) return error_response(400, "new_class must be an integer");
    if (!j.contains("expected_class") || !j["expected_class"].is_number_integer())
        return error_response(400, "expected_class must be an integer");
    std::string actor = "anonymous";
    if (j.contains("actor")) {
        if (!j["actor"].is_string()) return error_response(400, "actor must be a string");
        actor = j["actor"].get<std::string>();
    }
    const auto id = j["series_id"].get<std::string>();
    const auto event = state.store().relabel(id, j["new_class"].get<int>(), j["expected_class"].get<int>(), actor);
    return json_response(200, {{"event", event.to_json()}, {"label", label_json(state.store().label(id))}});
}

Response get_export(const ServiceState& state, const std::map<std::string, std::string>& query) {
    auto it = query.find("format");
    const std::string format = it == query.end() ? "csv" : it->second;
    if (format == "csv") return {200, "text/csv", state.store().export_csv()};
    if (format == "jsonl") return {200, "application/x-ndjson", state.store().export_jsonl()};
    return error_response(400, "format must be csv or jsonl, got '" + format + "'");
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

ServiceState::ServiceState(Dataset dataset, Matrix embeddings, std::filesystem::path log_path, LabelStore::Clock clock)
    : dataset_(std::move(dataset)), embeddings_(std::move(embeddings)) {
    require(embeddings_.rows() == dataset_.series.size(), ErrorCode::Shape,
            "serve: " + std::to_string(embeddings_.rows()) + " embeddings for " + std::to_string(dataset_.series.size()) + " series");
    store_ = std::make_unique<LabelStore>(dataset_, std::move(log_path), std::move(clock));
}

std::vector<Neighbor> ServiceState::neighbors(const std::string& series_id, std::size_t k) const {
    const auto i = dataset_.index_of(series_id);
    if (!i) fail(ErrorCode::NotFound, "unknown series '" + series_id + "'");
    const std::size_t others = dataset_.series.size() - 1;
    if (k > others) fail(ErrorCode::Argument, "k = " + std::to_string(k) + " exceeds the " + std::to_string(others) + " other series");
    const auto labels = store_->labels();
    std::vector<Neighbor> out;
    for (const auto& n : detect::nearest_neighbors(embeddings_, embeddings_.row(*i), k, *i))
        out.push_back({dataset_.series[n.index].id(), n.distance, labels[n.index].klass});
    return out;
}

Response handle(ServiceState& state, const Request& req) {
    try {
        const std::string& p = req.path;
        const std::string series_prefix = "/api/series/";
        if (req.method == "GET") {
            if (p == "/api/health")
                return json_response(200, {{"status", "ok"},
                                           {"series", state.dataset().series.size()},
                                           {"events", state.store().event_count()}});
            if (p == "/api/datasets") return get_datasets(state);
            if (p == "/api/labels/export") return get_export(state, req.query);
            if (p.rfind(series_prefix, 0) == 0) {
                std::string rest = p.substr(series_prefix.size());
                const std::string suffix = "/neighbors";
                if (rest.size() > suffix.size() && rest.compare(rest.size() - suffix.size(), suffix.size(), suffix) == 0)
                    return get_neighbors(state, rest.substr(0, rest.size() - suffix.size()), req.query);
                if (!rest.empty() && rest.find('/') == std::string::npos) return get_series(state, rest);
            }
        } else if (req.method == "POST" && p == "/api/labels") {
            return post_label(state, req.body);
        }
        return error_response(404, "no route for " + req.method + " " + p);
    } catch (const Error& e) {
        return error_response(status_of(e.code()), e.what());
    } catch (const std::exception& e) {
        return error_response(500, e.what());
    }
}

ServeConfig parse_serve_config(const std::string& text, ServeConfig base) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(ErrorCode::Config, "serve config line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        auto as_int = [&](int& field) {
            int v = 0;
            auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc() || ptr != value.data() + value.size())
                fail(ErrorCode::Config, "serve config: " + key + " must be an integer, got '" + value + "'");
            field = v;
        };
        if (key == "host") base.host = value;
        else if (key == "port") as_int(base.port);
        else if (key == "threads") as_int(base.threads);
        else if (key == "dataset") base.dataset = value;
        else if (key == "checkpoint") base.checkpoint = value;
        else if (key == "label_log") base.label_log = value;
        else if (key == "static_dir") base.static_dir = value;
        else fail(ErrorCode::Config, "serve config: unknown key '" + key + "'");
    }
    if (base.port < 0 || base.port > 65535) fail(ErrorCode::Config, "serve config: port out of range");
    if (base.threads < 1) fail(ErrorCode::Config, "serve config: threads must be >= 1");
    return base;
}

ServeConfig read_serve_config(const std::filesystem::path& path, ServeConfig base) {
    return parse_serve_config(read_text_file(path), std::move(base));
}

struct HttpServer::Impl {
    ServiceState& state;
    ServeConfig config;
    httplib::Server server;
    int port = -1;

    Impl(ServiceState& s, ServeConfig c) : state(s), config(std::move(c)) {}
};

HttpServer::HttpServer(ServiceState& state, ServeConfig config) : impl_(std::make_unique<Impl>(state, std::move(config))) {
    auto& srv = impl_->server;
    const int threads = impl_->config.threads;
    srv.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<std::size_t>(threads)); };
    auto adapter = [this](const httplib::Request& hreq, httplib::Response& hres) {
        Request req{hreq.method, hreq.path, {}, hreq.body};
        for (const auto& [k, v] : hreq.params) req.query[k] = v;
        Response res = handle(impl_->state, req);
        hres.status = res.status;
        hres.set_content(res.body, res.content_type);
    };
    srv.Get(R"(/api/.*)", adapter);
    srv.Post(R"(/api/.*)", adapter);
    if (!impl_->config.static_dir.empty()) {
        if (!srv.set_mount_point("/", impl_->config.static_dir.string()))
            fail(ErrorCode::Config, "static directory " + impl_->config.static_dir.string() + " does not exist");
    }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
    auto& c = impl_->config;
    if (c.port == 0)
        impl_->port = impl_->server.bind_to_any_port(c.host);
    else
        impl_->port = impl_->server.bind_to_port(c.host, c.port) ? c.port : -1;
    if (impl_->port < 0) fail(ErrorCode::Io, "cannot bind " + c.host + ":" + std::to_string(c.port));
    return impl_->port;
}

void HttpServer::listen() {
    if (impl_->port < 0) bind();
    impl_->server.listen_after_bind();
}

void HttpServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace iad::serve
