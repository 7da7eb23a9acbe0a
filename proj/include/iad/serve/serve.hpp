#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "iad/core/series.hpp"
#include "json.hpp"

namespace iad::serve {

struct LabelEvent {
    std::string series_id;
    AnomalyClass old_class = AnomalyClass::Normal;
    AnomalyClass new_class = AnomalyClass::Normal;
    std::string actor;
    UtcTime timestamp{};

    nlohmann::json to_json() const;
    static LabelEvent from_json(const nlohmann::json& j);
    friend bool operator==(const LabelEvent&, const LabelEvent&) = default;
};

/// Applies one event to a label set. Normal -> anomaly marks the whole series,
/// anomaly -> Normal clears the ranges, anomaly -> anomaly keeps them.
void apply_event(std::vector<LabelRecord>& labels, const std::vector<std::size_t>& lengths, const LabelEvent& event);

/// initial labels + events, in order.
std::vector<LabelRecord> replay(std::vector<LabelRecord> initial, const std::vector<std::size_t>& lengths,
                                const std::vector<LabelEvent>& events);

std::vector<LabelEvent> read_event_log(const std::filesystem::path& path);
std::string events_jsonl(const std::vector<LabelEvent>& events);

/// Label state backed by an append-only JSONL log. An existing log is
/// replayed on construction. Reads may run concurrently with one writer.
class LabelStore {
public:
    using Clock = std::function<UtcTime()>;

    /// Series without labels start as Normal. An empty log path keeps events in memory only.
    LabelStore(const Dataset& dataset, std::filesystem::path log_path = {}, Clock clock = utc_now);

    LabelRecord label(const std::string& series_id) const;
    std::vector<LabelRecord> labels() const;
    std::vector<LabelEvent> events() const;
    std::size_t event_count() const;

    /// NotFound for unknown ids, Argument for classes outside {0,1,2},
    /// Conflict when `expected` differs from the current class.
    LabelEvent relabel(const std::string& series_id, int new_class, std::optional<int> expected, const std::string& actor);

    std::string export_csv() const;
    std::string export_jsonl() const;

private:
    std::size_t index(const std::string& series_id) const;

    mutable std::shared_mutex mutex_;
    std::map<std::string, std::size_t> index_;
    std::vector<std::size_t> lengths_;
    std::vector<LabelRecord> initial_;
    std::vector<LabelRecord> labels_;
    std::vector<LabelEvent> events_;
    std::filesystem::path log_path_;
    Clock clock_;
};

struct Neighbor {
    std::string series_id;
    double distance = 0.0;
    AnomalyClass klass = AnomalyClass::Normal;
};

/// Read-only dataset and embeddings plus the mutable label store.
class ServiceState {
public:
    ServiceState(Dataset dataset, Matrix embeddings, std::filesystem::path log_path = {}, LabelStore::Clock clock = utc_now);

    const Dataset& dataset() const noexcept { return dataset_; }
    const Matrix& embeddings() const noexcept { return embeddings_; }
    LabelStore& store() noexcept { return *store_; }
    const LabelStore& store() const noexcept { return *store_; }

    /// k nearest other series by Euclidean distance, ascending (ties by manifest order).
    std::vector<Neighbor> neighbors(const std::string& series_id, std::size_t k) const;

private:
    Dataset dataset_;
    Matrix embeddings_;
    std::unique_ptr<LabelStore> store_;
};

struct Request {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct Response {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// Routes one API request. Never throws.
Response handle(ServiceState& state, const Request& request);

struct ServeConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::filesystem::path dataset;
    std::filesystem::path checkpoint;
    std::filesystem::path label_log;
    std::filesystem::path static_dir;
    int threads = 8;
};

/// `key = value` lines; `#` starts a comment, values may be quoted.
ServeConfig parse_serve_config(const std::string& text, ServeConfig base = {});
ServeConfig read_serve_config(const std::filesystem::path& path, ServeConfig base = {});

class HttpServer {
public:
    HttpServer(ServiceState& state, ServeConfig config);
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    /// Binds (port 0 picks a free one) and returns the bound port.
    int bind();
    /// Blocks until stop().
    void listen();
    void stop();
    bool running() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace iad::serve
