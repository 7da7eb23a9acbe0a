#include <fstream>
#include <mutex>
#include <sstream>

#include "iad/core/io.hpp"
#include "iad/serve/serve.hpp"

namespace iad::serve {

namespace {

AnomalyClass class_from_int(int v, const std::string& what) {
    if (v < 0 || v > 2) fail(ErrorCode::Argument, what + " must be 0, 1 or 2, got " + std::to_string(v));
    return static_cast<AnomalyClass>(v);
}

}  // namespace

nlohmann::json LabelEvent::to_json() const {
    return {{"series_id", series_id},
            {"old_class", static_cast<int>(old_class)},
            {"new_class", static_cast<int>(new_class)},
            {"actor", actor},
            {"timestamp", format_utc(timestamp)}};
}

LabelEvent LabelEvent::from_json(const nlohmann::json& j) {
    LabelEvent e;
    try {
        e.series_id = j.at("series_id").get<std::string>();
        e.old_class = class_from_int(j.at("old_class").get<int>(), "old_class");
        e.new_class = class_from_int(j.at("new_class").get<int>(), "new_class");
        e.actor = j.at("actor").get<std::string>();
        e.timestamp = parse_utc(j.at("timestamp").get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
        fail(ErrorCode::Parse, std::string("label event: ") + ex.what());
    }
    return e;
}

void apply_event(std::vector<LabelRecord>& labels, const std::vector<std::size_t>& lengths, const LabelEvent& event) {
    std::size_t i = 0;
    while (i < labels.size() && labels[i].series_id != event.series_id) ++i;
    if (i == labels.size()) fail(ErrorCode::NotFound, "unknown series '" + event.series_id + "'");
    LabelRecord& r = labels[i];
    if (r.klass != event.old_class)
        fail(ErrorCode::Consistency, "event for '" + event.series_id + "' expects class " +
                                         std::to_string(static_cast<int>(event.old_class)) + " but state has " +
                                         std::to_string(static_cast<int>(r.klass)));
    if (event.new_class == AnomalyClass::Normal)
        r.ranges.clear();
    else if (r.ranges.empty())
        r.ranges = {SnippetRange{0, lengths.at(i)}};
    r.klass = event.new_class;
    r.source = LabelSource::Human;
    r.timestamp = event.timestamp;
}

std::vector<LabelRecord> replay(std::vector<LabelRecord> initial, const std::vector<std::size_t>& lengths,
                                const std::vector<LabelEvent>& events) {
    for (const auto& e : events) apply_event(initial, lengths, e);
    return initial;
}

std::vector<LabelEvent> read_event_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::Io, "cannot open label log " + path.string());
    std::vector<LabelEvent> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(LabelEvent::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& ex) {
            fail(ErrorCode::Parse, path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        } catch (const Error& ex) {
            fail(ex.code(), path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return out;
}

std::string events_jsonl(const std::vector<LabelEvent>& events) {
    std::string out;
    for (const auto& e : events) out += e.to_json().dump() + '\n';
    return out;
}

LabelStore::LabelStore(const Dataset& dataset, std::filesystem::path log_path, Clock clock)
    : log_path_(std::move(log_path)), clock_(std::move(clock)) {
    for (std::size_t i = 0; i < dataset.series.size(); ++i) {
        const auto& s = dataset.series[i];
        index_.emplace(s.id(), i);
        lengths_.push_back(s.length());
        if (dataset.has_labels()) {
            initial_.push_back(dataset.labels.at(i));
        } else {
            LabelRecord r;
            r.series_id = s.id();
            r.source = LabelSource::File;
            initial_.push_back(r);
        }
    }
    labels_ = initial_;
    if (!log_path_.empty() && std::filesystem::exists(log_path_)) {
        events_ = read_event_log(log_path_);
        labels_ = replay(initial_, lengths_, events_);
    }
}

std::size_t LabelStore::index(const std::string& series_id) const {
    auto it = index_.find(series_id);
    if (it == index_.end()) fail(ErrorCode::NotFound, "unknown series '" + series_id + "'");
    return it->second;
}

LabelRecord LabelStore::label(const std::string& series_id) const {
    const std::size_t i = index(series_id);
    std::shared_lock lock(mutex_);
    return labels_[i];
}

std::vector<LabelRecord> LabelStore::labels() const {
    std::shared_lock lock(mutex_);
    return labels_;
}

std::vector<LabelEvent> LabelStore::events() const {
    std::shared_lock lock(mutex_);
    return events_;
}

std::size_t LabelStore::event_count() const {
    std::shared_lock lock(mutex_);
    return events_.size();
}

LabelEvent LabelStore::relabel(const std::string& series_id, int new_class, std::optional<int> expected, const std::string& actor) {
    const std::size_t i = index(series_id);
    const AnomalyClass target = class_from_int(new_class, "new_class");
    if (expected) class_from_int(*expected, "expected_class");
    std::unique_lock lock(mutex_);
    const AnomalyClass current = labels_[i].klass;
    if (expected && static_cast<int>(current) != *expected)
        fail(ErrorCode::Conflict, "series '" + series_id + "' has class " + std::to_string(static_cast<int>(current)) +
                                      ", expected " + std::to_string(*expected));
    LabelEvent e{series_id, current, target, actor, clock_()};
    if (!log_path_.empty()) {
        if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
        std::ofstream out(log_path_, std::ios::app);
        out << e.to_json().dump() << '\n';
        out.flush();
        if (!out) fail(ErrorCode::Io, "cannot append to label log " + log_path_.string());
    }
    apply_event(labels_, lengths_, e);
    events_.push_back(e);
    return e;
}

std::string LabelStore::export_csv() const {
    std::shared_lock lock(mutex_);
    return labels_csv_text(labels_);
}

std::string LabelStore::export_jsonl() const {
    std::shared_lock lock(mutex_);
    return events_jsonl(events_);
}

}  // namespace iad::serve
