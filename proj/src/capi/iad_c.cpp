#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <string>

#include "iad/iad.h"

#include "iad/core/io.hpp"
#include "iad/datagen/generators.hpp"
#include "iad/eval/eval.hpp"
#include "iad/repr/repr.hpp"
#include "iad/serve/serve.hpp"

struct iad_dataset {
    iad::Dataset value;
};

struct iad_model {
    iad::repr::Model value;
};

struct iad_server {
    std::unique_ptr<iad::serve::ServiceState> state;
    std::unique_ptr<iad::serve::HttpServer> http;
};

namespace {

thread_local std::string g_last_error;

using nlohmann::json;

template <class F>
int guarded(F&& f) {
    try {
        g_last_error.clear();
        f();
        return IAD_OK;
    } catch (const iad::Error& e) {
        g_last_error = e.what();
        return static_cast<int>(e.code());
    } catch (const json::exception& e) {
        g_last_error = e.what();
        return IAD_E_PARSE;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return IAD_E_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return IAD_E_INTERNAL;
    }
}

void need(const void* p, const char* what) {
    if (!p) iad::fail(iad::ErrorCode::Argument, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

json parse_optional(const char* text, const char* what) {
    if (!text || !*text) return json::object();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        iad::fail(iad::ErrorCode::Parse, std::string(what) + ": " + e.what());
    }
}

std::vector<std::size_t> index_list(const size_t* idx, size_t n, std::size_t dataset_size) {
    std::vector<std::size_t> out;
    if (!idx) {
        for (std::size_t i = 0; i < dataset_size; ++i) out.push_back(i);
        return out;
    }
    for (size_t k = 0; k < n; ++k) {
        iad::require(idx[k] < dataset_size, iad::ErrorCode::Range, "series index " + std::to_string(idx[k]) + " out of range");
        out.push_back(idx[k]);
    }
    return out;
}

}  // namespace

extern "C" {

const char* iad_version(void) { return "1.0.0"; }

const char* iad_last_error(void) { return g_last_error.c_str(); }

const char* iad_status_name(int status) {
    if (status == IAD_OK) return "ok";
    if (status < IAD_E_ARGUMENT || status > IAD_E_INTERNAL) return "unknown";
    return iad::error_code_name(static_cast<iad::ErrorCode>(status));
}

void iad_string_free(char* s) { std::free(s); }

int iad_dataset_generate(const char* kind, uint64_t seed, const char* overrides_json, iad_dataset** out) {
    return guarded([&] {
        need(kind, "kind");
        need(out, "out");
        const json overrides = parse_optional(overrides_json, "overrides");
        const std::string k = kind;
        auto ds = std::make_unique<iad_dataset>();
        if (k == "synthetic")
            ds->value = iad::datagen::gen_synthetic(iad::datagen::SyntheticConfig::from_json(overrides), seed);
        else if (k == "pendulum")
            ds->value = iad::datagen::gen_pendulum(iad::datagen::PendulumConfig::from_json(overrides), seed);
        else
            iad::fail(iad::ErrorCode::Argument, "unknown generator '" + k + "' (expected synthetic or pendulum)");
        *out = ds.release();
    });
}

int iad_dataset_load(const char* dir, iad_dataset** out) {
    return guarded([&] {
        need(dir, "dir");
        need(out, "out");
        auto ds = std::make_unique<iad_dataset>();
        ds->value = iad::read_dataset(dir);
        *out = ds.release();
    });
}

int iad_dataset_ingest_turbine(const char* dir, size_t window, iad_dataset** out) {
    return guarded([&] {
        need(dir, "dir");
        need(out, "out");
        auto ds = std::make_unique<iad_dataset>();
        ds->value = iad::datagen::load_turbine(dir, window);
        *out = ds.release();
    });
}

int iad_dataset_save(const iad_dataset* ds, const char* dir) {
    return guarded([&] {
        need(ds, "dataset");
        need(dir, "dir");
        iad::write_dataset(ds->value, dir);
    });
}

size_t iad_dataset_size(const iad_dataset* ds) { return ds ? ds->value.series.size() : 0; }

int iad_dataset_info(const iad_dataset* ds, char** out_json) {
    return guarded([&] {
        need(ds, "dataset");
        need(out_json, "out_json");
        json j = iad::manifest_to_json(ds->value.manifest);
        json ids = json::array();
        for (const auto& s : ds->value.series) ids.push_back(s.id());
        j["ids"] = ids;
        if (ds->value.has_labels()) {
            json classes = json::array();
            for (const auto& l : ds->value.labels) classes.push_back(static_cast<int>(l.klass));
            j["classes"] = classes;
        }
        *out_json = dup_string(j.dump());
    });
}

void iad_dataset_free(iad_dataset* ds) { delete ds; }

int iad_dataset_split(const iad_dataset* ds, uint64_t seed, double train_frac, size_t* train, size_t* n_train, size_t* test,
                      size_t* n_test) {
    return guarded([&] {
        need(ds, "dataset");
        need(train, "train");
        need(n_train, "n_train");
        need(test, "test");
        need(n_test, "n_test");
        const auto split = iad::eval::stratified_split(ds->value.labels, seed, train_frac);
        std::copy(split.train.begin(), split.train.end(), train);
        std::copy(split.test.begin(), split.test.end(), test);
        *n_train = split.train.size();
        *n_test = split.test.size();
    });
}

int iad_train(const iad_dataset* ds, const char* config_json, const size_t* train_index, size_t n_train, iad_epoch_fn on_epoch,
              void* user, iad_model** out) {
    return guarded([&] {
        need(ds, "dataset");
        need(out, "out");
        const auto config = iad::repr::TrainConfig::from_json(parse_optional(config_json, "train config"));
        const auto index = index_list(train_index, n_train, ds->value.series.size());
        std::function<void(const iad::repr::EpochLog&)> cb;
        if (on_epoch) cb = [&](const iad::repr::EpochLog& e) { on_epoch(e.epoch, e.contrastive, e.adversarial, e.total, user); };
        auto m = std::make_unique<iad_model>();
        m->value = iad::repr::train(ds->value, index, config, cb);
        *out = m.release();
    });
}

int iad_model_load(const char* path, iad_model** out) {
    return guarded([&] {
        need(path, "path");
        need(out, "out");
        auto m = std::make_unique<iad_model>();
        m->value = iad::repr::Model::load(path);
        *out = m.release();
    });
}

int iad_model_save(const iad_model* model, const char* path) {
    return guarded([&] {
        need(model, "model");
        need(path, "path");
        model->value.save(path);
    });
}

size_t iad_model_embed_dim(const iad_model* model) { return model ? model->value.embed_dim() : 0; }

int iad_model_meta(const iad_model* model, char** out_json) {
    return guarded([&] {
        need(model, "model");
        need(out_json, "out_json");
        *out_json = dup_string(model->value.meta().dump());
    });
}

int iad_model_log_csv(const iad_model* model, char** out_csv) {
    return guarded([&] {
        need(model, "model");
        need(out_csv, "out_csv");
        *out_csv = dup_string(iad::repr::training_log_csv(model->value.log()));
    });
}

int iad_model_embed(const iad_model* model, const iad_dataset* ds, double* out, size_t capacity) {
    return guarded([&] {
        need(model, "model");
        need(ds, "dataset");
        need(out, "out");
        const std::size_t needed = ds->value.series.size() * model->value.embed_dim();
        iad::require(capacity >= needed, iad::ErrorCode::Shape,
                     "embedding buffer holds " + std::to_string(capacity) + " values, need " + std::to_string(needed));
        const iad::Matrix e = model->value.embed_dataset(ds->value);
        std::copy(e.data().begin(), e.data().end(), out);
    });
}

void iad_model_free(iad_model* model) { delete model; }

int iad_score(const iad_dataset* ds, const char* method, const iad_model* model, const size_t* train_index, size_t n_train,
              uint64_t seed, const char* options_json, double* scores) {
    return guarded([&] {
        need(ds, "dataset");
        need(method, "method");
        need(scores, "scores");
        const auto& d = ds->value;
        const auto options = iad::eval::ExperimentOptions::from_json(parse_optional(options_json, "options"));
        const auto train = index_list(train_index, n_train, d.series.size());
        std::vector<std::size_t> all(d.series.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        if (std::string(method) == "knn") {
            need(model, "model (knn scoring)");
            iad::require(d.has_labels(), iad::ErrorCode::State, "knn scoring needs a labelled dataset");
            const iad::Matrix emb = model->value.embed_dataset(d);
            iad::Matrix train_emb(train.size(), emb.cols());
            std::vector<std::size_t> labels;
            for (std::size_t r = 0; r < train.size(); ++r) {
                std::copy(emb.row(train[r]).begin(), emb.row(train[r]).end(), train_emb.row(r).begin());
                labels.push_back(iad::eval::map_label(d.labels[train[r]].klass, iad::eval::LabelScheme::TwoClass));
            }
            for (std::size_t i = 0; i < all.size(); ++i) {
                // a training series does not vote for itself
                std::optional<std::size_t> self;
                for (std::size_t r = 0; r < train.size(); ++r)
                    if (train[r] == i) self = r;
                scores[i] = iad::detect::knn_classify(train_emb, labels, emb.row(i), options.knn_k, 1, self).score;
            }
            return;
        }
        const auto m = iad::eval::parse_method(method);
        const auto s = iad::eval::detector_scores(d, m, train, all, seed, options);
        std::copy(s.begin(), s.end(), scores);
    });
}

int iad_method_check(const char* method) {
    return guarded([&] {
        need(method, "method");
        iad::eval::parse_method(method);
    });
}

int iad_evaluate(const iad_dataset* ds, const char* method, const uint64_t* seeds, size_t n_seeds, const char* options_json,
                 const char* params_json, size_t jobs, iad_progress_fn progress, void* user, char** out_json) {
    return guarded([&] {
        need(ds, "dataset");
        need(method, "method");
        need(seeds, "seeds");
        need(out_json, "out_json");
        auto options = iad::eval::ExperimentOptions::from_json(parse_optional(options_json, "options"));
        if (jobs > 0) options.jobs = jobs;
        const auto m = iad::eval::parse_method(method);
        iad::eval::Progress cb;
        if (progress) cb = [&](const std::string& msg) { progress(msg.c_str(), user); };
        auto report = iad::eval::run_experiment(ds->value, m, std::vector<std::uint64_t>(seeds, seeds + n_seeds), options, cb);
        report.params = parse_optional(params_json, "params");
        *out_json = dup_string(iad::eval::reports_json({report}).dump(2));
    });
}

int iad_reports_merge(const char* const* documents, size_t n, char** out_json) {
    return guarded([&] {
        need(out_json, "out_json");
        std::vector<iad::eval::ExperimentReport> all;
        for (size_t k = 0; k < n; ++k) {
            need(documents[k], "report document");
            auto part = iad::eval::reports_from_json(json::parse(documents[k]));
            all.insert(all.end(), part.begin(), part.end());
        }
        *out_json = dup_string(iad::eval::reports_json(all).dump(2));
    });
}

int iad_reports_csv(const char* reports_json, char** out_csv) {
    return guarded([&] {
        need(reports_json, "reports_json");
        need(out_csv, "out_csv");
        *out_csv = dup_string(iad::eval::reports_csv(iad::eval::reports_from_json(json::parse(reports_json))));
    });
}

int iad_reports_table(const char* reports_json, const char* metric, char** out_table) {
    return guarded([&] {
        need(reports_json, "reports_json");
        need(out_table, "out_table");
        *out_table = dup_string(
            iad::eval::render_table(iad::eval::reports_from_json(json::parse(reports_json)), metric ? metric : "auroc"));
    });
}

int iad_serve_config_read(const char* path, char** out_json) {
    return guarded([&] {
        need(path, "path");
        need(out_json, "out_json");
        const auto c = iad::serve::read_serve_config(path);
        json j = {{"host", c.host}, {"port", c.port}, {"threads", c.threads}};
        if (!c.dataset.empty()) j["dataset"] = c.dataset.string();
        if (!c.checkpoint.empty()) j["checkpoint"] = c.checkpoint.string();
        if (!c.label_log.empty()) j["label_log"] = c.label_log.string();
        if (!c.static_dir.empty()) j["static_dir"] = c.static_dir.string();
        *out_json = dup_string(j.dump());
    });
}

int iad_server_create(const iad_dataset* ds, const iad_model* model, const char* config_json, iad_server** out) {
    return guarded([&] {
        need(ds, "dataset");
        need(model, "model");
        need(out, "out");
        const json j = parse_optional(config_json, "server config");
        iad::serve::ServeConfig cfg;
        for (const auto& [k, v] : j.items()) {
            if (k == "host") cfg.host = v.get<std::string>();
            else if (k == "port") cfg.port = v.get<int>();
            else if (k == "threads") cfg.threads = v.get<int>();
            else if (k == "label_log") cfg.label_log = v.get<std::string>();
            else if (k == "static_dir") cfg.static_dir = v.get<std::string>();
            else iad::fail(iad::ErrorCode::Config, "unknown server option '" + k + "'");
        }
        auto s = std::make_unique<iad_server>();
        s->state = std::make_unique<iad::serve::ServiceState>(ds->value, model->value.embed_dataset(ds->value), cfg.label_log);
        s->http = std::make_unique<iad::serve::HttpServer>(*s->state, cfg);
        *out = s.release();
    });
}

int iad_server_bind(iad_server* server, int* port) {
    return guarded([&] {
        need(server, "server");
        const int p = server->http->bind();
        if (port) *port = p;
    });
}

int iad_server_run(iad_server* server) {
    return guarded([&] {
        need(server, "server");
        server->http->listen();
    });
}

void iad_server_stop(iad_server* server) {
    if (server) server->http->stop();
}

int iad_server_request(iad_server* server, const char* method, const char* target, const char* body, int* http_status,
                       char** out_body) {
    return guarded([&] {
        need(server, "server");
        need(method, "method");
        need(target, "target");
        need(http_status, "http_status");
        need(out_body, "out_body");
        iad::serve::Request req{method, target, {}, body ? body : ""};
        if (auto q = req.path.find('?'); q != std::string::npos) {
            std::string query = req.path.substr(q + 1);
            req.path.erase(q);
            std::size_t pos = 0;
            while (pos <= query.size()) {
                std::size_t amp = query.find('&', pos);
                if (amp == std::string::npos) amp = query.size();
                const std::string kv = query.substr(pos, amp - pos);
                if (!kv.empty()) {
                    const auto eq = kv.find('=');
                    req.query[kv.substr(0, eq)] = eq == std::string::npos ? "" : kv.substr(eq + 1);
                }
                pos = amp + 1;
            }
        }
        const auto res = iad::serve::handle(*server->state, req);
        *http_status = res.status;
        *out_body = dup_string(res.body);
    });
}

void iad_server_free(iad_server* server) {
    if (!server) return;
    server->http.reset();
    delete server;
}

}  // extern "C"
