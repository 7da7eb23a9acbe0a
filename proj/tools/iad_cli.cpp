#include <charconv>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "iad/iad.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Failure {
    int exit_code;
    std::string message;
};

[[noreturn]] void usage_error(const std::string& msg) { throw Failure{2, msg}; }

void check(int status, const std::string& context) {
    if (status == IAD_OK) return;
    throw Failure{1, context + ": " + iad_last_error() + " [" + iad_status_name(status) + "]"};
}

struct OwnedString {
    char* p = nullptr;
    ~OwnedString() { iad_string_free(p); }
    std::string str() const { return p ? p : ""; }
};

struct Dataset {
    iad_dataset* h = nullptr;
    ~Dataset() { iad_dataset_free(h); }
};

struct Model {
    iad_model* h = nullptr;
    ~Model() { iad_model_free(h); }
};

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Failure{1, "cannot write " + path.string()};
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{1, "cannot read " + path.string()};
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string shortest(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::vector<uint64_t> parse_seeds(const std::string& text) {
    std::vector<uint64_t> out;
    auto parse_one = [&](const std::string& s) {
        uint64_t v = 0;
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc() || p != s.data() + s.size() || s.empty()) usage_error("--seeds: bad seed '" + s + "'");
        return v;
    };
    if (auto dots = text.find(".."); dots != std::string::npos) {
        const uint64_t a = parse_one(text.substr(0, dots)), b = parse_one(text.substr(dots + 2));
        if (b < a) usage_error("--seeds: empty range '" + text + "'");
        for (uint64_t s = a; s <= b; ++s) out.push_back(s);
        return out;
    }
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(parse_one(part));
    if (out.empty()) usage_error("--seeds: no seeds given");
    return out;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string part;
    while (std::getline(ss, part, ',')) {
        double v = 0.0;
        auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
        if (ec != std::errc() || p != part.data() + part.size() || part.empty()) usage_error("--grid: bad value '" + part + "'");
        if (v < 0.0) usage_error("--grid: lambda must be >= 0, got '" + part + "'");
        out.push_back(v);
    }
    if (out.empty()) usage_error("--grid: no values given");
    return out;
}

std::vector<std::string> split_methods(const std::vector<std::string>& raw) {
    std::vector<std::string> out;
    for (const auto& r : raw) {
        std::stringstream ss(r);
        std::string m;
        while (std::getline(ss, m, ','))
            if (!m.empty()) out.push_back(m);
    }
    return out;
}

void check_method(const std::string& m) {
    if (iad_method_check(m.c_str()) != IAD_OK) usage_error("--methods: unknown method '" + m + "'");
}

void load_dataset(const std::string& dir, Dataset& ds) { check(iad_dataset_load(dir.c_str(), &ds.h), "loading dataset " + dir); }

/// Training overrides shared by train, eval and ablate-lambda.
struct TrainFlags {
    std::optional<double> lambda;
    std::optional<std::size_t> epochs, batch, tps, channels, blocks;
    std::optional<double> lr, window_frac;
    bool no_adversary = false;

    void add(CLI::App* app, bool with_lambda = true) {
        if (with_lambda) app->add_option("--lambda", lambda, "adversary weight")->check(CLI::NonNegativeNumber);
        app->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
        app->add_option("--batch", batch, "triples per optimiser step")->check(CLI::PositiveNumber);
        app->add_option("--lr", lr, "learning rate")->check(CLI::PositiveNumber);
        app->add_option("--window-frac", window_frac, "window length as a fraction of the series")->check(CLI::Range(1e-9, 1.0));
        app->add_option("--triples-per-series", tps, "triples drawn per training series each epoch")->check(CLI::PositiveNumber);
        app->add_option("--channels", channels, "encoder channels")->check(CLI::PositiveNumber);
        app->add_option("--blocks", blocks, "encoder blocks")->check(CLI::PositiveNumber);
        app->add_flag("--no-adversary", no_adversary, "disable the environment adversary");
    }

    json to_json() const {
        json j = json::object();
        if (lambda) j["lambda"] = *lambda;
        if (epochs) j["epochs"] = *epochs;
        if (batch) j["batch"] = *batch;
        if (lr) j["lr"] = *lr;
        if (window_frac) j["window_frac"] = *window_frac;
        if (tps) j["triples_per_series"] = *tps;
        if (channels) j["channels"] = *channels;
        if (blocks) j["blocks"] = *blocks;
        if (no_adversary) j["adversary"] = false;
        return j;
    }
};

void progress_to_stderr(const char* msg, void*) {
    std::cerr << msg << std::endl;
}

std::string run_eval(const Dataset& ds, const std::string& method, const std::vector<uint64_t>& seeds, const json& options,
                     const json& params, std::size_t jobs) {
    OwnedString out;
    check(iad_evaluate(ds.h, method.c_str(), seeds.data(), seeds.size(), options.dump().c_str(), params.dump().c_str(), jobs,
                       progress_to_stderr, nullptr, &out.p),
          "eval " + method);
    return out.str();
}

void write_reports(const fs::path& out, const std::vector<std::string>& docs, const std::string& metric) {
    std::vector<const char*> ptrs;
    for (const auto& d : docs) ptrs.push_back(d.c_str());
    OwnedString merged, csv, table;
    check(iad_reports_merge(ptrs.data(), ptrs.size(), &merged.p), "merging reports");
    check(iad_reports_csv(merged.p, &csv.p), "report csv");
    check(iad_reports_table(merged.p, metric.c_str(), &table.p), "report table");
    write_file(out / "report.json", merged.str() + "\n");
    write_file(out / "report.csv", csv.str());
    write_file(out / "table.csv", table.str());
    std::cout << table.str();
}

iad_server* g_server = nullptr;

void on_signal(int) {
    if (g_server) iad_server_stop(g_server);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Intrinsic anomaly detection toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(iad_version()));

    // gen
    auto* gen = app.add_subcommand("gen", "generate a benchmark dataset");
    std::string gen_kind, gen_out, gen_config;
    uint64_t gen_seed = 0;
    std::optional<std::size_t> gen_n, gen_len;
    gen->add_option("kind", gen_kind, "synthetic or pendulum")->required()->check(CLI::IsMember({"synthetic", "pendulum"}));
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--n-series", gen_n, "number of series")->check(CLI::PositiveNumber);
    gen->add_option("--length", gen_len, "series length")->check(CLI::PositiveNumber);
    gen->add_option("--config", gen_config, "JSON object of generator overrides");

    // ingest
    auto* ingest = app.add_subcommand("ingest", "convert external data");
    auto* turbine = ingest->add_subcommand("turbine", "wind turbine SCADA exports");
    ingest->require_subcommand(1);
    std::string tb_dir, tb_out;
    std::size_t tb_window = 144;
    turbine->add_option("--dir", tb_dir, "directory of CSV exports")->required()->check(CLI::ExistingDirectory);
    turbine->add_option("--out", tb_out, "output directory")->required();
    turbine->add_option("--window", tb_window, "rows per series (0 = one series per turbine)");

    // train
    auto* train = app.add_subcommand("train", "train an embedding model");
    std::string tr_dataset, tr_mode = "envinv", tr_out;
    uint64_t tr_seed = 0;
    bool tr_all = false;
    TrainFlags tr_flags;
    train->add_option("--dataset", tr_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    train->add_option("--mode", tr_mode, "envinv, basic or residual")->check(CLI::IsMember({"envinv", "basic", "residual"}));
    train->add_option("--seed", tr_seed, "training and split seed");
    train->add_option("--out", tr_out, "output directory")->required();
    train->add_flag("--all", tr_all, "train on every series instead of the seed's training split");
    tr_flags.add(train);

    // embed
    auto* embed = app.add_subcommand("embed", "embed every series of a dataset");
    std::string em_ckpt, em_dataset, em_out;
    embed->add_option("--ckpt", em_ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
    embed->add_option("--dataset", em_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    embed->add_option("--out", em_out, "output directory")->required();

    // score
    auto* score = app.add_subcommand("score", "per-series anomaly scores");
    std::string sc_method, sc_dataset, sc_ckpt, sc_out;
    uint64_t sc_seed = 0;
    bool sc_all = false;
    std::size_t sc_k = 5;
    score->add_option("--method", sc_method, "resthresh, iforest, lof, iforest-res, lof-res or knn")
        ->required()
        ->check(CLI::IsMember({"resthresh", "iforest", "lof", "iforest-res", "lof-res", "knn"}));
    score->add_option("--dataset", sc_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    score->add_option("--ckpt", sc_ckpt, "model checkpoint (knn)")->check(CLI::ExistingFile);
    score->add_option("--seed", sc_seed, "split and detector seed");
    score->add_option("--k", sc_k, "neighbours for knn")->check(CLI::PositiveNumber);
    score->add_flag("--all", sc_all, "fit on every series instead of the seed's training split");
    score->add_option("--out", sc_out, "output directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate methods over seeds");
    std::string ev_dataset, ev_seeds = "0..4", ev_out, ev_metric = "auroc";
    std::vector<std::string> ev_methods_raw;
    std::size_t ev_jobs = 1;
    TrainFlags ev_flags;
    ev->add_option("--dataset", ev_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--methods", ev_methods_raw, "comma-separated methods")->required();
    ev->add_option("--seeds", ev_seeds, "seed list, e.g. 0..4 or 0,2");
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--jobs", ev_jobs, "seeds run in parallel")->check(CLI::PositiveNumber);
    ev->add_option("--metric", ev_metric, "metric shown in the table");
    ev_flags.add(ev);

    // ablate-lambda
    auto* ab = app.add_subcommand("ablate-lambda", "EnvInv sensitivity to the adversary weight");
    std::string ab_dataset, ab_grid = "0,1e-5,1e-4,1e-3,1e-2,1e-1,1", ab_seeds = "0..4", ab_out;
    std::size_t ab_jobs = 1;
    TrainFlags ab_flags;
    ab->add_option("--dataset", ab_dataset, "dataset directory")->required()->check(CLI::ExistingDirectory);
    ab->add_option("--grid", ab_grid, "comma-separated lambda values");
    ab->add_option("--seeds", ab_seeds, "seed list");
    ab->add_option("--out", ab_out, "output directory")->required();
    ab->add_option("--jobs", ab_jobs, "seeds run in parallel")->check(CLI::PositiveNumber);
    ab_flags.add(ab, false);

    // report render
    auto* report = app.add_subcommand("report", "report utilities");
    report->require_subcommand(1);
    auto* render = report->add_subcommand("render", "render report JSON files as a table");
    std::vector<std::string> rp_inputs;
    std::string rp_metric = "auroc", rp_out;
    render->add_option("reports", rp_inputs, "report.json files")->required()->check(CLI::ExistingFile);
    render->add_option("--metric", rp_metric, "metric to show");
    render->add_option("--out", rp_out, "write the table to this file");

    // serve
    auto* sv = app.add_subcommand("serve", "label triage service");
    std::string sv_dataset, sv_ckpt, sv_config, sv_host, sv_log, sv_static;
    std::optional<int> sv_port;
    sv->add_option("--config", sv_config, "key = value config file")->check(CLI::ExistingFile);
    sv->add_option("--dataset", sv_dataset, "dataset directory");
    sv->add_option("--ckpt", sv_ckpt, "model checkpoint");
    sv->add_option("--port", sv_port, "listen port")->check(CLI::Range(0, 65535));
    sv->add_option("--host", sv_host, "listen address");
    sv->add_option("--label-log", sv_log, "JSONL label event log");
    sv->add_option("--static-dir", sv_static, "static UI assets served under /");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*gen) {
            json overrides = json::object();
            if (!gen_config.empty()) {
                try {
                    overrides = json::parse(gen_config);
                } catch (const json::parse_error&) {
                    usage_error("--config: not valid JSON");
                }
                if (!overrides.is_object()) usage_error("--config: expected a JSON object");
            }
            if (gen_n) overrides["n_series"] = *gen_n;
            if (gen_len) overrides["length"] = *gen_len;
            Dataset ds;
            check(iad_dataset_generate(gen_kind.c_str(), gen_seed, overrides.dump().c_str(), &ds.h), "gen " + gen_kind);
            check(iad_dataset_save(ds.h, gen_out.c_str()), "writing " + gen_out);
            std::cerr << "wrote " << iad_dataset_size(ds.h) << " series to " << gen_out << "\n";
        } else if (*turbine) {
            Dataset ds;
            check(iad_dataset_ingest_turbine(tb_dir.c_str(), tb_window, &ds.h), "ingest turbine");
            check(iad_dataset_save(ds.h, tb_out.c_str()), "writing " + tb_out);
            std::cerr << "wrote " << iad_dataset_size(ds.h) << " series to " << tb_out << "\n";
        } else if (*train) {
            Dataset ds;
            load_dataset(tr_dataset, ds);
            json cfg = tr_flags.to_json();
            cfg["mode"] = tr_mode;
            cfg["seed"] = tr_seed;
            const std::size_t n = iad_dataset_size(ds.h);
            std::vector<size_t> tr_idx(n), te_idx(n);
            size_t n_tr = 0, n_te = 0;
            if (!tr_all) check(iad_dataset_split(ds.h, tr_seed, 0.7, tr_idx.data(), &n_tr, te_idx.data(), &n_te), "split");
            Model model;
            auto on_epoch = [](size_t epoch, double c, double a, double t, void*) {
                std::fprintf(stderr, "epoch %zu contrastive=%.4f adversarial=%.4f total=%.4f\n", epoch, c, a, t);
            };
            check(iad_train(ds.h, cfg.dump().c_str(), tr_all ? nullptr : tr_idx.data(), n_tr, on_epoch, nullptr, &model.h), "train");
            const fs::path out = tr_out;
            fs::create_directories(out);
            check(iad_model_save(model.h, (out / "model.ckpt").string().c_str()), "saving model");
            OwnedString log;
            check(iad_model_log_csv(model.h, &log.p), "training log");
            write_file(out / "training_log.csv", log.str());
            json split = {{"seed", tr_seed}, {"all", tr_all}};
            if (!tr_all) {
                split["train"] = std::vector<size_t>(tr_idx.begin(), tr_idx.begin() + static_cast<std::ptrdiff_t>(n_tr));
                split["test"] = std::vector<size_t>(te_idx.begin(), te_idx.begin() + static_cast<std::ptrdiff_t>(n_te));
            }
            write_file(out / "split.json", split.dump() + "\n");
        } else if (*embed) {
            Dataset ds;
            load_dataset(em_dataset, ds);
            Model model;
            check(iad_model_load(em_ckpt.c_str(), &model.h), "loading " + em_ckpt);
            const std::size_t n = iad_dataset_size(ds.h), d = iad_model_embed_dim(model.h);
            std::vector<double> e(n * d);
            check(iad_model_embed(model.h, ds.h, e.data(), e.size()), "embed");
            OwnedString info;
            check(iad_dataset_info(ds.h, &info.p), "dataset info");
            const auto ids = json::parse(info.str()).at("ids");
            std::string csv = "series_id";
            for (std::size_t k = 0; k < d; ++k) csv += ",e" + std::to_string(k);
            csv += '\n';
            for (std::size_t i = 0; i < n; ++i) {
                csv += ids[i].get<std::string>();
                for (std::size_t k = 0; k < d; ++k) csv += ',' + shortest(e[i * d + k]);
                csv += '\n';
            }
            write_file(fs::path(em_out) / "embeddings.csv", csv);
        } else if (*score) {
            if (sc_method == "knn" && sc_ckpt.empty()) usage_error("--ckpt is required for --method knn");
            Dataset ds;
            load_dataset(sc_dataset, ds);
            Model model;
            if (!sc_ckpt.empty()) check(iad_model_load(sc_ckpt.c_str(), &model.h), "loading " + sc_ckpt);
            const std::size_t n = iad_dataset_size(ds.h);
            std::vector<size_t> tr_idx(n), te_idx(n);
            size_t n_tr = 0, n_te = 0;
            if (!sc_all) check(iad_dataset_split(ds.h, sc_seed, 0.7, tr_idx.data(), &n_tr, te_idx.data(), &n_te), "split");
            std::vector<double> scores(n);
            const json options = {{"knn_k", sc_k}};
            check(iad_score(ds.h, sc_method.c_str(), model.h, sc_all ? nullptr : tr_idx.data(), n_tr, sc_seed, options.dump().c_str(),
                            scores.data()),
                  "score " + sc_method);
            OwnedString info;
            check(iad_dataset_info(ds.h, &info.p), "dataset info");
            const auto j = json::parse(info.str());
            std::vector<char> is_train(n, sc_all ? 1 : 0);
            for (size_t k = 0; k < n_tr; ++k) is_train[tr_idx[k]] = 1;
            std::string csv = j.contains("classes") ? "series_id,score,split,class\n" : "series_id,score,split\n";
            for (std::size_t i = 0; i < n; ++i) {
                csv += j["ids"][i].get<std::string>() + ',' + shortest(scores[i]) + ',' + (is_train[i] ? "train" : "test");
                if (j.contains("classes")) csv += ',' + std::to_string(j["classes"][i].get<int>());
                csv += '\n';
            }
            write_file(fs::path(sc_out) / "scores.csv", csv);
        } else if (*ev) {
            const auto methods = split_methods(ev_methods_raw);
            if (methods.empty()) usage_error("--methods: no methods given");
            for (const auto& m : methods) check_method(m);
            const auto seeds = parse_seeds(ev_seeds);
            Dataset ds;
            load_dataset(ev_dataset, ds);
            std::vector<std::string> docs;
            for (const auto& m : methods) docs.push_back(run_eval(ds, m, seeds, ev_flags.to_json(), json::object(), ev_jobs));
            write_reports(ev_out, docs, ev_metric);
        } else if (*ab) {
            const auto grid = parse_grid(ab_grid);
            const auto seeds = parse_seeds(ab_seeds);
            Dataset ds;
            load_dataset(ab_dataset, ds);
            std::vector<std::string> docs;
            for (double lambda : grid) {
                json options = ab_flags.to_json();
                options["lambda"] = lambda;
                docs.push_back(run_eval(ds, "envinv", seeds, options, {{"lambda", lambda}}, ab_jobs));
            }
            write_reports(ab_out, docs, "auroc");
        } else if (*render) {
            std::vector<std::string> docs;
            for (const auto& p : rp_inputs) docs.push_back(read_file(p));
            std::vector<const char*> ptrs;
            for (const auto& d : docs) ptrs.push_back(d.c_str());
            OwnedString merged, table;
            check(iad_reports_merge(ptrs.data(), ptrs.size(), &merged.p), "reading reports");
            check(iad_reports_table(merged.p, rp_metric.c_str(), &table.p), "rendering");
            if (rp_out.empty())
                std::cout << table.str();
            else
                write_file(rp_out, table.str());
        } else if (*sv) {
            json cfg = json::object();
            std::string dataset = sv_dataset, ckpt = sv_ckpt;
            if (!sv_config.empty()) {
                // config file first, flags override
                OwnedString text;
                const int rc = iad_serve_config_read(sv_config.c_str(), &text.p);
                if (rc == IAD_E_CONFIG) usage_error(sv_config + ": " + iad_last_error());
                check(rc, "reading " + sv_config);
                cfg = json::parse(text.str());
                if (dataset.empty() && cfg.contains("dataset")) dataset = cfg["dataset"].get<std::string>();
                if (ckpt.empty() && cfg.contains("checkpoint")) ckpt = cfg["checkpoint"].get<std::string>();
                cfg.erase("dataset");
                cfg.erase("checkpoint");
            }
            if (sv_port) cfg["port"] = *sv_port;
            if (!sv_host.empty()) cfg["host"] = sv_host;
            if (!sv_log.empty()) cfg["label_log"] = sv_log;
            if (!sv_static.empty()) cfg["static_dir"] = sv_static;
            if (dataset.empty()) usage_error("--dataset is required (flag or config file)");
            if (ckpt.empty()) usage_error("--ckpt is required (flag or config file)");
            Dataset ds;
            load_dataset(dataset, ds);
            Model model;
            check(iad_model_load(ckpt.c_str(), &model.h), "loading " + ckpt);
            iad_server* server = nullptr;
            check(iad_server_create(ds.h, model.h, cfg.dump().c_str(), &server), "serve");
            int port = 0;
            const int bound = iad_server_bind(server, &port);
            if (bound != IAD_OK) {
                iad_server_free(server);
                check(bound, "serve");
            }
            std::cerr << "listening on port " << port << std::endl;
            g_server = server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            const int rc = iad_server_run(server);
            g_server = nullptr;
            iad_server_free(server);
            check(rc, "serve");
        }
    } catch (const Failure& f) {
        std::cerr << "iad: " << f.message << "\n";
        return f.exit_code;
    } catch (const std::exception& e) {
        std::cerr << "iad: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
