// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through the C API.
#include <csignal>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ueppr/ueppr.h"

using nlohmann::json;

namespace {

// Flags that were actually given, keyed by their JSON option name.
class OptionSet {
public:
    explicit OptionSet(CLI::App* app) : app_(app) {}

    template <class T>
    CLI::Option* add(const std::string& flag, const std::string& key, const std::string& help) {
        auto value = std::make_shared<T>();
        CLI::Option* opt = app_->add_option(flag, *value, help);
        setters_.push_back([=](json& j) {
            if (opt->count()) j[key] = *value;
        });
        return opt;
    }

    CLI::Option* path(const std::string& flag, const std::string& key, const std::string& help, bool required) {
        auto* opt = add<std::string>(flag, key, help);
        if (required) opt->required();
        return opt;
    }

    CLI::Option* flag(const std::string& flag, const std::string& key, bool value_when_set, const std::string& help) {
        CLI::Option* opt = app_->add_flag(flag, help);
        setters_.push_back([=](json& j) {
            if (opt->count()) j[key] = value_when_set;
        });
        return opt;
    }

    std::string json_text() const {
        json j = json::object();
        for (const auto& s : setters_) s(j);
        return j.dump();
    }

private:
    CLI::App* app_;
    std::vector<std::function<void(json&)>> setters_;
};

int report_status(ueppr_status st) {
    if (st == UEPPR_OK) return 0;
    std::fprintf(stderr, "error: %s\n", ueppr_last_error());
    return 1;
}

int run_command(ueppr_status (*fn)(const char*, char**), const OptionSet& opts) {
    char* out = nullptr;
    const ueppr_status st = fn(opts.json_text().c_str(), &out);
    if (st == UEPPR_OK && out) {
        std::fputs(out, stdout);
        if (*out && out[std::strlen(out) - 1] != '\n') std::fputc('\n', stdout);
    }
    ueppr_free_string(out);
    return report_status(st);
}

void dataset_flags(OptionSet& o) {
    o.path("--products", "products", "Product catalog (JSON lines)", true);
    o.path("--log", "log", "Interaction log (JSON lines)", true);
    o.add<long long>("--cutoff", "cutoff", "Train/eval cutoff timestamp (default: last sixth of the log)");
    o.add<unsigned>("--graph-min-count", "graph_min_count", "Minimum count for query-product graph edges");
}

ueppr_service* g_service = nullptr;

void on_signal(int) {
    if (g_service) ueppr_service_stop(g_service);
}

struct ServeFlags {
    std::string index, model, weights, strategy = "hashed_context_key", host = "127.0.0.1";
    double ttl = 300;
    std::size_t capacity = 10000, ef = 0, max_k = 1000;
    int port = 8080;
};

int serve(const ServeFlags& f) {
    const json cfg{{"strategy", f.strategy}, {"ttl_seconds", f.ttl}, {"capacity", f.capacity},
                   {"ef_search", f.ef}, {"max_k", f.max_k}};
    ueppr_service* svc = nullptr;
    ueppr_status st = ueppr_service_create(f.index.c_str(), f.model.c_str(), f.weights.empty() ? nullptr : f.weights.c_str(),
                                           cfg.dump().c_str(), &svc);
    if (st != UEPPR_OK) return report_status(st);
    int port = 0;
    st = ueppr_service_bind(svc, f.host.c_str(), f.port, &port);
    if (st != UEPPR_OK) {
        ueppr_service_free(svc);
        return report_status(st);
    }
    g_service = svc;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::fprintf(stderr, "listening on %s:%d\n", f.host.c_str(), port);
    st = ueppr_service_run(svc);
    g_service = nullptr;
    ueppr_service_free(svc);
    return report_status(st);
}

void print_log(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unified embedding retrieval: synthesis, training, indexing, boosting, serving and evaluation"};
    app.require_subcommand(1);
    std::function<int()> action;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic catalog and interaction log");
    OptionSet synth_o(synth);
    synth_o.add<unsigned long long>("--seed", "seed", "Random seed");
    synth_o.add<std::size_t>("--n-products", "n_products", "Number of products");
    synth_o.add<std::size_t>("--n-queries", "n_queries", "Number of distinct query intents");
    synth_o.add<std::size_t>("--n-users", "n_users", "Number of users");
    synth_o.add<std::size_t>("--n-interactions", "n_interactions", "Number of interactions (0: 20 per user)");
    synth_o.add<double>("--quality-effect", "quality_effect", "Weight of latent quality on choice (0: control corpus)");
    synth_o.add<double>("--location-affinity", "location_affinity", "Distance penalty per 1000 km");
    synth_o.add<double>("--zipf", "zipf_exponent", "Zipf exponent of query popularity");
    synth_o.add<double>("--occasion-share", "occasion_share", "Share of gift/occasion searches");
    synth_o.add<double>("--color-share", "color_share", "Share of concept searches naming a color");
    synth_o.add<int>("--days", "days", "Days covered by the log");
    synth_o.add<int>("--eval-days", "eval_days", "Trailing days reserved for evaluation");
    synth_o.path("--out-products", "out_products", "Output catalog path", true);
    synth_o.path("--out-log", "out_log", "Output log path", true);
    synth->callback([&] { action = [&] { return run_command(ueppr_synth, synth_o); }; });

    auto* train = app.add_subcommand("train", "Train the two-tower model");
    OptionSet train_o(train);
    train_o.path("--products", "products", "Product catalog (JSON lines)", true);
    train_o.path("--log", "log", "Interaction log (JSON lines)", true);
    train_o.add<long long>("--cutoff", "cutoff", "Train/eval cutoff timestamp");
    train_o.path("--config", "config", "Training config JSON", false);
    train_o.path("--out", "out_model", "Output checkpoint path", true);
    train_o.path("--metrics", "metrics", "Per-epoch metrics CSV", false);
    train_o.add<std::size_t>("--epochs", "epochs", "Override epochs");
    train_o.add<unsigned long long>("--seed", "seed", "Override seed");
    train_o.add<std::size_t>("--batch-size", "batch_size", "Override batch size");
    train_o.add<double>("--lr", "lr", "Override learning rate");
    train_o.add<std::vector<std::size_t>>("--k", "eval_ks", "Recall@K cutoffs tracked per epoch (repeatable)");
    train_o.flag("--no-eval", "evaluate", false, "Skip per-epoch recall");
    bool quiet = false;
    train->add_flag("--quiet", quiet, "Do not print per-epoch progress");
    train->callback([&] {
        action = [&] {
            char* out = nullptr;
            const ueppr_status st = ueppr_train(train_o.json_text().c_str(), quiet ? nullptr : print_log, nullptr, &out);
            if (st == UEPPR_OK) std::printf("%s\n", out);
            ueppr_free_string(out);
            return report_status(st);
        };
    });

    auto* index = app.add_subcommand("index", "Build or evaluate a vector index");
    index->require_subcommand(1);
    auto* build = index->add_subcommand("build", "Embed the catalog and build an index");
    OptionSet build_o(build);
    build_o.path("--model", "model", "Model checkpoint", true);
    dataset_flags(build_o);
    build_o.add<std::string>("--kind", "kind", "exact | hnsw | quantized")->check(CLI::IsMember({"exact", "hnsw", "quantized"}));
    build_o.add<std::size_t>("--m", "m", "HNSW links per node");
    build_o.add<std::size_t>("--efc", "efc", "HNSW ef_construction");
    build_o.add<std::size_t>("--ef", "ef", "HNSW ef_search stored in the index");
    build_o.add<unsigned>("--bits", "bits", "Quantization bits");
    build_o.add<std::size_t>("--rerank", "rerank", "Re-ranking factor for quantized search");
    build_o.path("--boost-weights", "boost_weights", "Hydrate product vectors with these boost weights", false);
    build_o.add<unsigned long long>("--seed", "seed", "HNSW level seed");
    build_o.path("--out", "out", "Output index path", true);
    build->callback([&] { action = [&] { return run_command(ueppr_index_build, build_o); }; });

    auto* ieval = index->add_subcommand("eval", "Recall loss of an index against an exact one");
    OptionSet ieval_o(ieval);
    ieval_o.path("--index", "index", "Index under test", true);
    ieval_o.path("--exact", "exact", "Exact index from the same model", true);
    ieval_o.path("--model", "model", "Model checkpoint", true);
    ieval_o.path("--log", "log", "Interaction log", true);
    ieval_o.add<long long>("--cutoff", "cutoff", "Train/eval cutoff timestamp");
    ieval_o.add<std::size_t>("--k", "k", "Recall cutoff");
    ieval_o.add<std::size_t>("--ef", "ef", "ef_search override");
    ieval_o.path("--boost-weights", "boost_weights", "Boost weights used to build both indexes", false);
    ieval->callback([&] { action = [&] { return run_command(ueppr_index_eval, ieval_o); }; });

    auto* tann = app.add_subcommand("tune-ann", "Black-box search over index parameters");
    OptionSet tann_o(tann);
    tann_o.path("--model", "model", "Model checkpoint", true);
    dataset_flags(tann_o);
    tann_o.add<std::string>("--kind", "kind", "hnsw | quantized")->check(CLI::IsMember({"hnsw", "quantized"}));
    tann_o.add<std::size_t>("--k", "k", "Recall cutoff");
    tann_o.add<std::size_t>("--budget", "budget", "Number of trials");
    tann_o.add<unsigned long long>("--seed", "seed", "Search seed");
    tann_o.add<double>("--latency-ceiling", "latency_ceiling_ms", "Mean query latency ceiling (ms)");
    tann_o.path("--boost-weights", "boost_weights", "Tune on hydrated vectors", false);
    tann_o.path("--out", "out", "Write the result JSON here", false);
    tann->callback([&] { action = [&] { return run_command(ueppr_tune_ann, tann_o); }; });

    // Available both as `tune-boost` and `boost tune`.
    auto add_boost_flags = [](OptionSet& o) {
        o.path("--model", "model", "Model checkpoint", true);
        dataset_flags(o);
        o.add<std::size_t>("--k", "k", "Recall cutoff");
        o.add<std::size_t>("--budget", "budget", "Number of trials");
        o.add<double>("--lo", "lo", "Lower weight bound");
        o.add<double>("--hi", "hi", "Upper weight bound");
        o.add<unsigned long long>("--seed", "seed", "Search and split seed");
        o.add<double>("--holdout-fraction", "holdout_fraction", "Share of eval queries held out");
        o.path("--out", "out", "Output weights path", true);
    };
    auto* tboost = app.add_subcommand("tune-boost", "Fit quality boost weights");
    OptionSet tboost_o(tboost);
    add_boost_flags(tboost_o);
    tboost->callback([&] { action = [&] { return run_command(ueppr_tune_boost, tboost_o); }; });
    auto* boost = app.add_subcommand("boost", "Quality boosting");
    boost->require_subcommand(1);
    auto* btune = boost->add_subcommand("tune", "Fit quality boost weights");
    OptionSet btune_o(btune);
    add_boost_flags(btune_o);
    btune->callback([&] { action = [&] { return run_command(ueppr_tune_boost, btune_o); }; });

    auto* ev = app.add_subcommand("eval", "Recall@K per query segment");
    OptionSet ev_o(ev);
    ev_o.path("--model", "model", "Model checkpoint", true);
    ev_o.path("--index", "index", "Index built from the model", true);
    ev_o.path("--log", "log", "Interaction log", true);
    ev_o.add<long long>("--cutoff", "cutoff", "Train/eval cutoff timestamp");
    ev_o.add<std::vector<std::size_t>>("--k", "ks", "Recall cutoffs (repeatable; default 10 and 100)");
    ev_o.path("--boost-weights", "boost_weights", "Boost weights the index was built with", false);
    ev_o.add<double>("--head-fraction", "head_fraction", "Share of most frequent queries labelled head");
    ev_o.add<double>("--tail-fraction", "tail_fraction", "Share of least frequent queries labelled tail");
    ev_o.add<std::string>("--label", "label", "Method label for reports");
    ev_o.add<std::size_t>("--ef", "ef", "ef_search override");
    ev_o.path("--out", "out", "Write the report JSON here", false);
    ev_o.path("--markdown", "markdown", "Write the report Markdown here", false);
    ev->callback([&] { action = [&] { return run_command(ueppr_eval, ev_o); }; });

    auto* srv = app.add_subcommand("serve", "Serve retrieval over HTTP");
    ServeFlags sf;
    srv->add_option("--index", sf.index, "Index file")->required();
    srv->add_option("--model", sf.model, "Model checkpoint")->required();
    srv->add_option("--boost-weights", sf.weights, "Boost weights file");
    srv->add_option("--cache-strategy", sf.strategy, "id_key | hashed_context_key")
        ->check(CLI::IsMember({"id_key", "hashed_context_key"}));
    srv->add_option("--ttl", sf.ttl, "Cache TTL in seconds");
    srv->add_option("--capacity", sf.capacity, "Cache entries");
    srv->add_option("--ef", sf.ef, "ef_search override");
    srv->add_option("--max-k", sf.max_k, "Largest accepted k");
    srv->add_option("--host", sf.host, "Bind address");
    srv->add_option("--port", sf.port, "Port (0 picks a free one)");
    srv->callback([&] { action = [&] { return serve(sf); }; });

    auto* rep = app.add_subcommand("report", "Render Markdown tables from report JSON files");
    OptionSet rep_o(rep);
    rep_o.add<std::vector<std::string>>("--input,inputs", "inputs", "Report JSON files")->required();
    rep_o.add<std::vector<std::string>>("--label", "labels", "Row labels, one per input");
    rep_o.add<std::string>("--layout", "layout", "segments | ablation")->check(CLI::IsMember({"segments", "ablation"}));
    rep_o.path("--out", "out", "Write the Markdown here", false);
    rep->callback([&] { action = [&] { return run_command(ueppr_report, rep_o); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n";
        const CLI::App* sub = &app;
        while (!sub->get_subcommands().empty()) sub = sub->get_subcommands().front();
        std::cerr << sub->help();
        return 2;
    }
    return action ? action() : 2;
}
