// SPDX-License-Identifier: Apache-2.0
#include "ueppr/ueppr.h"

#include <cstring>
#include <memory>
#include <set>

#include <json.hpp>

#include "pipeline.hpp"
#include "serve.hpp"
#include "towers.hpp"

struct ueppr_model {
    ueppr::TwoTowerModel model;
    std::string version;
};

struct ueppr_index {
    ueppr::VectorIndex index;
};

struct ueppr_service {
    std::unique_ptr<ueppr::SearchService> service;
    std::unique_ptr<ueppr::HttpFrontend> http;
};

namespace {

thread_local std::string last_error;

template <class F>
ueppr_status guarded(F&& f) {
    try {
        f();
        last_error.clear();
        return UEPPR_OK;
    } catch (const ueppr::Error& e) {
        last_error = e.what();
        return static_cast<ueppr_status>(e.code());
    } catch (const std::bad_alloc&) {
        last_error = "out of memory";
        return UEPPR_INTERNAL;
    } catch (const std::exception& e) {
        last_error = e.what();
        return UEPPR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (!p) ueppr::fail(ueppr::ErrorCode::invalid_argument, std::string(what) + " must not be NULL");
}

char* dup(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

std::string str(const char* s) { return s ? s : ""; }

template <class Fn>
ueppr_status command(const char* options_json, char** out, Fn fn) {
    return guarded([&] {
        require(out, "out");
        *out = nullptr;
        *out = dup(fn(str(options_json)));
    });
}

ueppr::ServiceConfig service_config(const std::string& text) {
    ueppr::ServiceConfig cfg;
    if (text.empty()) return cfg;
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        ueppr::fail(ueppr::ErrorCode::parse, std::string("service config: ") + e.what());
    }
    if (!j.is_object()) ueppr::fail(ueppr::ErrorCode::parse, "service config must be a JSON object");
    static const std::set<std::string> known{"strategy", "ttl_seconds", "capacity", "ef_search", "max_k"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) ueppr::fail(ueppr::ErrorCode::invalid_argument, "service config: unknown key '" + key + "'");
    try {
        if (j.contains("strategy")) cfg.strategy = ueppr::parse_cache_strategy(j.at("strategy").get<std::string>());
        cfg.ttl_seconds = j.value("ttl_seconds", cfg.ttl_seconds);
        cfg.capacity = j.value("capacity", cfg.capacity);
        cfg.ef_search = j.value("ef_search", cfg.ef_search);
        cfg.max_k = j.value("max_k", cfg.max_k);
    } catch (const nlohmann::json::exception& e) {
        ueppr::fail(ueppr::ErrorCode::invalid_argument, std::string("service config: ") + e.what());
    }
    return cfg;
}

}  // namespace

extern "C" {

const char* ueppr_last_error(void) { return last_error.c_str(); }

const char* ueppr_version(void) { return "0.1.0"; }

void ueppr_free_string(char* s) { std::free(s); }

ueppr_status ueppr_synth(const char* o, char** out) { return command(o, out, ueppr::pipeline::synth); }

ueppr_status ueppr_train(const char* o, ueppr_log_fn log, void* user, char** out) {
    return command(o, out, [&](const std::string& opts) {
        std::function<void(const std::string&)> cb;
        if (log) cb = [&](const std::string& line) { log(line.c_str(), user); };
        return ueppr::pipeline::train(opts, cb);
    });
}

ueppr_status ueppr_index_build(const char* o, char** out) { return command(o, out, ueppr::pipeline::index_build); }
ueppr_status ueppr_index_eval(const char* o, char** out) { return command(o, out, ueppr::pipeline::index_eval); }
ueppr_status ueppr_tune_ann(const char* o, char** out) { return command(o, out, ueppr::pipeline::tune_ann); }
ueppr_status ueppr_tune_boost(const char* o, char** out) { return command(o, out, ueppr::pipeline::tune_boost); }
ueppr_status ueppr_eval(const char* o, char** out) { return command(o, out, ueppr::pipeline::eval); }
ueppr_status ueppr_report(const char* o, char** out) { return command(o, out, ueppr::pipeline::report); }

ueppr_status ueppr_model_load(const char* path, ueppr_model** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = nullptr;
        const std::string bytes = ueppr::read_file(path);
        *out = new ueppr_model{ueppr::TwoTowerModel::deserialize(bytes), ueppr::model_version_of(bytes)};
    });
}

void ueppr_model_free(ueppr_model* model) { delete model; }

const char* ueppr_model_version(const ueppr_model* model) { return model ? model->version.c_str() : ""; }

size_t ueppr_model_dim(const ueppr_model* model) { return model ? model->model.config().out_dim : 0; }

ueppr_status ueppr_model_embed_query(const ueppr_model* model, const char* context_json, float* out, size_t out_len) {
    return guarded([&] {
        require(model, "model");
        require(context_json, "context_json");
        require(out, "out");
        const auto v = ueppr::query_user_tower(model->model, ueppr::context_from_json(context_json));
        if (out_len != v.size())
            ueppr::fail(ueppr::ErrorCode::invalid_argument,
                        "output length " + std::to_string(out_len) + " != model dim " + std::to_string(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    });
}

ueppr_status ueppr_index_load(const char* path, ueppr_index** out) {
    return guarded([&] {
        require(path, "path");
        require(out, "out");
        *out = nullptr;
        *out = new ueppr_index{ueppr::VectorIndex::load(path)};
    });
}

void ueppr_index_free(ueppr_index* index) { delete index; }

size_t ueppr_index_size(const ueppr_index* index) { return index ? index->index.size() : 0; }

size_t ueppr_index_dim(const ueppr_index* index) { return index ? index->index.dim() : 0; }

ueppr_status ueppr_index_knn(const ueppr_index* index, const float* query, size_t dim, size_t k, size_t ef_search,
                             uint64_t* ids_out, double* scores_out, size_t* n_out) {
    return guarded([&] {
        require(index, "index");
        require(query, "query");
        require(n_out, "n_out");
        *n_out = 0;
        if (dim != index->index.dim())
            ueppr::fail(ueppr::ErrorCode::invalid_argument,
                        "query dim " + std::to_string(dim) + " != index dim " + std::to_string(index->index.dim()));
        const auto hits = index->index.knn(std::span<const float>(query, dim), k, ef_search);
        for (std::size_t i = 0; i < hits.size(); ++i) {
            if (ids_out) ids_out[i] = hits[i].id;
            if (scores_out) scores_out[i] = hits[i].score;
        }
        *n_out = hits.size();
    });
}

ueppr_status ueppr_service_create(const char* index_path, const char* model_path, const char* weights_path,
                                  const char* config_json, ueppr_service** out) {
    return guarded([&] {
        require(index_path, "index_path");
        require(model_path, "model_path");
        require(out, "out");
        *out = nullptr;
        auto snap = ueppr::load_snapshot(index_path, model_path, str(weights_path));
        auto svc = std::make_unique<ueppr_service>();
        svc->service = std::make_unique<ueppr::SearchService>(std::move(snap), service_config(str(config_json)));
        *out = svc.release();
    });
}

void ueppr_service_free(ueppr_service* service) {
    if (!service) return;
    if (service->http) service->http->stop();
    delete service;
}

ueppr_status ueppr_service_search(ueppr_service* service, const char* request_json, int* http_status, char** out) {
    return guarded([&] {
        require(service, "service");
        require(request_json, "request_json");
        require(out, "out");
        *out = nullptr;
        int status = 0;
        *out = dup(service->service->handle_json(request_json, status));
        if (http_status) *http_status = status;
    });
}

ueppr_status ueppr_service_reload(ueppr_service* service, const char* index_path, const char* model_path,
                                  const char* weights_path) {
    return guarded([&] {
        require(service, "service");
        require(index_path, "index_path");
        require(model_path, "model_path");
        service->service->reload(index_path, model_path, str(weights_path));
    });
}

ueppr_status ueppr_service_metrics(const ueppr_service* service, char** out) {
    return guarded([&] {
        require(service, "service");
        require(out, "out");
        *out = dup(service->service->metrics_text());
    });
}

ueppr_status ueppr_service_bind(ueppr_service* service, const char* host, int port, int* port_out) {
    return guarded([&] {
        require(service, "service");
        if (!service->http) service->http = std::make_unique<ueppr::HttpFrontend>(*service->service);
        const int bound = service->http->bind(host ? host : "127.0.0.1", port);
        if (port_out) *port_out = bound;
    });
}

ueppr_status ueppr_service_run(ueppr_service* service) {
    return guarded([&] {
        require(service, "service");
        if (!service->http) ueppr::fail(ueppr::ErrorCode::invalid_argument, "call ueppr_service_bind first");
        service->http->run();
    });
}

void ueppr_service_stop(ueppr_service* service) {
    if (service && service->http) service->http->stop();
}

}  // extern "C"
