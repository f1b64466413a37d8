/* SPDX-License-Identifier: Apache-2.0 */
#ifndef UEPPR_UEPPR_H
#define UEPPR_UEPPR_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define UEPPR_API __attribute__((visibility("default")))
#else
#define UEPPR_API
#endif

typedef enum ueppr_status {
    UEPPR_OK = 0,
    UEPPR_INVALID_ARGUMENT = 1,
    UEPPR_IO = 2,
    UEPPR_PARSE = 3,
    UEPPR_VERSION_MISMATCH = 4,
    UEPPR_DIVERGED = 5,
    UEPPR_NOT_FOUND = 6,
    UEPPR_INTERNAL = 99
} ueppr_status;

typedef struct ueppr_model ueppr_model;
typedef struct ueppr_index ueppr_index;
typedef struct ueppr_service ueppr_service;

/* Message for the last failing call on this thread; never NULL. */
UEPPR_API const char* ueppr_last_error(void);
UEPPR_API const char* ueppr_version(void);
/* Frees strings returned through char** out-parameters. */
UEPPR_API void ueppr_free_string(char* s);

/* Pipeline commands. `options_json` is a JSON object; `*out` receives a JSON
   summary (Markdown for ueppr_report) to be released with ueppr_free_string. */
UEPPR_API ueppr_status ueppr_synth(const char* options_json, char** out);
typedef void (*ueppr_log_fn)(const char* line, void* user);
UEPPR_API ueppr_status ueppr_train(const char* options_json, ueppr_log_fn log, void* user, char** out);
UEPPR_API ueppr_status ueppr_index_build(const char* options_json, char** out);
UEPPR_API ueppr_status ueppr_index_eval(const char* options_json, char** out);
UEPPR_API ueppr_status ueppr_tune_ann(const char* options_json, char** out);
UEPPR_API ueppr_status ueppr_tune_boost(const char* options_json, char** out);
UEPPR_API ueppr_status ueppr_eval(const char* options_json, char** out);
UEPPR_API ueppr_status ueppr_report(const char* options_json, char** out);

/* Models. */
UEPPR_API ueppr_status ueppr_model_load(const char* path, ueppr_model** out);
UEPPR_API void ueppr_model_free(ueppr_model* model);
/* Hex checkpoint hash; owned by the model. */
UEPPR_API const char* ueppr_model_version(const ueppr_model* model);
UEPPR_API size_t ueppr_model_dim(const ueppr_model* model);
/* Query-user tower output for a context JSON object (must contain "query"). */
UEPPR_API ueppr_status ueppr_model_embed_query(const ueppr_model* model, const char* context_json, float* out,
                                               size_t out_len);

/* Indexes. */
UEPPR_API ueppr_status ueppr_index_load(const char* path, ueppr_index** out);
UEPPR_API void ueppr_index_free(ueppr_index* index);
UEPPR_API size_t ueppr_index_size(const ueppr_index* index);
UEPPR_API size_t ueppr_index_dim(const ueppr_index* index);
/* Writes up to k results; *n_out receives the count. ef_search 0 keeps the
   stored value. */
UEPPR_API ueppr_status ueppr_index_knn(const ueppr_index* index, const float* query, size_t dim, size_t k,
                                       size_t ef_search, uint64_t* ids_out, double* scores_out, size_t* n_out);

/* Serving. `config_json` keys: strategy ("id_key" | "hashed_context_key"),
   ttl_seconds, capacity, ef_search, max_k. */
UEPPR_API ueppr_status ueppr_service_create(const char* index_path, const char* model_path, const char* weights_path,
                                            const char* config_json, ueppr_service** out);
UEPPR_API void ueppr_service_free(ueppr_service* service);
/* Request JSON in, response JSON out; *http_status gets 200, 400 or 500. */
UEPPR_API ueppr_status ueppr_service_search(ueppr_service* service, const char* request_json, int* http_status,
                                            char** out);
UEPPR_API ueppr_status ueppr_service_reload(ueppr_service* service, const char* index_path, const char* model_path,
                                            const char* weights_path);
UEPPR_API ueppr_status ueppr_service_metrics(const ueppr_service* service, char** out);
/* Binds the HTTP front end; *port_out receives the bound port (port 0 picks one). */
UEPPR_API ueppr_status ueppr_service_bind(ueppr_service* service, const char* host, int port, int* port_out);
/* Blocks serving HTTP until ueppr_service_stop. */
UEPPR_API ueppr_status ueppr_service_run(ueppr_service* service);
UEPPR_API void ueppr_service_stop(ueppr_service* service);

#ifdef __cplusplus
}
#endif

#endif
