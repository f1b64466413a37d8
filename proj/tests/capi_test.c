/* SPDX-License-Identifier: Apache-2.0 */
/* Exercises the C API from plain C. */
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "ueppr/ueppr.h"

static int failures = 0;

#define EXPECT(cond)                                                          \
    do {                                                                      \
        if (!(cond)) {                                                        \
            fprintf(stderr, "%s:%d: expected %s (%s)\n", __FILE__, __LINE__, #cond, \
                    ueppr_last_error());                                      \
            ++failures;                                                       \
        }                                                                     \
    } while (0)

static int ok(ueppr_status st) {
    if (st != UEPPR_OK) fprintf(stderr, "status %d: %s\n", (int)st, ueppr_last_error());
    return st == UEPPR_OK;
}

int main(void) {
    char* out = NULL;

    EXPECT(ueppr_synth("{not json", &out) == UEPPR_PARSE);
    EXPECT(out == NULL);
    EXPECT(strlen(ueppr_last_error()) > 0);
    EXPECT(ueppr_synth("{\"seed\": 1, \"colour\": 2, \"out_products\": \"x.jsonl\", \"out_log\": \"y.jsonl\"}", &out) ==
           UEPPR_INVALID_ARGUMENT);
    EXPECT(strstr(ueppr_last_error(), "colour") != NULL);
    EXPECT(ueppr_synth("{}", NULL) == UEPPR_INVALID_ARGUMENT);

    EXPECT(ok(ueppr_synth("{\"seed\": 3, \"n_products\": 150, \"n_queries\": 40, \"n_users\": 40,"
                          " \"out_products\": \"capi_p.jsonl\", \"out_log\": \"capi_l.jsonl\"}",
                          &out)));
    EXPECT(out && strstr(out, "\"products\":150"));
    ueppr_free_string(out);

    EXPECT(ok(ueppr_train("{\"products\": \"capi_p.jsonl\", \"log\": \"capi_l.jsonl\", \"epochs\": 1,"
                          " \"out_model\": \"capi_m.bin\"}",
                          NULL, NULL, &out)));
    ueppr_free_string(out);
    EXPECT(ok(ueppr_index_build("{\"model\": \"capi_m.bin\", \"products\": \"capi_p.jsonl\", \"log\": \"capi_l.jsonl\","
                                " \"kind\": \"exact\", \"out\": \"capi.idx\"}",
                                &out)));
    ueppr_free_string(out);

    ueppr_model* model = NULL;
    ueppr_index* index = NULL;
    EXPECT(ueppr_model_load("no/such/file", &model) == UEPPR_IO);
    EXPECT(model == NULL);
    EXPECT(ok(ueppr_model_load("capi_m.bin", &model)));
    EXPECT(ok(ueppr_index_load("capi.idx", &index)));
    EXPECT(ueppr_index_size(index) == 150);
    const size_t dim = ueppr_model_dim(model);
    EXPECT(dim == ueppr_index_dim(index));
    EXPECT(strlen(ueppr_model_version(model)) == 16);

    float* q = calloc(dim, sizeof(float));
    EXPECT(ok(ueppr_model_embed_query(model, "{\"query\": \"gift\"}", q, dim)));
    EXPECT(ueppr_model_embed_query(model, "{\"query\": \"gift\"}", q, dim + 1) == UEPPR_INVALID_ARGUMENT);
    uint64_t ids[10];
    double scores[10];
    size_t n = 0;
    EXPECT(ok(ueppr_index_knn(index, q, dim, 10, 0, ids, scores, &n)));
    EXPECT(n == 10);
    for (size_t i = 1; i < n; ++i) EXPECT(scores[i] <= scores[i - 1]);
    EXPECT(ueppr_index_knn(index, q, dim - 1, 10, 0, ids, scores, &n) == UEPPR_INVALID_ARGUMENT);

    ueppr_service* svc = NULL;
    EXPECT(ueppr_service_create("capi.idx", "capi_m.bin", NULL, "{\"ttl\": 3}", &svc) == UEPPR_INVALID_ARGUMENT);
    EXPECT(ok(ueppr_service_create("capi.idx", "capi_m.bin", NULL, "{\"strategy\": \"id_key\", \"ttl_seconds\": 60}", &svc)));
    int status = 0;
    EXPECT(ok(ueppr_service_search(svc, "{\"query\": \"gift\", \"k\": 10}", &status, &out)));
    EXPECT(status == 200);
    EXPECT(out && strstr(out, "\"served_from_cache\":false"));
    EXPECT(out && strstr(out, ueppr_model_version(model)));
    ueppr_free_string(out);
    EXPECT(ok(ueppr_service_search(svc, "{\"query\": \"gift\", \"k\": 10}", &status, &out)));
    EXPECT(out && strstr(out, "\"served_from_cache\":true"));
    ueppr_free_string(out);
    EXPECT(ok(ueppr_service_search(svc, "{\"k\": 10}", &status, &out)));
    EXPECT(status == 400);
    ueppr_free_string(out);
    EXPECT(ok(ueppr_service_metrics(svc, &out)));
    EXPECT(out && strstr(out, "requests 2\n"));
    EXPECT(out && strstr(out, "errors 1\n"));
    ueppr_free_string(out);
    EXPECT(ok(ueppr_service_reload(svc, "capi.idx", "capi_m.bin", NULL)));
    EXPECT(ueppr_service_reload(svc, "capi.idx", "capi_p.jsonl", NULL) != UEPPR_OK);
    EXPECT(ueppr_service_run(svc) == UEPPR_INVALID_ARGUMENT);

    ueppr_service_free(svc);
    ueppr_index_free(index);
    ueppr_model_free(model);
    free(q);
    remove("capi_p.jsonl");
    remove("capi_l.jsonl");
    remove("capi_m.bin");
    remove("capi.idx");
    if (failures) fprintf(stderr, "%d failures\n", failures);
    return failures ? 1 : 0;
}
