#ifndef IAD_IAD_H
#define IAD_IAD_H

/* C interface to the intrinsic anomaly detection toolkit.
 *
 * Every fallible call returns an iad_status; on failure the message is
 * available from iad_last_error() on the calling thread until the next call.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with iad_string_free. Handles are released with their _free call;
 * passing NULL to any _free function is a no-op. */

#include <stddef.h>
#include <stdint.h>

#if defined(IAD_BUILDING_LIBRARY)
#define IAD_API __attribute__((visibility("default")))
#else
#define IAD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum iad_status {
    IAD_OK = 0,
    IAD_E_ARGUMENT = 1,
    IAD_E_RANGE = 2,
    IAD_E_PARSE = 3,
    IAD_E_CONFIG = 4,
    IAD_E_SHAPE = 5,
    IAD_E_STATE = 6,
    IAD_E_IO = 7,
    IAD_E_TRAINING = 8,
    IAD_E_METRIC = 9,
    IAD_E_INGEST = 10,
    IAD_E_SAMPLING = 11,
    IAD_E_CONSISTENCY = 12,
    IAD_E_NOT_FOUND = 13,
    IAD_E_CONFLICT = 14,
    IAD_E_INTERNAL = 15
} iad_status;

typedef struct iad_dataset iad_dataset;
typedef struct iad_model iad_model;
typedef struct iad_server iad_server;

typedef void (*iad_epoch_fn)(size_t epoch, double contrastive, double adversarial, double total, void* user);
typedef void (*iad_progress_fn)(const char* message, void* user);

IAD_API const char* iad_version(void);
IAD_API const char* iad_last_error(void);
IAD_API const char* iad_status_name(int status);
IAD_API void iad_string_free(char* s);

/* datasets */

/* kind is "synthetic" or "pendulum"; overrides_json may be NULL or a JSON object of config fields. */
IAD_API int iad_dataset_generate(const char* kind, uint64_t seed, const char* overrides_json, iad_dataset** out);
IAD_API int iad_dataset_load(const char* dir, iad_dataset** out);
/* window 0 keeps one series per turbine. */
IAD_API int iad_dataset_ingest_turbine(const char* dir, size_t window, iad_dataset** out);
IAD_API int iad_dataset_save(const iad_dataset* ds, const char* dir);
IAD_API size_t iad_dataset_size(const iad_dataset* ds);
/* manifest fields plus series ids and, when labelled, per-series classes */
IAD_API int iad_dataset_info(const iad_dataset* ds, char** out_json);
IAD_API void iad_dataset_free(iad_dataset* ds);

/* Stratified split. Both arrays need room for iad_dataset_size entries. */
IAD_API int iad_dataset_split(const iad_dataset* ds, uint64_t seed, double train_frac, size_t* train, size_t* n_train,
                              size_t* test, size_t* n_test);

/* models */

/* config_json: training fields (mode, lambda, epochs, batch, lr, seed, ...); may be NULL for defaults.
 * train_index may be NULL to use every series. on_epoch may be NULL. */
IAD_API int iad_train(const iad_dataset* ds, const char* config_json, const size_t* train_index, size_t n_train,
                      iad_epoch_fn on_epoch, void* user, iad_model** out);
IAD_API int iad_model_load(const char* path, iad_model** out);
IAD_API int iad_model_save(const iad_model* model, const char* path);
IAD_API size_t iad_model_embed_dim(const iad_model* model);
IAD_API int iad_model_meta(const iad_model* model, char** out_json);
IAD_API int iad_model_log_csv(const iad_model* model, char** out_csv);
/* Row-major n_series x embed_dim; `capacity` counts doubles. */
IAD_API int iad_model_embed(const iad_model* model, const iad_dataset* ds, double* out, size_t capacity);
IAD_API void iad_model_free(iad_model* model);

/* scoring */

/* method: resthresh, iforest, lof, iforest-res, lof-res or knn (needs a model and labels).
 * Detectors are fitted on the given training rows (NULL = all series) and every series is scored.
 * `scores` needs room for iad_dataset_size entries. */
IAD_API int iad_score(const iad_dataset* ds, const char* method, const iad_model* model, const size_t* train_index,
                      size_t n_train, uint64_t seed, const char* options_json, double* scores);

/* evaluation */

IAD_API int iad_method_check(const char* method);
/* Report JSON {"reports":[...]} for one method over the seeds; params_json is stored in the report (may be NULL). */
IAD_API int iad_evaluate(const iad_dataset* ds, const char* method, const uint64_t* seeds, size_t n_seeds,
                         const char* options_json, const char* params_json, size_t jobs, iad_progress_fn progress, void* user,
                         char** out_json);
/* Concatenates the "reports" arrays of several report documents. */
IAD_API int iad_reports_merge(const char* const* documents, size_t n, char** out_json);
IAD_API int iad_reports_csv(const char* reports_json, char** out_csv);
IAD_API int iad_reports_table(const char* reports_json, const char* metric, char** out_table);

/* serving */

/* Reads a `key = value` serve config file into JSON (host, port, threads, dataset, checkpoint, label_log, static_dir). */
IAD_API int iad_serve_config_read(const char* path, char** out_json);
/* Takes a copy of the dataset; embeddings come from the model. config_json fields: host, port,
 * label_log, static_dir, threads. */
IAD_API int iad_server_create(const iad_dataset* ds, const iad_model* model, const char* config_json, iad_server** out);
/* Fills the bound port (config port 0 picks a free one). */
IAD_API int iad_server_bind(iad_server* server, int* port);
/* Blocks until iad_server_stop. */
IAD_API int iad_server_run(iad_server* server);
IAD_API void iad_server_stop(iad_server* server);
/* Calls the request router directly: method "GET"/"POST", target may carry a query string. */
IAD_API int iad_server_request(iad_server* server, const char* method, const char* target, const char* body, int* http_status,
                               char** out_body);
IAD_API void iad_server_free(iad_server* server);

#ifdef __cplusplus
}
#endif

#endif
