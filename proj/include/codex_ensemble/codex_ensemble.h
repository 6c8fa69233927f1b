#ifndef CODEX_ENSEMBLE_H
#define CODEX_ENSEMBLE_H

/* C API for the codex-ensemble coding pipeline. All functions are
 * synchronous. Failures return CDX_ERROR and leave a thread-local message
 * retrievable via cdx_last_error / cdx_last_error_class until the next
 * failing call on the same thread. */

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CDX_API __declspec(dllexport)
#else
#define CDX_API __attribute__((visibility("default")))
#endif

typedef struct cdx_pipeline cdx_pipeline;

typedef enum cdx_status {
  CDX_OK = 0,
  CDX_ERROR = 1,       /* domain failure; see cdx_last_error */
  CDX_BAD_ARGUMENT = 2 /* null handle or required pointer */
} cdx_status;

/* Library version string, e.g. "1.0.0". Static storage; do not free. */
CDX_API const char* cdx_version(void);

/* Opens a pipeline for the given JSON config file and acquires the work-dir
 * lock. At most one open pipeline per work dir. On failure *out is null. */
CDX_API cdx_status cdx_pipeline_open(const char* config_path,
                                     cdx_pipeline** out);

/* Releases the lock and frees the handle. Null is a no-op. */
CDX_API void cdx_pipeline_close(cdx_pipeline* p);

/* Synthetic corpus + generator tables + stats report. */
CDX_API cdx_status cdx_run_synth(cdx_pipeline* p);

/* Vocabulary, split manifest, fitted encoder, feature matrices. */
CDX_API cdx_status cdx_run_prepare(cdx_pipeline* p);

/* parts: comma-separated subset of "nets,ensemble,combined,confidence", or
 * null/empty to train everything the config enables. */
CDX_API cdx_status cdx_run_train(cdx_pipeline* p, const char* parts);

/* subsets: comma-separated list of '+'-joined modality subsets overriding
 * the configured ablation list, or null to use the config. */
CDX_API cdx_status cdx_run_evaluate(cdx_pipeline* p, const char* subsets);

/* Confidence-ranked data-scope table. Requires a trained confidence model. */
CDX_API cdx_status cdx_run_scope_report(cdx_pipeline* p);

/* Scores a JSONL episode file; writes one JSON record per line. */
CDX_API cdx_status cdx_run_predict(cdx_pipeline* p, const char* input_path,
                                   const char* output_path);

/* "<ErrorClass>: detail" for the most recent failure on this thread, or ""
 * if none. Static storage; valid until the next failing call. */
CDX_API const char* cdx_last_error(void);

/* Error class name of the most recent failure, e.g. "BadConfig". */
CDX_API const char* cdx_last_error_class(void);

#ifdef __cplusplus
}
#endif

#endif /* CODEX_ENSEMBLE_H */
