/* C interface to the multi-granularity vision-language training library.
 *
 * Every function returns a umg_status; UMG_OK means success. On failure the
 * out-parameters are left untouched and umg_last_error() returns a
 * thread-local description of what went wrong. Strings returned through
 * char** out-parameters are heap-allocated and must be released with
 * umg_string_free(); handles must be released with their matching *_free().
 */
#ifndef UMG_CAPI_H
#define UMG_CAPI_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum umg_status {
    UMG_OK = 0,
    UMG_ERR_SHAPE = 1,    /* tensor shape mismatch */
    UMG_ERR_NUMERIC = 2,  /* non-finite value produced */
    UMG_ERR_CONTRACT = 3, /* precondition violated by the caller */
    UMG_ERR_STATE = 4,    /* object used in an invalid order */
    UMG_ERR_FORMAT = 5,   /* malformed file or config */
    UMG_ERR_IO = 6,       /* filesystem failure */
    UMG_ERR_ARGUMENT = 7, /* null pointer argument */
    UMG_ERR_UNKNOWN = 8
} umg_status;

/* Thread-local message of the most recent failing call; never NULL. */
const char* umg_last_error(void);

const char* umg_version(void);

void umg_string_free(char* s);

/* Run configuration ----------------------------------------------------- */

typedef struct umg_config umg_config;

/* mode is "pretrain" or "adapt"; fills in mode-specific defaults. */
umg_status umg_config_create(const char* mode, umg_config** out);
/* Parses a JSON config; unknown keys are rejected. */
umg_status umg_config_parse(const char* json_text, umg_config** out);
umg_status umg_config_load(const char* path, umg_config** out);
umg_status umg_config_to_json(const umg_config* cfg, char** out_json);
void umg_config_free(umg_config* cfg);

/* Synthetic corpus ------------------------------------------------------- */

/* Renders a deterministic scene corpus into out_dir (records.jsonl +
 * images.bin). held_out_only selects the evaluation label split; shifted
 * selects the adaptation visual domain. */
umg_status umg_gen_corpus(uint64_t seed, int n_images, int max_regions, int held_out_only,
                          int shifted, const char* out_dir);

/* Training and evaluation ------------------------------------------------ */

/* Runs the full training loop described by cfg (pretrain or adapt). Scenes
 * are read from corpus_dir; pass NULL to generate them from the config's
 * data section and seed. Writes metrics.jsonl and checkpoint.umg into the
 * config's out_dir and returns a JSON summary (final losses, checkpoint
 * path). */
umg_status umg_train(const umg_config* cfg, const char* corpus_dir, char** out_summary_json);

typedef struct umg_model umg_model;

/* Loads a checkpoint under the given config; the architecture digest must
 * match. */
umg_status umg_model_load(const umg_config* cfg, const char* checkpoint_path, umg_model** out);
void umg_model_free(umg_model* model);

/* Retrieval and zero-shot tag metrics on a scene corpus; pass corpus_dir =
 * NULL to generate the config's held-out evaluation split. */
umg_status umg_model_evaluate(umg_model* model, const umg_config* cfg, const char* corpus_dir,
                              char** out_metrics_json);

/* Annotation pipeline ---------------------------------------------------- */

/* Runs confidence filtering, class-agnostic NMS and caption dedup over a
 * JSONL record file. With use_box_oracle nonzero, regions are additionally
 * scored for jitter stability against a filled-box mask oracle and pruned
 * below stability_threshold. */
umg_status umg_annotate(const char* in_jsonl, const char* out_jsonl, double confidence,
                        double nms_iou, double stability_threshold, int use_box_oracle);

/* Corpus statistics (counts, area buckets, caption lengths) as JSON. */
umg_status umg_corpus_stats(const char* in_jsonl, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* UMG_CAPI_H */
