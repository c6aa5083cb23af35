/* C API of the lsta shared library: opaque handles and status codes over the
 * dataset generator, trainer, evaluator and reporting tools. Every function
 * returns LSTA_OK or an error code; lsta_last_error() describes the most
 * recent failure on the calling thread. */
#ifndef LSTA_H
#define LSTA_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lsta_status {
  LSTA_OK = 0,
  LSTA_ERR_ARGUMENT = 1, /* invalid configuration, arguments or file contents */
  LSTA_ERR_IO = 2,       /* filesystem failures */
  LSTA_ERR_RUNTIME = 3,  /* failures while running (non-finite loss, ...) */
} lsta_status;

const char* lsta_version(void);
/* Message of the last failure on this thread; empty string if none. */
const char* lsta_last_error(void);

typedef struct lsta_dataset lsta_dataset;
typedef struct lsta_model lsta_model;

/* config_json: full configuration document (may be "{}"); see the README for
 * the schema. Produces the train and test splits. */
lsta_status lsta_dataset_generate(const char* config_json, lsta_dataset** train_out,
                                  lsta_dataset** test_out);
lsta_status lsta_dataset_read(const char* path, lsta_dataset** out);
lsta_status lsta_dataset_write(const lsta_dataset* ds, const char* path);
int64_t lsta_dataset_size(const lsta_dataset* ds);
void lsta_dataset_free(lsta_dataset* ds);

/* Trains the variant selected by the configuration. On success the caller
 * owns *model_out and the metrics JSON in *metrics_json_out. */
lsta_status lsta_train(const char* config_json, const lsta_dataset* train_set,
                       const lsta_dataset* test_set, lsta_model** model_out,
                       char** metrics_json_out);
lsta_status lsta_evaluate(const lsta_model* model, const lsta_dataset* test_set,
                          char** metrics_json_out);

lsta_status lsta_model_save(const lsta_model* model, const char* path);
lsta_status lsta_model_load(const char* path, lsta_model** out);
/* Canonical configuration JSON embedded in the model. */
lsta_status lsta_model_config(const lsta_model* model, char** config_json_out);
void lsta_model_free(lsta_model* model);

/* Trains all ladder variants with the shared seed/dataset and writes the
 * comparison artifacts under out_dir. threads <= 0 picks a default. */
lsta_status lsta_ablate(const char* config_json, const lsta_dataset* train_set,
                        const lsta_dataset* test_set, const char* out_dir, int threads,
                        char** summary_json_out);

/* Full-parameter gradient check of one variant at a tiny configuration.
 * Returns LSTA_OK with a report even when tensors fail; *pass_out is 1 only
 * if every tensor is within tolerance. */
lsta_status lsta_gradcheck(const char* variant, uint64_t seed, char** report_json_out,
                           int* pass_out);

/* Writes one PGM per time step plus attention.csv for the given test sample. */
lsta_status lsta_export_attention(const lsta_model* model, const lsta_dataset* ds,
                                  int64_t sample_index, const char* out_dir);

void lsta_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* LSTA_H */
