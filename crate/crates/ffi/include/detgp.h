#ifndef DETGP_H
#define DETGP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DetgpStatus {
  DETGP_STATUS_OK = 0,
  DETGP_STATUS_NULL_ARGUMENT = 1,
  DETGP_STATUS_INVALID_ARGUMENT = 2,
  DETGP_STATUS_IO = 3,
  DETGP_STATUS_FORMAT = 4,
  DETGP_STATUS_NUMERIC = 5,
  DETGP_STATUS_GRAPH = 6,
  DETGP_STATUS_BUFFER_TOO_SMALL = 7,
  DETGP_STATUS_PANIC = 8,
} DetgpStatus;

/*
 Opaque model handle.
 */
typedef struct DetgpModel DetgpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Loads a checkpoint directory that includes its graph.

 # Safety
 `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DetgpStatus detgp_model_load(const char *dir, struct DetgpModel **out);

/*
 Writes the model and its current graph to `dir`.

 # Safety
 `model` must come from [`detgp_model_load`]; `dir` must be NUL-terminated.
 */
enum DetgpStatus detgp_model_save(const struct DetgpModel *model, const char *dir);

/*
 Releases a handle. Null is ignored.

 # Safety
 `model` must be null or come from [`detgp_model_load`], and must not be
 used afterwards.
 */
void detgp_model_free(struct DetgpModel *model);

/*
 Number of nodes in the handle's graph, 0 for null.

 # Safety
 `model` must be null or a live handle.
 */
size_t detgp_model_num_nodes(const struct DetgpModel *model);

/*
 Width of one embedding row, 0 for null.

 # Safety
 `model` must be null or a live handle.
 */
size_t detgp_model_embedding_dim(const struct DetgpModel *model);

/*
 Copies all embeddings, row-major, into `out` of capacity `len` doubles.

 # Safety
 `out` must be valid for `len` writes.
 */
enum DetgpStatus detgp_model_embeddings(const struct DetgpModel *model, double *out, size_t len);

/*
 Copies the embedding of node `id` into `out` of capacity `len` doubles.

 # Safety
 `id` must be NUL-terminated and `out` valid for `len` writes.
 */
enum DetgpStatus detgp_model_node_embedding(const struct DetgpModel *model,
                                            const char *id,
                                            double *out,
                                            size_t len);

/*
 Adds node `id` with `text`, linked to `n_neighbors` existing nodes, and
 recomputes every embedding. Parameters are not changed.

 # Safety
 Strings must be NUL-terminated; `neighbors` must hold `n_neighbors`
 string pointers (it may be null when `n_neighbors` is 0).
 */
enum DetgpStatus detgp_model_insert_node(struct DetgpModel *model,
                                         const char *id,
                                         const char *text,
                                         const char *const *neighbors,
                                         size_t n_neighbors);

/*
 Rank AUC of `pos` against `neg` scores, ties counting half.

 # Safety
 `pos`/`neg` must be valid for `n_pos`/`n_neg` reads and `out` for one
 write.
 */
enum DetgpStatus detgp_auc(const double *pos,
                           size_t n_pos,
                           const double *neg,
                           size_t n_neg,
                           double *out);

/*
 Message of the last failure on this thread, or null. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *detgp_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DETGP_H */
