#ifndef RADA_H
#define RADA_H

/* C interface to the trainable local-feature toolkit: model lifecycle,
 * feature extraction, mutual-nearest-neighbor matching, matching-accuracy
 * evaluation, match visualization, synthetic pair generation, and training.
 *
 * Every function returning rada_status reports failure through the code and
 * leaves a human-readable message in rada_last_error() (thread-local).
 * Output handles are written only on RADA_OK and must be released with the
 * matching *_free function. All text is UTF-8; all paths are filesystem
 * paths. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rada_status {
  RADA_OK = 0,
  RADA_ERR_INVALID_ARGUMENT = 1,
  RADA_ERR_IO = 2,
  RADA_ERR_NUMERIC = 3,
  RADA_ERR_STATE = 4,
  RADA_ERR_UNKNOWN = 5
} rada_status;

/* Library version as "major.minor.patch". */
const char* rada_version(void);

/* Message describing this thread's most recent failure; empty string if the
 * last call succeeded. The pointer stays valid until the next call on the
 * same thread. */
const char* rada_last_error(void);

/* Optional process-wide allocator tuning that keeps large tensor buffers
 * reusable on the heap. Call once at startup; safe to omit. */
void rada_tune_allocator(void);

/* ---- model ----------------------------------------------------------- */

/* A model handle owns the network parameters, the optimizer state, and an
 * optional training corpus. config_text uses `key = value` lines with the
 * training-configuration keys; pass "" for all defaults. */
typedef struct rada_model rada_model;

rada_status rada_model_create(const char* config_text, rada_model** out);
void rada_model_free(rada_model* model);

/* Checkpoints refuse to load under a different configuration fingerprint
 * unless allow_fingerprint_mismatch is nonzero. */
rada_status rada_model_load_checkpoint(rada_model* model, const char* path,
                                       int allow_fingerprint_mismatch);
rada_status rada_model_save_checkpoint(const rada_model* model,
                                       const char* path);

/* Optimizer updates applied so far. */
rada_status rada_model_step(const rada_model* model, int64_t* out);

/* ---- features --------------------------------------------------------- */

typedef struct rada_features rada_features;

/* Runs detection and description on an image file (PNG or binary PPM),
 * keeping at most top_k keypoints. use_booster selects the descriptors the
 * file-level tools consume: nonzero applies the attention refinement. */
rada_status rada_model_extract(const rada_model* model,
                               const char* image_path, int top_k,
                               int use_booster, rada_features** out);

/* Binary feature-file container (magic "RADA"). */
rada_status rada_features_read(const char* path, rada_features** out);
rada_status rada_features_write(const rada_features* features,
                                const char* path);

int rada_features_count(const rada_features* features);
int rada_features_dim(const rada_features* features);

/* Copies one keypoint. Any output pointer may be NULL to skip that field;
 * descriptor, when given, must hold rada_features_dim() doubles. */
rada_status rada_features_get(const rada_features* features, int index,
                              double* u, double* v, double* score,
                              double* descriptor);
void rada_features_free(rada_features* features);

/* ---- matching --------------------------------------------------------- */

typedef struct rada_matches rada_matches;

/* Mutual nearest neighbors by cosine similarity. test is "none", "ratio"
 * (nearest/second-nearest distance ratio must not exceed the threshold,
 * checked from both sides), or "distance" (descriptor distance cap).
 * Pass threshold <= 0 for the default of the chosen test (0.9 ratio,
 * 0.7 distance). */
rada_status rada_match(const rada_features* a, const rada_features* b,
                       const char* test, double threshold,
                       rada_matches** out);

int rada_matches_count(const rada_matches* matches);
rada_status rada_matches_get(const rada_matches* matches, int index,
                             int* index_a, int* index_b, double* similarity);

/* Text match-file container. */
rada_status rada_matches_read(const char* path, rada_matches** out);
rada_status rada_matches_write(const rada_matches* matches, const char* path);
void rada_matches_free(rada_matches* matches);

/* ---- evaluation ------------------------------------------------------- */

/* Matching accuracy against the ground-truth warp file at pixel thresholds
 * 1..10: accuracy[t-1] is the fraction of matches whose source keypoint
 * warps to within t pixels of its matched keypoint. Matches whose keypoint
 * has no ground truth count as incorrect. num_matches may be NULL. */
rada_status rada_mma(const rada_matches* matches, const rada_features* a,
                     const rada_features* b, const char* warp_path,
                     double accuracy[10], int* num_matches);

/* Side-by-side match plot written as PNG. Lines are green within
 * `threshold` pixels of reprojection error, red beyond it, and blue where
 * the warp gives no ground truth; pass warp_path NULL for all-blue lines.
 * threshold <= 0 selects the default of 5 pixels. */
rada_status rada_visualize(const char* image_a_path, const char* image_b_path,
                           const rada_features* a, const rada_features* b,
                           const rada_matches* matches, const char* warp_path,
                           double threshold, const char* out_path);

/* ---- data ------------------------------------------------------------- */

/* Writes `count` synthetic cross-domain training pairs into out_dir
 * (created if missing): pair_NNNN_a.png, pair_NNNN_b.png, pair_NNNN.warp,
 * plus an index file pairs.txt. crop is the square pair side and must be a
 * positive multiple of 32. Deterministic in (seed, count, crop). */
rada_status rada_synth_dataset(const char* out_dir, int count, uint64_t seed,
                               int crop);

/* ---- training --------------------------------------------------------- */

/* Attaches the training corpus: `pairs` synthetic cross-domain pairs drawn
 * from `seed` at the configured crop size. */
rada_status rada_model_set_corpus_synthetic(rada_model* model, int pairs,
                                            uint64_t seed);

/* Attaches an external corpus from a manifest of posed RGB-D records, one
 * per line: image_path k[9] r[9] t[3] depth_path. */
rada_status rada_model_set_corpus_manifest(rada_model* model,
                                           const char* manifest_path);

rada_status rada_model_corpus_size(const rada_model* model, int* out);

/* Runs optimizer updates over the attached corpus. emit_metrics nonzero
 * prints one line per update and component to stdout:
 * step=<k> name=<loss> value=<v>. */
rada_status rada_model_train(rada_model* model, int64_t updates,
                             int emit_metrics);

/* Mean MMA@3 over the attached corpus with the current parameters. */
rada_status rada_model_corpus_mma3(const rada_model* model, double* out);

/* Domain-classifier accuracy over the attached corpus images. */
rada_status rada_model_corpus_domain_accuracy(const rada_model* model,
                                              double* out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* RADA_H */
