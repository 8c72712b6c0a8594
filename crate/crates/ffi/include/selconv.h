#ifndef SELCONV_H
#define SELCONV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum SelconvStatus {
  SELCONV_STATUS_OK = 0,
  SELCONV_STATUS_NULL_POINTER = 1,
  SELCONV_STATUS_INVALID_ARGUMENT = 2,
  SELCONV_STATUS_DIMENSION_MISMATCH = 3,
  SELCONV_STATUS_INVALID_GRAPH = 4,
  SELCONV_STATUS_NON_FINITE = 5,
  SELCONV_STATUS_MESH = 6,
  SELCONV_STATUS_MODEL = 7,
  SELCONV_STATUS_PARSE = 8,
  SELCONV_STATUS_IO = 9,
  SELCONV_STATUS_BUFFER_TOO_SMALL = 10,
  SELCONV_STATUS_PANIC = 11,
} SelconvStatus;

/**
 * A graph together with its pooling layout.
 */
typedef struct SelconvDomain SelconvDomain;

/**
 * A loaded model.
 */
typedef struct SelconvModel SelconvModel;

/**
 * A model bound to a domain, ready to run.
 */
typedef struct SelconvNetwork SelconvNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *selconv_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *selconv_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SelconvStatus selconv_domain_grid(size_t height, size_t width, struct SelconvDomain **out);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SelconvStatus selconv_domain_panorama(size_t height, size_t width, struct SelconvDomain **out);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum SelconvStatus selconv_domain_cubemap(size_t face_size, struct SelconvDomain **out);

/**
 * Graph over the non-zero entries of a row-major `height x width` mask.
 *
 * # Safety
 * `mask` must point to `height * width` readable bytes and `out` to a
 * handle slot.
 */
enum SelconvStatus selconv_domain_masked(const uint8_t *mask,
                                         size_t height,
                                         size_t width,
                                         struct SelconvDomain **out);

/**
 * Texture-atlas graph of a Wavefront OBJ with uv coordinates.
 *
 * # Safety
 * `obj_path` must be a NUL-terminated string and `out` a handle slot.
 */
enum SelconvStatus selconv_domain_texture(const char *obj_path,
                                          size_t tex_size,
                                          struct SelconvDomain **out);

/**
 * SLIC superpixel graph of an interleaved `height x width x channels` image.
 *
 * # Safety
 * `image` must point to `height * width * channels` floats and `out` to a
 * handle slot.
 */
enum SelconvStatus selconv_domain_superpixels(const float *image,
                                              size_t height,
                                              size_t width,
                                              size_t channels,
                                              size_t count,
                                              double compactness,
                                              size_t knn,
                                              struct SelconvDomain **out);

/**
 * # Safety
 * `domain` must be null or a handle from a `selconv_domain_*` constructor.
 */
void selconv_domain_free(struct SelconvDomain *domain);

/**
 * # Safety
 * `domain` must be a valid handle.
 */
size_t selconv_domain_node_count(const struct SelconvDomain *domain);

/**
 * # Safety
 * `domain` must be a valid handle.
 */
size_t selconv_domain_edge_count(const struct SelconvDomain *domain);

/**
 * Copies the edges, sorted by source then destination, into three arrays
 * of `capacity` entries. Selections are 0 (self) to 8.
 *
 * # Safety
 * `domain` must be a valid handle and each array must hold `capacity`
 * elements.
 */
enum SelconvStatus selconv_domain_edges(const struct SelconvDomain *domain,
                                        size_t *src,
                                        size_t *dst,
                                        uint8_t *selection,
                                        size_t capacity);

/**
 * Loads a model directory holding `manifest.json` and `weights.bin`.
 *
 * # Safety
 * `dir` must be a NUL-terminated string and `out` a handle slot.
 */
enum SelconvStatus selconv_model_load(const char *dir, struct SelconvModel **out);

/**
 * # Safety
 * `model` must be a valid handle.
 */
size_t selconv_model_input_channels(const struct SelconvModel *model);

/**
 * # Safety
 * `model` must be null or a handle from [`selconv_model_load`].
 */
void selconv_model_free(struct SelconvModel *model);

/**
 * Transfers the model's kernels onto the domain's graph. The handles may
 * be freed afterwards.
 *
 * # Safety
 * `model` and `domain` must be valid handles and `out` a handle slot.
 */
enum SelconvStatus selconv_network_new(const struct SelconvModel *model,
                                       const struct SelconvDomain *domain,
                                       struct SelconvNetwork **out);

/**
 * # Safety
 * `network` must be null or a handle from [`selconv_network_new`].
 */
void selconv_network_free(struct SelconvNetwork *network);

/**
 * Runs one input of `rows x cols` row-major node features. Node outputs
 * come back as `out_rows x out_cols`; vector outputs as `1 x len`. When
 * `capacity` is too small, the required shape is still reported and
 * `BufferTooSmall` returned.
 *
 * # Safety
 * `network` must be a valid handle, `input` must hold `rows * cols`
 * floats, `output` must hold `capacity` floats and the shape pointers must
 * be writable.
 */
enum SelconvStatus selconv_network_run(const struct SelconvNetwork *network,
                                       const float *input,
                                       size_t rows,
                                       size_t cols,
                                       float *output,
                                       size_t capacity,
                                       size_t *out_rows,
                                       size_t *out_cols);

/**
 * Runs the built-in comparison against the reference convolution and
 * writes 1 to `passed` when every check is within tolerance.
 *
 * # Safety
 * `passed` must be writable.
 */
enum SelconvStatus selconv_verify(uint64_t seed, size_t trials, int32_t *passed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELCONV_H */
