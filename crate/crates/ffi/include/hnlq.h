#ifndef HNLQ_H
#define HNLQ_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum HnlqStatus {
  HNLQ_STATUS_OK = 0,
  HNLQ_STATUS_NULL_POINTER = 1,
  HNLQ_STATUS_INVALID_ARGUMENT = 2,
  HNLQ_STATUS_DIMENSION_MISMATCH = 3,
  HNLQ_STATUS_DIGIT_OUT_OF_RANGE = 4,
  /**
   * Overload persisted through every retry.
   */
  HNLQ_STATUS_UNENCODABLE = 5,
  HNLQ_STATUS_TOO_LARGE = 6,
  HNLQ_STATUS_MISMATCH = 7,
  HNLQ_STATUS_FORMAT = 8,
  HNLQ_STATUS_IO = 9,
  /**
   * The output buffer is too small; the required length was written.
   */
  HNLQ_STATUS_BUFFER_TOO_SMALL = 10,
  HNLQ_STATUS_PANIC = 11,
} HnlqStatus;

/**
 * Lattice ids accepted by [`hnlq_codec_new`].
 */
typedef enum HnlqLattice {
  HNLQ_LATTICE_INTEGER = 0,
  HNLQ_LATTICE_CHECKERBOARD = 1,
  HNLQ_LATTICE_HEXAGONAL = 2,
} HnlqLattice;

/**
 * Dither selection for [`hnlq_pipeline_new`].
 */
typedef enum HnlqDither {
  HNLQ_DITHER_NONE = 0,
  /**
   * The same `dither_ids` for every chunk.
   */
  HNLQ_DITHER_FIXED = 1,
  /**
   * Ids drawn per column and chunk from `dither_seed`.
   */
  HNLQ_DITHER_PER_CHUNK = 2,
} HnlqDither;

typedef struct HnlqCodec HnlqCodec;

typedef struct HnlqLut HnlqLut;

typedef struct HnlqMatrix HnlqMatrix;

typedef struct HnlqPipeline HnlqPipeline;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL terminated,
 * truncated to `len`) and returns the untruncated byte length.
 */
size_t hnlq_last_error_message(char *buf, size_t len);

/**
 * Codec over `lattice` of dimension `dim` with nesting ratio `q` and `depth` layers.
 */
enum HnlqStatus hnlq_codec_new(enum HnlqLattice lattice,
                               size_t dim,
                               uint32_t q,
                               size_t depth,
                               struct HnlqCodec **out);

void hnlq_codec_free(struct HnlqCodec *codec);

size_t hnlq_codec_dim(const struct HnlqCodec *codec);

size_t hnlq_codec_depth(const struct HnlqCodec *codec);

/**
 * Encodes `x` (length `dim`) into `digits` (length `dim * depth`, layer
 * major) and sets `overload`.
 */
enum HnlqStatus hnlq_codec_encode(const struct HnlqCodec *codec,
                                  const double *x,
                                  size_t x_len,
                                  uint32_t *digits,
                                  size_t digits_len,
                                  bool *overload);

/**
 * Writes the lattice point for `digits` into `out` (length `dim`).
 */
enum HnlqStatus hnlq_codec_decode(const struct HnlqCodec *codec,
                                  const uint32_t *digits,
                                  size_t digits_len,
                                  double *out,
                                  size_t out_len);

/**
 * Encoding with overload avoidance: scale `beta0 * 2^(alpha T)` for the
 * smallest retry count `T`. `dither` may be null or point to `dim` ids.
 */
enum HnlqStatus hnlq_codec_encode_scaled(const struct HnlqCodec *codec,
                                         double beta0,
                                         double alpha,
                                         const double *x,
                                         size_t x_len,
                                         const uint32_t *dither,
                                         uint32_t *digits,
                                         size_t digits_len,
                                         uint32_t *retries);

/**
 * Inverse of [`hnlq_codec_encode_scaled`].
 */
enum HnlqStatus hnlq_codec_decode_scaled(const struct HnlqCodec *codec,
                                         double beta0,
                                         double alpha,
                                         const uint32_t *digits,
                                         size_t digits_len,
                                         uint32_t retries,
                                         const uint32_t *dither,
                                         double *out,
                                         size_t out_len);

/**
 * Table of all `q^(2d)` layer inner products for `codec`.
 */
enum HnlqStatus hnlq_lut_build(const struct HnlqCodec *codec, struct HnlqLut **out);

void hnlq_lut_free(struct HnlqLut *lut);

size_t hnlq_lut_len(const struct HnlqLut *lut);

/**
 * Number of table reads since the last reset.
 */
uint64_t hnlq_lut_query_count(const struct HnlqLut *lut);

void hnlq_lut_reset_query_count(const struct HnlqLut *lut);

/**
 * Inner product of two encodings of `len` digits each. `zx` and `zy` are
 * either both null (no dither) or both point to `d` dither ids.
 */
enum HnlqStatus hnlq_lut_inner_product(const struct HnlqLut *lut,
                                       const uint32_t *x,
                                       const uint32_t *y,
                                       size_t len,
                                       const uint32_t *zx,
                                       const uint32_t *zy,
                                       double *out);

enum HnlqStatus hnlq_lut_save(const struct HnlqLut *lut, const char *file);

/**
 * Loads a table saved by [`hnlq_lut_save`]; it must match `codec`.
 */
enum HnlqStatus hnlq_lut_load(const char *file,
                              const struct HnlqCodec *codec,
                              struct HnlqLut **out);

/**
 * Product-code pipeline for vectors of length `n` (a multiple of the
 * codec dimension). `dither_ids` is read only for [`HnlqDither::Fixed`].
 */
enum HnlqStatus hnlq_pipeline_new(const struct HnlqCodec *codec,
                                  double beta0,
                                  double alpha,
                                  size_t n,
                                  bool rotate,
                                  uint64_t rotation_seed,
                                  enum HnlqDither dither,
                                  const uint32_t *dither_ids,
                                  uint64_t dither_seed,
                                  struct HnlqPipeline **out);

void hnlq_pipeline_free(struct HnlqPipeline *pipeline);

/**
 * Quantizes an `n x cols` column-major matrix.
 */
enum HnlqStatus hnlq_pipeline_quantize(const struct HnlqPipeline *pipeline,
                                       const double *data,
                                       size_t cols,
                                       struct HnlqMatrix **out);

void hnlq_matrix_free(struct HnlqMatrix *matrix);

size_t hnlq_matrix_rows(const struct HnlqMatrix *matrix);

size_t hnlq_matrix_cols(const struct HnlqMatrix *matrix);

/**
 * Writes the approximate `A^T B` into `out` (`a_cols x b_cols`, row major).
 */
enum HnlqStatus hnlq_pipeline_matmul(const struct HnlqPipeline *pipeline,
                                     const struct HnlqLut *lut,
                                     const struct HnlqMatrix *a,
                                     const struct HnlqMatrix *b,
                                     double *out,
                                     size_t out_len);

/**
 * Approximate inner product of column `i` of `a` and column `j` of `b`.
 */
enum HnlqStatus hnlq_pipeline_ip(const struct HnlqPipeline *pipeline,
                                 const struct HnlqLut *lut,
                                 const struct HnlqMatrix *a,
                                 size_t i,
                                 const struct HnlqMatrix *b,
                                 size_t j,
                                 double *out);

/**
 * Serializes `matrix` into `buf`. `written` receives the encoded length;
 * if `buf` is null or shorter, nothing is copied and `BufferTooSmall` is
 * returned.
 */
enum HnlqStatus hnlq_matrix_serialize(const struct HnlqMatrix *matrix,
                                      uint8_t *buf,
                                      size_t buf_len,
                                      size_t *written);

enum HnlqStatus hnlq_matrix_deserialize(const uint8_t *buf, size_t len, struct HnlqMatrix **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HNLQ_H */
